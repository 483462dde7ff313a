"""The retrieval CNN: five (conv -> batchnorm -> PReLU) blocks and a dense head."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..rng import stream
from .layers import BatchNorm, Conv2D, Dense, Layer, PReLU
from .losses import loss_l1, loss_l2
from .optim import AdamState, adam_step

PAPER_CHANNELS = (128, 64, 128, 64, 1)
PAPER_KERNELS = (3, 2, 4, 5, 4)
DESK_CHANNELS = (16, 8, 16, 8, 1)


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, int, int]  # (h, w, c)
    two_m: int
    channels: tuple[int, ...] = PAPER_CHANNELS
    kernels: tuple[int, ...] = PAPER_KERNELS
    prelu_init: float = 0.25
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        if len(self.channels) != len(self.kernels):
            raise ValueError("channels and kernels must have the same length")
        if min(self.input_shape) < 1 or self.two_m < 2:
            raise ValueError("invalid network shapes")

    @classmethod
    def scaled(cls, input_shape, two_m: int, scale: float = 1.0, **kw) -> "NetworkSpec":
        """Paper stack with the first four channel counts multiplied by ``scale``."""
        chans = tuple(max(1, round(c * scale)) for c in PAPER_CHANNELS[:-1]) + (1,)
        return cls(tuple(input_shape), two_m, chans, **kw)

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return (self.two_m, self.two_m, 2)


class Network:
    def __init__(self, spec: NetworkSpec, seed: int = 0):
        self.spec = spec
        h, w, c = spec.input_shape
        self.blocks: list[tuple[Conv2D, BatchNorm, PReLU]] = []
        cin = c
        for i, (cout, k) in enumerate(zip(spec.channels, spec.kernels)):
            conv = Conv2D(k, k, cin, cout, seed=seed, key=i)
            bn = BatchNorm(cout, spec.bn_momentum, spec.bn_eps)
            act = PReLU(cout, spec.prelu_init)
            self.blocks.append((conv, bn, act))
            cin = cout
        self.dense = Dense(h * w * cin, int(np.prod(spec.output_shape)), seed=seed, key=len(spec.channels))

    def named_layers(self) -> list[tuple[str, Layer]]:
        out = []
        for i, (conv, bn, act) in enumerate(self.blocks):
            out += [(f"block{i}.conv", conv), (f"block{i}.bn", bn), (f"block{i}.prelu", act)]
        out.append(("dense", self.dense))
        return out

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": arr for ln, layer in self.named_layers() for pn, arr in layer.params.items()}

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": arr for ln, layer in self.named_layers() for pn, arr in layer.grads.items()}

    @property
    def prelus(self) -> list[PReLU]:
        return [b[2] for b in self.blocks]

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for ln, layer in self.named_layers():
            for pn, arr in {**layer.params, **layer.buffers}.items():
                out[f"{ln}.{pn}"] = arr.copy()
        return out

    def running_stats(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{bn}": arr.copy() for ln, layer in self.named_layers() for bn, arr in layer.buffers.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for ln, layer in self.named_layers():
            for store in (layer.params, layer.buffers):
                for pn in store:
                    src = state[f"{ln}.{pn}"]
                    if src.shape != store[pn].shape:
                        raise ValueError(f"shape mismatch for {ln}.{pn}: {src.shape} vs {store[pn].shape}")
                    store[pn][...] = src

    def forward(self, x, train: bool = True):
        if x.shape[1:] != self.spec.input_shape:
            raise ValueError(f"network expects input {self.spec.input_shape}, got {x.shape[1:]}")
        for conv, bn, act in self.blocks:
            x = act.forward(bn.forward(conv.forward(x, train), train), train)
        self._flat_shape = x.shape
        y = self.dense.forward(x.reshape(x.shape[0], -1), train)
        return y.reshape((x.shape[0],) + self.spec.output_shape)

    def backward(self, gy):
        g = self.dense.backward(gy.reshape(gy.shape[0], -1)).reshape(self._flat_shape)
        for conv, bn, act in reversed(self.blocks):
            g = conv.backward(bn.backward(act.backward(g)))
        return g

    def predict(self, x, batch_size: int = 256):
        outs = [self.forward(x[i : i + batch_size], train=False) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)


LossFn = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]


def make_loss(name: str, m1: int | None = None, alpha: float = 1e-3) -> LossFn:
    if name == "l1":
        return loss_l1
    if name == "l2":
        if m1 is None:
            raise ValueError("loss l2 needs m1")
        return lambda p, t: loss_l2(p, t, m1, alpha)
    raise ValueError(f"unknown loss {name!r}")


class TrainingError(FloatingPointError):
    def __init__(self, msg, last_good_state=None, history=None):
        super().__init__(msg)
        self.last_good_state = last_good_state
        self.history = history or []


@dataclass
class TrainResult:
    history: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")
    optimizer: AdamState | None = None


def dataset_loss(net: Network, X, Y, loss: LossFn, batch_size: int = 128) -> float:
    """Mean train-mode loss over the set; running statistics are left untouched."""
    saved = net.running_stats()
    total, count = 0.0, 0
    for lo in range(0, len(X), batch_size):
        xb, yb = X[lo : lo + batch_size], Y[lo : lo + batch_size]
        if len(xb) < 2:
            continue
        val, _ = loss(net.forward(xb, train=True), yb)
        total += val * len(xb)
        count += len(xb)
    state = net.state_dict()
    state.update(saved)
    net.load_state_dict(state)
    return total / count


def train(
    net: Network,
    X: np.ndarray,
    Y: np.ndarray,
    epochs: int,
    batch_size: int,
    loss: LossFn,
    seed: int = 0,
    optimizer: AdamState | None = None,
    log: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Mini-batch Adam. Batches are reshuffled per epoch from ``(seed, epoch)``.

    A trailing batch of one sample is skipped (batch statistics need two).
    """
    if len(X) == 0 or len(X) != len(Y):
        raise ValueError("training needs a nonempty, aligned set of pairs")
    opt = optimizer or AdamState()
    result = TrainResult(optimizer=opt)
    if epochs <= 0:
        return result
    result.initial_loss = dataset_loss(net, X, Y, loss, batch_size)
    params = net.params
    for epoch in range(epochs):
        order = stream(seed, epoch).permutation(len(X))
        total, count = 0.0, 0
        for lo in range(0, len(X), batch_size):
            idx = order[lo : lo + batch_size]
            if len(idx) < 2:
                continue
            # params are only touched after the step validates, so the running
            # statistics are the only state a failing batch can spoil
            running = net.running_stats()
            pred = net.forward(X[idx], train=True)
            val, g = loss(pred, Y[idx])
            failure = None if np.isfinite(val) else f"non-finite loss at epoch {epoch}"
            if failure is None:
                net.backward(g)
                try:
                    adam_step(params, net.grads, opt)
                except FloatingPointError as exc:
                    failure = str(exc)
            if failure is not None:
                state = net.state_dict()
                state.update(running)
                net.load_state_dict(state)
                raise TrainingError(failure, last_good_state=state, history=result.history)
            total += val * len(idx)
            count += len(idx)
        result.history.append(total / count)
        if log:
            log(epoch, result.history[-1])
    return result


def grad_check(
    module,
    x: np.ndarray,
    loss: Callable[[np.ndarray], tuple[float, np.ndarray]],
    n_coords: int = 200,
    h: float = 1e-6,
    seed: int = 0,
    train: bool = True,
    wrt_input: bool = False,
    floor: float = 1e-8,
) -> float:
    """Max relative error between backprop and central differences.

    ``module`` is a layer or a Network; ``loss`` maps the module output to
    (value, d value / d output). Coordinates whose perturbation flips the sign
    of any PReLU input are skipped, since the derivative does not exist there.

    The rounding error of the difference quotient, bounded by 2 eps |f| / h,
    is subtracted from each discrepancy before it is made relative, so small
    derivatives are not judged on floating-point noise.
    """
    prelus = module.prelus if hasattr(module, "prelus") else ([module] if isinstance(module, PReLU) else [])
    restore = module.state_dict() if hasattr(module, "state_dict") else None
    buffers = {k: v.copy() for k, v in getattr(module, "buffers", {}).items()}

    def reset():
        if restore is not None:
            state = module.state_dict()
            state.update({k: v for k, v in restore.items() if "running" in k})
            module.load_state_dict(state)
        for k, v in buffers.items():
            module.buffers[k] = v.copy()

    def f(inp):
        val = loss(module.forward(inp, train=train))[0]
        masks = [p._cache[1].copy() for p in prelus]
        reset()
        return val, masks

    out = module.forward(x, train=train)
    _, gout = loss(out)
    gx = module.backward(gout)
    base_masks = [p._cache[1].copy() for p in prelus]
    reset()

    targets = [("input", x, gx)] if wrt_input else []
    if not wrt_input:
        grads = module.grads
        targets = [(name, arr, grads[name]) for name, arr in module.params.items()]
    sizes = np.array([t[1].size for t in targets])
    total = int(sizes.sum())
    gen = stream(seed)
    picks = gen.choice(total, size=min(n_coords, total), replace=False)
    worst = 0.0
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for flat in picks:
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        _, arr, grad = targets[which]
        idx = np.unravel_index(flat - offsets[which], arr.shape)
        orig = arr[idx]
        arr[idx] = orig + h
        fp, mp = f(x)
        arr[idx] = orig - h
        fm, mm = f(x)
        arr[idx] = orig
        if any((a != b).any() or (a != c).any() for a, b, c in zip(base_masks, mp, mm)):
            continue
        num = (fp - fm) / (2 * h)
        ana = float(grad[idx])
        noise = 2 * np.finfo(float).eps * max(abs(fp), abs(fm)) / h
        err = max(0.0, abs(num - ana) - noise) / max(abs(num), abs(ana), floor)
        worst = max(worst, err)
    return worst
