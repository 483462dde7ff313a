"""Self-checks of the forward solver and the network engine.

Each check returns a measured error and a tolerance; ``run_all`` gathers them
into a report. ``far_field_scale`` is a negative-control hook: any value other
than 1 corrupts the far-field normalization and must make the asymptotic
check fail.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .forward import Scatterer, WaveContext, circle_series_far_field, directions
from .geometry import Kite, RoundSquare, StarShape, circle
from .msr import DirectionGrid, assemble_msr


@dataclass
class Check:
    name: str
    error: float
    tolerance: float
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: error {self.error:.3e} (tolerance {self.tolerance:.1e}, {self.seconds:.1f}s)"

    def as_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


def _timed(name, tol, fn):
    t = time.perf_counter()
    err = float(fn())
    return Check(name, err, tol, time.perf_counter() - t)


def disk_series_error(radii=(0.5, 1.0, 1.5), ks=(2.0, 5.0, 10.0), n_nodes=128, two_m=32) -> float:
    """Worst relative Frobenius error of the disk MSR matrix against the series."""
    dirs = DirectionGrid(two_m).directions
    worst = 0.0
    for a in radii:
        for k in ks:
            F = assemble_msr(circle(a), WaveContext(k, n_nodes), DirectionGrid(two_m)).entries
            S = circle_series_far_field(a, k, dirs, dirs)
            worst = max(worst, np.linalg.norm(F - S) / np.linalg.norm(S))
    return worst


def _test_shapes():
    """Smooth shapes with node counts that resolve them (the rounded square
    has near-corners of high curvature)."""
    return [
        (Kite(), 128),
        (RoundSquare(), 256),
        (StarShape(1.0, (0.2, -0.1, 0.05), (0.1, 0.15, -0.05)), 128),
    ]


def reciprocity_error(k=5.0, two_m=32) -> float:
    grid = DirectionGrid(two_m)
    return max(assemble_msr(c, WaveContext(k, n), grid).reciprocity_residual() for c, n in _test_shapes())


def _shifted(curve, d):
    return type(curve)(**{**{f: getattr(curve, f) for f in curve.__dataclass_fields__}, "center": tuple(d)})


def translation_errors(k=5.0, two_m=32, d=(0.7, -0.4)):
    """(phase identity error, modulus invariance error), both relative to max |F|."""
    grid = DirectionGrid(two_m)
    dirs = grid.directions
    phase = np.exp(1j * k * (dirs @ np.asarray(d)))[:, None] * np.exp(-1j * k * (dirs @ np.asarray(d)))[None, :]
    worst_phase = worst_mod = 0.0
    for c, n in _test_shapes():
        ctx = WaveContext(k, n)
        F0 = assemble_msr(c, ctx, grid).entries
        Fd = assemble_msr(_shifted(c, d), ctx, grid).entries
        scale = np.abs(F0).max()
        worst_phase = max(worst_phase, np.abs(Fd - F0 * phase).max() / scale)
        worst_mod = max(worst_mod, np.abs(np.abs(Fd) - np.abs(F0)).max() / scale)
    return worst_phase, worst_mod


def asymptotic_residual(r: float, k=5.0, n_nodes=128, n_obs=16, far_field_scale: float = 1.0) -> float:
    """max_j |sqrt(r) e^{-ikr} u^s(r xhat_j) / c - u_inf(xhat_j)| / max |u_inf|,
    c = e^{i pi/4} / sqrt(8 pi k)."""
    sc = Scatterer(Kite(), WaveContext(k, n_nodes))
    ang = 2 * math.pi * np.arange(n_obs) / n_obs
    obs = directions(ang)
    theta = np.array([1.0, 0.0])
    uinf = far_field_scale * sc.far_field_matrix(theta[None, :], obs)[0]
    us = sc.scattered_field(theta, r * obs)
    c = np.exp(1j * math.pi / 4) / math.sqrt(8 * math.pi * k)
    approx = us * math.sqrt(r) * np.exp(-1j * k * r) / c
    return float(np.abs(approx - uinf).max() / np.abs(uinf).max())


def _projection(target):
    """Loss sum(out * target): a random linear functional of the layer output."""
    return lambda out: (float(np.sum(out * target)), target.copy())


def layer_gradient_error(seed=0) -> float:
    from .nn import BatchNorm, Conv2D, Dense, PReLU, grad_check
    from .rng import stream

    gen = stream(seed, 99)
    worst = 0.0
    x = gen.standard_normal((3, 5, 5, 2))
    for k in (2, 3, 4, 5):
        conv = Conv2D(k, k, 2, 3, seed=seed)
        t = _projection(gen.standard_normal((3, 5, 5, 3)))
        worst = max(worst, grad_check(conv, x, t), grad_check(conv, x, t, wrt_input=True))
    bn = BatchNorm(2)
    bn.params["gamma"][...] = gen.uniform(0.5, 1.5, 2)
    bn.params["beta"][...] = gen.standard_normal(2)
    t = _projection(gen.standard_normal(x.shape))
    worst = max(worst, grad_check(bn, x, t), grad_check(bn, x, t, wrt_input=True))
    act = PReLU(2)
    worst = max(worst, grad_check(act, x, t), grad_check(act, x, t, wrt_input=True))
    dense = Dense(6, 4, seed=seed)
    xd = gen.standard_normal((3, 6))
    td = _projection(gen.standard_normal((3, 4)))
    worst = max(worst, grad_check(dense, xd, td), grad_check(dense, xd, td, wrt_input=True))
    return worst


def loss_gradient_error(seed=0, n_coords=200, h=1e-6) -> float:
    """Central differences of both losses with respect to the prediction."""
    from .nn import loss_l1, loss_l2
    from .rng import stream

    gen = stream(seed, 97)
    pred = gen.standard_normal((3, 8, 8, 2))
    target = gen.standard_normal(pred.shape)
    worst = 0.0
    for fn in (loss_l1, lambda p, t: loss_l2(p, t, 4, 0.5)):
        _, g = fn(pred, target)
        for flat in gen.choice(pred.size, size=n_coords, replace=False):
            idx = np.unravel_index(flat, pred.shape)
            p = pred.copy()
            p[idx] += h
            fp = fn(p, target)[0]
            p[idx] -= 2 * h
            fm = fn(p, target)[0]
            num = (fp - fm) / (2 * h)
            worst = max(worst, abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-8))
    return worst


def network_gradient_error(seed=0) -> float:
    from .nn import DESK_CHANNELS, Network, NetworkSpec, grad_check, make_loss
    from .rng import stream

    gen = stream(seed, 98)
    net = Network(NetworkSpec((4, 4, 2), 8, DESK_CHANNELS), seed=seed)
    x = gen.standard_normal((4, 4, 4, 2))
    t = gen.standard_normal((4, 8, 8, 2))
    loss = make_loss("l2", 4, 1e-3)
    fn = lambda out: loss(out, t)  # noqa: E731
    return max(grad_check(net, x, fn, n_coords=150), grad_check(net, x, fn, n_coords=100, wrt_input=True))


def run_all(far_field_scale: float = 1.0, include_gradients: bool = True) -> list[Check]:
    checks = [
        _timed("disk far field vs series", 1e-6, disk_series_error),
        _timed("reciprocity", 1e-8, reciprocity_error),
    ]
    t = time.perf_counter()
    phase, mod = translation_errors()
    dt = time.perf_counter() - t
    checks += [Check("translation phase identity", phase, 1e-8, dt), Check("phaseless translation invariance", mod, 1e-8, 0.0)]
    t = time.perf_counter()
    r100 = asymptotic_residual(100.0, far_field_scale=far_field_scale)
    r200 = asymptotic_residual(200.0, far_field_scale=far_field_scale)
    checks.append(Check("far-field asymptotics, residual(200)/residual(100)", r200 / r100, 0.6, time.perf_counter() - t))
    if include_gradients:
        checks += [
            _timed("layer gradients", 1e-5, layer_gradient_error),
            _timed("loss gradients", 1e-5, loss_gradient_error),
            _timed("network gradients (L2 loss)", 1e-4, network_gradient_error),
        ]
    return checks
