"""Experiment pipeline: datasets, training pairs, CNN retrieval, baselines, metrics."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .forward import SolverError, WaveContext
from .geometry import BoundaryCurve, random_shape
from .msr import (
    MODES,
    PHASED,
    PHASELESS,
    SUBSAMPLED,
    BlockPartition,
    DirectionGrid,
    LimitedInput,
    assemble_msr,
    assemble_retrieved,
    make_limited_input,
    partition,
    read_dataset,
    subsample_indices,
    write_dataset,
)
from .nn import Network, NetworkSpec, make_loss, train
from .nn import checkpoint as ckpt

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShapeParams:
    N: int = 5
    q: float = 0.0
    a0_range: tuple[float, float] = (0.5, 1.5)
    center: tuple[float, float] = (0.0, 0.0)


@dataclass
class Dataset:
    k: float
    two_m: int
    records: list[tuple[BoundaryCurve, np.ndarray]]
    master_seed: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for _, F in self.records:
            if F.shape != (self.two_m, self.two_m):
                raise ValueError("all matrices must be two_m x two_m")

    def __len__(self):
        return len(self.records)

    @property
    def matrices(self) -> np.ndarray:
        return np.stack([F for _, F in self.records])

    @classmethod
    def load(cls, path) -> "Dataset":
        k, two_m, records = read_dataset(path)
        return cls(k, two_m, records)

    def save(self, path) -> None:
        write_dataset(path, self.k, self.two_m, self.records)


class DatasetGenerationError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"forward solve failed for record {index}: {cause}")
        self.index = index


def make_record(index: int, k: float, two_m: int, params: ShapeParams, master_seed: int, n_nodes: int = 128):
    curve = random_shape(master_seed, params.N, params.q, params.a0_range, params.center, index=index)
    F = assemble_msr(curve, WaveContext(k, n_nodes), DirectionGrid(two_m)).entries
    return curve, np.array(F)


def _record_job(args):
    index = args[0]
    try:
        return index, make_record(*args), None
    except (SolverError, ValueError, FloatingPointError) as exc:
        return index, None, exc


def generate_dataset(
    count: int,
    k: float = 5.0,
    two_m: int = 32,
    shape_params: ShapeParams = ShapeParams(),
    master_seed: int = 0,
    workers: int = 1,
    n_nodes: int = 128,
    path=None,
    resume: bool = False,
) -> Dataset:
    """Simulate ``count`` random obstacles; record i depends only on (master_seed, i).

    With ``path`` set, the file is written and a JSON manifest placed next to
    it. If a solve fails, the completed prefix goes to ``<path>.partial`` and
    ``resume=True`` continues from there.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    config = {
        "count": count,
        "k": k,
        "two_m": two_m,
        "shape_params": asdict(shape_params),
        "master_seed": master_seed,
        "n_nodes": n_nodes,
    }
    records: list = []
    partial = Path(str(path) + ".partial") if path is not None else None
    if resume and partial is not None and partial.exists():
        _, _, records = read_dataset(partial)
        log.info("resuming from %d completed records", len(records))
    jobs = [(i, k, two_m, shape_params, master_seed, n_nodes) for i in range(len(records), count)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_record_job, jobs, chunksize=max(1, len(jobs) // (8 * workers)))
            outcome = _collect(results, records)
    else:
        outcome = _collect(map(_record_job, jobs), records)
    if outcome is not None:
        index, exc = outcome
        if partial is not None:
            write_dataset(partial, k, two_m, records)
            _write_manifest(path, {**config, "status": "failed", "failed_index": index, "completed": len(records)})
        raise DatasetGenerationError(index, exc)
    ds = Dataset(k, two_m, records, master_seed, config)
    if path is not None:
        ds.save(path)
        if partial is not None and partial.exists():
            partial.unlink()
        _write_manifest(path, {**config, "status": "complete", "checksum": file_checksum(path)})
    return ds


def _collect(results, records):
    for index, rec, exc in results:
        if exc is not None:
            return index, exc
        records.append(rec)
        if len(records) % 250 == 0:
            log.info("generated %d records", len(records))
    return None


def file_checksum(path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(path, payload):
    Path(str(path) + ".manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True))


# training pairs


@dataclass
class Pairs:
    X: np.ndarray  # (n, h, w, c)
    Y: np.ndarray  # (n, 2m, 2m, 2)
    mode: str
    two_m: int
    m1: int
    rows: tuple[int, ...] = ()
    cols: tuple[int, ...] = ()

    def __len__(self):
        return len(self.X)


def to_channels(F: np.ndarray) -> np.ndarray:
    return np.stack([F.real, F.imag], axis=-1)


def from_channels(T: np.ndarray) -> np.ndarray:
    return T[..., 0] + 1j * T[..., 1]


def make_pairs(
    matrices,
    m1: int,
    mode: str = PHASED,
    subsample_p: int | None = None,
    seed: int = 0,
    indices=None,
) -> Pairs:
    """Network inputs from the F12 block and full-matrix targets.

    In subsampled mode one row/column choice (from ``seed`` unless given) is
    shared by every sample.
    """
    if isinstance(matrices, Dataset):
        matrices = matrices.matrices
    mats = np.asarray(matrices)
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise ValueError("expected a stack of square MSR matrices")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    two_m = mats.shape[1]
    part = BlockPartition(two_m, m1)
    if mode == SUBSAMPLED and indices is None:
        if subsample_p is None:
            raise ValueError("subsampled mode needs subsample_p")
        indices = subsample_indices(part.m1, part.m2, subsample_p, seed)
    inputs = [make_limited_input(F, m1, mode, indices=indices) for F in mats]
    X = np.stack([inp.channels for inp in inputs])
    Y = to_channels(mats)
    rows, cols = indices if indices is not None else ((), ())
    return Pairs(X, Y, mode, two_m, m1, tuple(rows), tuple(cols))


@dataclass(frozen=True)
class SplitSpec:
    """First n1 records train; n2 test records start at ``test_start`` (default n1)."""

    n1: int
    n2: int
    test_start: int | None = None

    def __post_init__(self):
        if self.n1 <= 0 or self.n2 <= 0:
            raise ValueError("n1 and n2 must be positive")

    @property
    def test_slice(self) -> slice:
        start = self.n1 if self.test_start is None else self.test_start
        return slice(start, start + self.n2)

    def check(self, total: int) -> None:
        if self.test_slice.stop > total or self.n1 > total:
            raise ValueError(f"split needs {self.test_slice.stop} records, have {total}")
        if self.test_start is not None and self.test_start < self.n1:
            raise ValueError("test records must not overlap the training records")


@dataclass
class Standardizer:
    """Fixed affine maps around the network: x -> (x - x_mean) / x_scale on the
    way in, z -> y_mean + y_scale * z on the way out. Means are per entry,
    scales are scalars (RMS of the centred training data)."""

    x_mean: np.ndarray
    x_scale: float
    y_mean: np.ndarray
    y_scale: float

    @classmethod
    def fit(cls, X: np.ndarray, Y: np.ndarray) -> "Standardizer":
        xm, ym = X.mean(axis=0), Y.mean(axis=0)
        xs = float(np.sqrt(np.mean((X - xm) ** 2))) or 1.0
        ys = float(np.sqrt(np.mean((Y - ym) ** 2))) or 1.0
        return cls(xm, xs, ym, ys)

    def inputs(self, X):
        return (X - self.x_mean) / self.x_scale

    def outputs(self, Z):
        return self.y_mean + self.y_scale * Z

    def wrap_loss(self, loss):
        """Loss on network outputs, evaluated in raw units."""

        def fn(z, y):
            val, g = loss(self.outputs(z), y)
            return val, self.y_scale * g

        return fn

    def tensors(self) -> dict:
        return {
            "norm.x_mean": self.x_mean,
            "norm.x_scale": np.array([self.x_scale]),
            "norm.y_mean": self.y_mean,
            "norm.y_scale": np.array([self.y_scale]),
        }

    @classmethod
    def from_tensors(cls, t: dict) -> "Standardizer | None":
        if "norm.x_mean" not in t:
            return None
        return cls(t["norm.x_mean"], float(t["norm.x_scale"][0]), t["norm.y_mean"], float(t["norm.y_scale"][0]))


@dataclass
class RetrievalModel:
    network: Network
    mode: str
    two_m: int
    m1: int
    rows: tuple[int, ...] = ()
    cols: tuple[int, ...] = ()
    seed: int = 0
    history: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")
    standardizer: Standardizer | None = None

    def to_checkpoint(self) -> ckpt.Checkpoint:
        tensors = ckpt.network_tensors(self.network)
        tensors["meta.seed"] = np.array([float(self.seed)])
        tensors["meta.loss_history"] = np.array([self.initial_loss] + list(self.history), dtype=float)
        if self.standardizer is not None:
            tensors.update(self.standardizer.tensors())
        return ckpt.Checkpoint(self.mode, self.two_m, self.m1, self.rows, self.cols, tensors)

    def save(self, path) -> None:
        ckpt.save(self.to_checkpoint(), path)

    @classmethod
    def load(cls, path) -> "RetrievalModel":
        ck = ckpt.load(path)
        net = ckpt.network_from_tensors(ck.tensors, ck.two_m)
        hist = list(ck.tensors.get("meta.loss_history", np.array([np.nan])))
        seed = int(ck.tensors.get("meta.seed", np.array([0.0]))[0])
        std = Standardizer.from_tensors(ck.tensors)
        return cls(net, ck.mode, ck.two_m, ck.m1, ck.rows, ck.cols, seed, hist[1:], hist[0], std)

    def predict_blocks(self, X: np.ndarray) -> np.ndarray:
        """Complex (n, 2m, 2m) network predictions for a stack of inputs."""
        if self.standardizer is None:
            return from_channels(self.network.predict(X))
        std = self.standardizer
        return from_channels(std.outputs(self.network.predict(std.inputs(X))))


def fit_model(
    pairs: Pairs,
    split: SplitSpec,
    scale: float = 1 / 8,
    epochs: int = 30,
    batch_size: int = 64,
    loss: str = "l2",
    alpha: float = 1e-3,
    seed: int = 0,
    channels: Sequence[int] | None = None,
    checkpoint_path=None,
    standardize: bool = False,
) -> RetrievalModel:
    """Train on the first n1 pairs. With ``standardize`` the network sees
    centred, unit-RMS inputs and predicts centred, unit-RMS targets; losses
    and the recorded history stay in raw far-field units."""
    split.check(len(pairs))
    input_shape = pairs.X.shape[1:]
    if channels is None:
        spec = NetworkSpec.scaled(input_shape, pairs.two_m, scale)
    else:
        spec = NetworkSpec(tuple(input_shape), pairs.two_m, tuple(channels))
    net = Network(spec, seed=seed)
    Xtr, Ytr = pairs.X[: split.n1], pairs.Y[: split.n1]
    loss_fn = make_loss(loss, pairs.m1, alpha)
    std = None
    if standardize:
        std = Standardizer.fit(Xtr, Ytr)
        Xtr = std.inputs(Xtr)
        loss_fn = std.wrap_loss(loss_fn)
    result = train(
        net,
        Xtr,
        Ytr,
        epochs,
        batch_size,
        loss_fn,
        seed=seed,
        log=lambda e, v: log.info("epoch %d loss %.6g", e, v),
    )
    model = RetrievalModel(
        net, pairs.mode, pairs.two_m, pairs.m1, pairs.rows, pairs.cols, seed, result.history, result.initial_loss, std
    )
    if checkpoint_path is not None:
        model.save(checkpoint_path)
    return model


def _check_mode(model: RetrievalModel, inp: LimitedInput):
    if inp.mode != model.mode:
        raise ValueError(f"input mode {inp.mode!r} does not match model mode {model.mode!r}")
    if inp.two_m != model.two_m or inp.m1 != model.m1:
        raise ValueError("input partition does not match the model")
    if inp.mode == SUBSAMPLED and (inp.rows, inp.cols) != (model.rows, model.cols):
        raise ValueError("subsample indices differ from the ones the model was trained with")


def retrieve(model: RetrievalModel, inp: LimitedInput) -> np.ndarray:
    return retrieve_many(model, [inp])[0]


def retrieve_many(model: RetrievalModel, inputs: Sequence[LimitedInput]) -> np.ndarray:
    for inp in inputs:
        _check_mode(model, inp)
    X = np.stack([inp.channels for inp in inputs])
    P = model.predict_blocks(X)
    return np.stack([assemble_retrieved(inp, *partition(Pn, model.m1)) for inp, Pn in zip(inputs, P)])


def limited_inputs(model: RetrievalModel, matrices) -> list[LimitedInput]:
    idx = (model.rows, model.cols) if model.mode == SUBSAMPLED else None
    return [make_limited_input(F, model.m1, model.mode, indices=idx) for F in matrices]


def nearest_sample(inp: LimitedInput, train_matrices, return_index: bool = False):
    """Full training matrix whose measured block is closest to the input.

    Phased/subsampled inputs compare complex entries; phaseless inputs compare
    moduli. Ties go to the lowest index.
    """
    mats = np.asarray(train_matrices)
    if len(mats) == 0:
        raise ValueError("empty training set")
    m1 = inp.m1
    F12s = mats[:, :m1, m1:]
    if inp.mode == PHASED:
        d = np.sum(np.abs(F12s - inp.payload) ** 2, axis=(1, 2))
    elif inp.mode == PHASELESS:
        d = np.sum((np.abs(F12s) - inp.payload) ** 2, axis=(1, 2))
    else:
        sub = F12s[:, np.asarray(inp.rows)[:, None], np.asarray(inp.cols)[None, :]]
        d = np.sum(np.abs(sub - inp.payload) ** 2, axis=(1, 2))
    best = int(np.argmin(d))
    if return_index:
        return mats[best].copy(), best, float(d[best])
    return mats[best].copy()


# metrics

VARIANTS = ("real", "image", "norm")


def _variant(F, name):
    if name == "real":
        return F.real
    if name == "image":
        return F.imag
    return F


@dataclass
class MetricsReport:
    """Per-sample values ``per_sample[variant][metric]`` and their means.

    Undefined relative errors (zero denominators) are NaN per sample and left
    out of the means; ``undefined`` counts them.
    """

    per_sample: dict
    aggregate: dict
    undefined: dict
    count: int
    psnr_conventional: bool = False

    def to_json(self) -> dict:
        def clean(v):
            return None if not math.isfinite(v) else v

        layout = {
            "relative_error_percent": {
                var: {key: clean(100 * self.aggregate[var][key]) for key in ("e11", "e21", "e22", "e")}
                for var in VARIANTS
            },
            "mse": {var: clean(self.aggregate[var]["mse"]) for var in VARIANTS},
            "psnr": {var: _psnr_json(self.aggregate[var]["psnr"]) for var in VARIANTS},
            "count": self.count,
            "undefined": self.undefined,
            "psnr_formula": "10*log10(max|F|^2/MSE)" if self.psnr_conventional else "10*log10(max|F|/MSE)",
        }
        return layout


def _psnr_json(v):
    if v == math.inf:
        return "inf"
    return None if not math.isfinite(v) else v


def _fro(A):
    return np.sqrt(np.sum(np.abs(A) ** 2, axis=(-2, -1)))


def compute_metrics(true, retrieved, m1: int, psnr_conventional: bool = False) -> MetricsReport:
    T = np.asarray(true)
    R = np.asarray(retrieved)
    if T.ndim == 2:
        T, R = T[None], R[None]
    if T.shape != R.shape:
        raise ValueError(f"shape mismatch {T.shape} vs {R.shape}")
    BlockPartition(T.shape[1], m1)
    per_sample, aggregate, undefined = {}, {}, {}
    with np.errstate(divide="ignore", invalid="ignore"):
        for var in VARIANTS:
            Tv, Rv = _variant(T, var), _variant(R, var)
            D = Tv - Rv
            num = {
                "e11": _fro(D[:, :m1, :m1]),
                "e21": _fro(D[:, m1:, :m1]),
                "e22": _fro(D[:, m1:, m1:]),
            }
            den = {
                "e11": _fro(Tv[:, :m1, :m1]),
                "e21": _fro(Tv[:, m1:, :m1]),
                "e22": _fro(Tv[:, m1:, m1:]),
            }
            vals = {key: np.where(den[key] > 0, num[key] / den[key], np.nan) for key in num}
            num_e = num["e11"] + num["e21"] + num["e22"]
            den_e = den["e11"] + den["e21"] + den["e22"]
            vals["e"] = np.where(den_e > 0, num_e / den_e, np.nan)
            mse = np.mean(np.abs(D) ** 2, axis=(1, 2))
            peak = np.max(np.abs(Tv), axis=(1, 2))
            if psnr_conventional:
                peak = peak**2
            vals["mse"] = mse
            vals["psnr"] = np.where(mse > 0, 10.0 * np.log10(peak / mse), np.inf)
            per_sample[var] = vals
            aggregate[var] = {}
            undefined[var] = {}
            for key, arr in vals.items():
                ok = ~np.isnan(arr)
                undefined[var][key] = int((~ok).sum())
                aggregate[var][key] = float(np.mean(arr[ok])) if ok.any() else float("nan")
    return MetricsReport(per_sample, aggregate, undefined, len(T), psnr_conventional)


def zero_prediction(inputs: Sequence[LimitedInput]) -> np.ndarray:
    """Trivial baseline: all predicted blocks zero, measured entries kept."""
    out = []
    for inp in inputs:
        part = BlockPartition(inp.two_m, inp.m1)
        z = [np.zeros(s, dtype=complex) for s in [(part.m1, part.m1), (part.m1, part.m2), (part.m2, part.m1), (part.m2, part.m2)]]
        out.append(assemble_retrieved(inp, *z))
    return np.stack(out)
