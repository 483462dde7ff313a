"""Multi-static response (MSR) matrices, block partitions and limited data.

Row index = incident direction, column index = observation direction, both on
the uniform grid phi_j = 2 pi j / two_m.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .forward import Scatterer, SolverError, WaveContext, directions
from .geometry import BoundaryCurve, shape_from_bytes, shape_to_bytes
from .rng import stream

PHASED = "phased"
PHASELESS = "phaseless"
SUBSAMPLED = "subsampled"
MODES = (PHASED, PHASELESS, SUBSAMPLED)


@dataclass(frozen=True)
class DirectionGrid:
    two_m: int

    def __post_init__(self):
        if self.two_m < 2 or self.two_m % 2:
            raise ValueError("two_m must be a positive even integer")

    @property
    def angles(self) -> np.ndarray:
        return 2 * math.pi * np.arange(self.two_m) / self.two_m

    @property
    def directions(self) -> np.ndarray:
        return directions(self.angles)

    def negate(self, j):
        """Index of -d_j."""
        return (np.asarray(j) + self.two_m // 2) % self.two_m


@dataclass(frozen=True, eq=False)
class MsrMatrix:
    entries: np.ndarray
    grid: DirectionGrid
    k: float

    def __post_init__(self):
        e = np.array(self.entries, dtype=complex)
        if e.shape != (self.grid.two_m, self.grid.two_m):
            raise ValueError(f"expected {self.grid.two_m}x{self.grid.two_m} entries, got {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValueError("MSR matrix has non-finite entries")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def two_m(self) -> int:
        return self.grid.two_m

    def reciprocity_residual(self) -> float:
        """max |F[i,j] - F[j+m, i+m]| / max |F|."""
        F = self.entries
        sh = self.grid.negate(np.arange(self.two_m))
        swapped = F[np.ix_(sh, sh)].T
        return float(np.abs(F - swapped).max() / np.abs(F).max())


def assemble_msr(curve: BoundaryCurve, ctx: WaveContext, grid: DirectionGrid) -> MsrMatrix:
    d = grid.directions
    F = Scatterer(curve, ctx).far_field_matrix(d, d)
    if not np.all(np.isfinite(F)):
        raise SolverError("non-finite MSR entry")
    return MsrMatrix(F, grid, ctx.k)


@dataclass(frozen=True)
class BlockPartition:
    two_m: int
    m1: int

    def __post_init__(self):
        if not 0 < self.m1 < self.two_m:
            raise ValueError(f"m1 must satisfy 0 < m1 < two_m, got m1={self.m1}, two_m={self.two_m}")

    @property
    def m2(self) -> int:
        return self.two_m - self.m1

    def blocks(self, F):
        m1 = self.m1
        return F[:m1, :m1], F[:m1, m1:], F[m1:, :m1], F[m1:, m1:]


def _entries(F) -> np.ndarray:
    return F.entries if isinstance(F, MsrMatrix) else np.asarray(F)


def partition(F, m1: int):
    """Return (F11, F12, F21, F22) as copies."""
    E = _entries(F)
    part = BlockPartition(E.shape[0], m1)
    return tuple(b.copy() for b in part.blocks(E))


def reassemble(F11, F12, F21, F22) -> np.ndarray:
    return np.block([[F11, F12], [F21, F22]])


@dataclass(frozen=True, eq=False)
class LimitedInput:
    mode: str
    payload: np.ndarray
    two_m: int
    m1: int
    rows: tuple[int, ...] = ()
    cols: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == PHASELESS and np.any(np.asarray(self.payload) < 0):
            raise ValueError("phaseless payload must be non-negative")

    @property
    def channels(self) -> np.ndarray:
        """Network input of shape (h, w, c): Re/Im channels, or the modulus alone."""
        P = self.payload
        if self.mode == PHASELESS:
            return np.asarray(P, dtype=float)[..., None]
        return np.stack([P.real, P.imag], axis=-1)


def subsample_indices(m1: int, m2: int, p: int, seed: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if not 0 < p <= min(m1, m2):
        raise ValueError(f"subsample_p must lie in 1..{min(m1, m2)}, got {p}")
    gen = stream(seed)
    rows = np.sort(gen.choice(m1, size=p, replace=False))
    cols = np.sort(gen.choice(m2, size=p, replace=False))
    return tuple(int(i) for i in rows), tuple(int(j) for j in cols)


def make_limited_input(
    F,
    m1: int,
    mode: str = PHASED,
    subsample_p: int | None = None,
    seed: int = 0,
    indices: tuple[tuple[int, ...], tuple[int, ...]] | None = None,
) -> LimitedInput:
    """Extract the measured upper-right block F12 in the requested form.

    For the subsampled mode, ``indices`` fixes the row/column choice; without it
    the choice is drawn from ``seed``.
    """
    E = _entries(F)
    two_m = E.shape[0]
    F12 = partition(E, m1)[1]
    if mode == PHASED:
        return LimitedInput(PHASED, F12, two_m, m1)
    if mode == PHASELESS:
        return LimitedInput(PHASELESS, np.abs(F12), two_m, m1)
    if mode != SUBSAMPLED:
        raise ValueError(f"unknown mode {mode!r}")
    if indices is None:
        if subsample_p is None:
            raise ValueError("subsampled mode needs subsample_p or explicit indices")
        indices = subsample_indices(F12.shape[0], F12.shape[1], subsample_p, seed)
    rows, cols = indices
    sub = F12[np.ix_(rows, cols)]
    return LimitedInput(SUBSAMPLED, sub, two_m, m1, tuple(rows), tuple(cols))


def assemble_retrieved(inp: LimitedInput, F11c, F12c, F21c, F22c) -> np.ndarray:
    """Combine predicted blocks with whatever part of F12 was measured."""
    part = BlockPartition(inp.two_m, inp.m1)
    m1, m2 = part.m1, part.m2
    expected = [(m1, m1), (m1, m2), (m2, m1), (m2, m2)]
    for blk, shape in zip((F11c, F12c, F21c, F22c), expected):
        if np.shape(blk) != shape:
            raise ValueError(f"block shape {np.shape(blk)} does not match {shape}")
    F12 = np.array(F12c, dtype=complex)
    if inp.mode == PHASED:
        F12 = np.array(inp.payload, dtype=complex)
    elif inp.mode == SUBSAMPLED:
        F12[np.ix_(inp.rows, inp.cols)] = inp.payload
    return reassemble(
        np.asarray(F11c, dtype=complex), F12, np.asarray(F21c, dtype=complex), np.asarray(F22c, dtype=complex)
    )


# dataset files, little-endian:
#   header: magic "MSRD", version u32 = 1, k f64, two_m u32, count u64
#   record: shape record, then two_m*two_m*(re, im) f64 row-major

DATASET_MAGIC = b"MSRD"
DATASET_VERSION = 1
_DS_HEADER = struct.Struct("<4sIdIQ")


def dataset_header_size() -> int:
    return _DS_HEADER.size


def write_dataset(path, k: float, two_m: int, records: Iterable[tuple[BoundaryCurve, np.ndarray]]) -> int:
    """Write records to ``path``; return the record count."""
    records = list(records)
    with open(path, "wb") as fh:
        fh.write(_DS_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, float(k), two_m, len(records)))
        for curve, F in records:
            E = np.ascontiguousarray(_entries(F), dtype=np.complex128)
            if E.shape != (two_m, two_m):
                raise ValueError("matrix shape does not match header two_m")
            fh.write(shape_to_bytes(curve))
            fh.write(E.view(np.float64).astype("<f8").tobytes())
    return len(records)


def iter_dataset(path) -> Iterator[tuple[BoundaryCurve, np.ndarray]]:
    buf = Path(path).read_bytes()
    _, two_m, count = read_dataset_header(buf)
    pos = _DS_HEADER.size
    nbytes = two_m * two_m * 16
    for _ in range(count):
        curve, used = shape_from_bytes(buf, pos)
        pos += used
        vals = np.frombuffer(buf, dtype="<f8", count=2 * two_m * two_m, offset=pos)
        pos += nbytes
        yield curve, vals.view(np.complex128).reshape(two_m, two_m).copy()
    if pos != len(buf):
        raise ValueError("trailing bytes after the declared record count")


def read_dataset_header(buf: bytes) -> tuple[float, int, int]:
    if len(buf) < _DS_HEADER.size:
        raise ValueError("file too short for a dataset header")
    magic, version, k, two_m, count = _DS_HEADER.unpack_from(buf, 0)
    if magic != DATASET_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    return k, two_m, count


def read_dataset(path) -> tuple[float, int, list[tuple[BoundaryCurve, np.ndarray]]]:
    buf = Path(path).read_bytes()
    k, two_m, _ = read_dataset_header(buf)
    return k, two_m, list(iter_dataset(path))
