"""Direct sampling indicator over a rectangular grid of sampling points."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .forward import directions


@dataclass(frozen=True)
class ImagingGrid:
    x_range: tuple[float, float] = (-4.0, 4.0)
    y_range: tuple[float, float] = (-4.0, 4.0)
    nx: int = 201
    ny: int = 201

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("imaging grid needs at least 2 points per axis")
        if not (self.x_range[0] < self.x_range[1] and self.y_range[0] < self.y_range[1]):
            raise ValueError("imaging ranges must be nonempty intervals")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(*self.x_range, self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(*self.y_range, self.ny)

    def points(self) -> np.ndarray:
        """All sampling points, shape (ny, nx, 2); row i has y = ys[i]."""
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.stack([X, Y], axis=-1)


@dataclass(frozen=True, eq=False)
class FarFieldDataSet:
    """Far-field values u_inf(obs_j; inc_i) on arbitrary direction lists.

    ``inc_weight`` and ``obs_weight`` are the per-direction quadrature weights;
    for a subset of a uniform grid of 2m directions both equal 2 pi / 2m.
    """

    inc_angles: np.ndarray
    obs_angles: np.ndarray
    values: np.ndarray
    k: float
    inc_weight: float | None = None
    obs_weight: float | None = None

    def __post_init__(self):
        inc = np.atleast_1d(np.asarray(self.inc_angles, dtype=float))
        obs = np.atleast_1d(np.asarray(self.obs_angles, dtype=float))
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != (len(inc), len(obs)):
            raise ValueError(f"values shape {vals.shape} != ({len(inc)}, {len(obs)})")
        if len(inc) == 0 or len(obs) == 0:
            raise ValueError("direction lists must be nonempty")
        object.__setattr__(self, "inc_angles", inc)
        object.__setattr__(self, "obs_angles", obs)
        object.__setattr__(self, "values", vals)
        if self.inc_weight is None:
            object.__setattr__(self, "inc_weight", 2 * math.pi / len(inc))
        if self.obs_weight is None:
            object.__setattr__(self, "obs_weight", 2 * math.pi / len(obs))

    @classmethod
    def from_msr(cls, F, k: float, rows=None, cols=None) -> "FarFieldDataSet":
        """Restrict a full-grid MSR matrix to incident ``rows`` and observation ``cols``."""
        F = np.asarray(getattr(F, "entries", F))
        two_m = F.shape[0]
        ang = 2 * math.pi * np.arange(two_m) / two_m
        rows = np.arange(two_m) if rows is None else np.asarray(rows)
        cols = np.arange(two_m) if cols is None else np.asarray(cols)
        w = 2 * math.pi / two_m
        return cls(ang[rows], ang[cols], F[np.ix_(rows, cols)], k, w, w)


@dataclass(frozen=True, eq=False)
class IndicatorImage:
    values: np.ndarray  # (ny, nx), row i <-> y = grid.ys[i]
    grid: ImagingGrid
    normalized: bool = False

    def argmax_point(self) -> np.ndarray:
        i, j = np.unravel_index(np.argmax(self.values), self.values.shape)
        return np.array([self.grid.xs[j], self.grid.ys[i]])


def indicator_at(data: FarFieldDataSet, z) -> np.ndarray:
    """I(z) for an array of points of shape (..., 2)."""
    z = np.asarray(z, dtype=float)
    flat = z.reshape(-1, 2)
    k = data.k
    obs = directions(data.obs_angles)
    inc = directions(data.inc_angles)
    w2 = data.inc_weight * data.obs_weight
    out = np.empty(len(flat))
    # chunked so that 201x201 grids stay within a few tens of MB
    for lo in range(0, len(flat), 4096):
        zc = flat[lo : lo + 4096]
        A = np.exp(1j * k * (obs @ zc.T))
        B = np.exp(-1j * k * (inc @ zc.T))
        s = w2 * np.sum(B * (data.values @ A), axis=0)
        out[lo : lo + 4096] = np.abs(s) ** 2
    return out.reshape(z.shape[:-1])


def dsm_indicator(data: FarFieldDataSet, grid: ImagingGrid | None = None) -> IndicatorImage:
    grid = grid or ImagingGrid()
    return IndicatorImage(indicator_at(data, grid.points()), grid, normalized=False)


def normalize(image: IndicatorImage) -> IndicatorImage:
    peak = float(np.max(image.values))
    if not peak > 0:
        raise ValueError("cannot normalise an image with no positive entry")
    return IndicatorImage(image.values / peak, image.grid, normalized=True)


def translate_data(data: FarFieldDataSet, d) -> FarFieldDataSet:
    """Far field of the obstacle shifted by ``d``: multiply by e^{ik(theta - xhat).d}."""
    d = np.asarray(d, dtype=float)
    k = data.k
    phase_inc = np.exp(1j * k * (directions(data.inc_angles) @ d))
    phase_obs = np.exp(-1j * k * (directions(data.obs_angles) @ d))
    vals = data.values * phase_inc[:, None] * phase_obs[None, :]
    return FarFieldDataSet(data.inc_angles, data.obs_angles, vals, k, data.inc_weight, data.obs_weight)


def boundary_bands(curve, grid: ImagingGrid, look: np.ndarray, width: float = 0.15, n_samples: int = 4096):
    """Masks of grid points within ``width`` of the boundary, split by the
    sign of nu . look at the nearest boundary sample (lit side first)."""
    t = 2 * math.pi * (np.arange(n_samples) + 0.5) / n_samples
    bp = curve.point(t)
    nu = curve.normal(t)
    pts = grid.points().reshape(-1, 2)
    near = np.empty(len(pts), dtype=int)
    dist = np.empty(len(pts))
    for lo in range(0, len(pts), 2048):
        d = pts[lo : lo + 2048, None, :] - bp[None, :, :]
        dd = np.hypot(d[..., 0], d[..., 1])
        near[lo : lo + 2048] = np.argmin(dd, axis=1)
        dist[lo : lo + 2048] = dd[np.arange(len(dd)), near[lo : lo + 2048]]
    facing = nu[near] @ np.asarray(look, dtype=float)
    band = dist <= width
    shape = (grid.ny, grid.nx)
    return (band & (facing > 0)).reshape(shape), (band & (facing < 0)).reshape(shape)


# image files

def write_pgm(image: IndicatorImage, path) -> None:
    """16-bit binary PGM, max-normalised, top row = largest y."""
    vals = image.values / np.max(image.values) if np.max(image.values) > 0 else image.values
    pix = np.round(np.clip(vals, 0, 1) * 65535).astype(">u2")[::-1]
    ny, nx = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n65535\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = open(path, "rb").read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    nx, ny = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(parts[3], dtype=dtype).reshape(ny, nx)


def write_csv(image: IndicatorImage, path) -> None:
    pts = image.grid.points().reshape(-1, 2)
    table = np.column_stack([pts, image.values.reshape(-1)])
    np.savetxt(path, table, delimiter=",", header="x,y,I", comments="", fmt="%.10g")
