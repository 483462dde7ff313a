"""Obstacle boundary curves.

All curves are closed, counterclockwise, and parametrised over t in [0, 2*pi).
Every evaluation routine is vectorised over ``t``: a scalar gives a length-2
array, an array of shape ``s`` gives shape ``s + (2,)``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .rng import stream

TWO_PI = 2.0 * math.pi

TAG_STAR = 0
TAG_KITE = 1
TAG_ROUND_SQUARE = 2
TAG_SQUARE = 3


class CurveDomainError(ValueError):
    """Raised when a curve quantity is requested where it is undefined."""


def _stack(x, y):
    return np.stack(np.broadcast_arrays(x, y), axis=-1)


class BoundaryCurve:
    """Base class: a closed, regular, counterclockwise parametric curve.

    Subclasses implement ``_point``, ``_d1`` and ``_d2`` for arrays of t.
    ``corners`` lists the parameters where the curve is not smooth.
    """

    center: tuple[float, float] = (0.0, 0.0)
    corners: tuple[float, ...] = ()

    def point(self, t):
        t = np.asarray(t, dtype=float)
        return self._point(t)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        self._check_corner(t)
        return self._d1(t)

    def second_derivative(self, t):
        t = np.asarray(t, dtype=float)
        self._check_corner(t)
        return self._d2(t)

    def normal(self, t):
        """Outward unit normal (y', -x') / |x'|."""
        d = self.derivative(t)
        speed = np.hypot(d[..., 0], d[..., 1])
        if np.any(speed <= 0.0):
            raise CurveDomainError("zero tangent: normal undefined")
        return _stack(d[..., 1] / speed, -d[..., 0] / speed)

    @property
    def is_smooth(self) -> bool:
        return not self.corners

    def _check_corner(self, t):
        if not self.corners:
            return
        tm = np.mod(t, TWO_PI)
        for c in self.corners:
            gap = np.abs(tm - c)
            gap = np.minimum(gap, TWO_PI - gap)
            if np.any(gap < 1e-14):
                raise CurveDomainError(f"curve is not differentiable at corner t={c:.6f}")

    def _point(self, t):  # pragma: no cover - abstract
        raise NotImplementedError

    def _d1(self, t):  # pragma: no cover - abstract
        raise NotImplementedError

    def _d2(self, t):  # pragma: no cover - abstract
        raise NotImplementedError


def _polar(r, r1, r2, t, center, scale=1.0):
    """Point, first and second derivative of center + scale*r(t)(cos t, sin t)."""
    c, s = np.cos(t), np.sin(t)
    p = _stack(center[0] + scale * r * c, center[1] + scale * r * s)
    d1 = scale * _stack(r1 * c - r * s, r1 * s + r * c)
    d2 = scale * _stack(r2 * c - 2 * r1 * s - r * c, r2 * s + 2 * r1 * c - r * s)
    return p, d1, d2


@dataclass(frozen=True)
class StarShape(BoundaryCurve):
    """Star-shaped curve with radius a0*(1 + 1/(2N) sum n^-q (a_n cos nt + b_n sin nt))."""

    a0: float
    coeff_a: tuple[float, ...]
    coeff_b: tuple[float, ...]
    q: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "coeff_a", tuple(float(v) for v in self.coeff_a))
        object.__setattr__(self, "coeff_b", tuple(float(v) for v in self.coeff_b))
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if len(self.coeff_a) != len(self.coeff_b):
            raise ValueError("coeff_a and coeff_b must have equal length")
        if not self.a0 > 0:
            raise ValueError("a0 must be positive")
        if any(abs(v) > 1.0 for v in self.coeff_a + self.coeff_b):
            raise ValueError("Fourier coefficients must lie in [-1, 1]")

    @property
    def N(self) -> int:
        return len(self.coeff_a)

    def _radius_terms(self, t, order):
        t = np.asarray(t, dtype=float)
        N = self.N
        out = np.zeros_like(t)
        if N == 0:
            return out
        for n in range(1, N + 1):
            w = n ** (-self.q)
            a, b = self.coeff_a[n - 1], self.coeff_b[n - 1]
            nt = n * t
            if order == 0:
                out = out + w * (a * np.cos(nt) + b * np.sin(nt))
            elif order == 1:
                out = out + w * n * (-a * np.sin(nt) + b * np.cos(nt))
            else:
                out = out - w * n * n * (a * np.cos(nt) + b * np.sin(nt))
        return out / (2.0 * N)

    def radius(self, t):
        return self.a0 * (1.0 + self._radius_terms(t, 0))

    def _all(self, t):
        r = self.radius(t)
        r1 = self.a0 * self._radius_terms(t, 1)
        r2 = self.a0 * self._radius_terms(t, 2)
        return _polar(r, r1, r2, t, self.center)

    def _point(self, t):
        return self._all(t)[0]

    def _d1(self, t):
        return self._all(t)[1]

    def _d2(self, t):
        return self._all(t)[2]


@dataclass(frozen=True)
class Kite(BoundaryCurve):
    center: tuple[float, float] = (0.0, 0.0)

    def _point(self, t):
        return _stack(
            self.center[0] + np.cos(t) + 0.65 * np.cos(2 * t) - 0.65,
            self.center[1] + 1.5 * np.sin(t),
        )

    def _d1(self, t):
        return _stack(-np.sin(t) - 1.3 * np.sin(2 * t), 1.5 * np.cos(t))

    def _d2(self, t):
        return _stack(-np.cos(t) - 2.6 * np.cos(2 * t), -1.5 * np.sin(t))


@dataclass(frozen=True)
class RoundSquare(BoundaryCurve):
    center: tuple[float, float] = (0.0, 0.0)

    def _point(self, t):
        c, s = np.cos(t), np.sin(t)
        return _stack(self.center[0] + 2.25 * (c**3 + c), self.center[1] + 2.25 * (s**3 + s))

    def _d1(self, t):
        c, s = np.cos(t), np.sin(t)
        return 2.25 * _stack(-3 * c * c * s - s, 3 * s * s * c + c)

    def _d2(self, t):
        c, s = np.cos(t), np.sin(t)
        return 2.25 * _stack(6 * c * s * s - 3 * c**3 - c, 6 * s * c * c - 3 * s**3 - s)


_QUARTER_SIGNS = ((1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0))


@dataclass(frozen=True)
class SquareRadius(BoundaryCurve):
    """Square written as a star curve, r(t) = 1/(+-sin t +- cos t) per quadrant.

    With ``scale=1`` the corners sit at (+-1, 0) and (0, +-1), i.e. at
    t = 0, pi/2, pi, 3pi/2.
    """

    center: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0
    corners: tuple[float, ...] = field(
        default=(0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi), init=False, repr=False
    )

    def _radius(self, t):
        tm = np.mod(t, TWO_PI)
        quarter = np.minimum((tm // (0.5 * math.pi)).astype(int), 3)
        signs = np.array(_QUARTER_SIGNS)
        ss, sc = signs[quarter, 0], signs[quarter, 1]
        g = ss * np.sin(t) + sc * np.cos(t)
        g1 = ss * np.cos(t) - sc * np.sin(t)
        r = 1.0 / g
        r1 = -g1 / g**2
        r2 = 1.0 / g + 2.0 * g1**2 / g**3
        return r, r1, r2

    def _all(self, t):
        r, r1, r2 = self._radius(t)
        return _polar(r, r1, r2, t, self.center, self.scale)

    def _point(self, t):
        return self._all(t)[0]

    def _d1(self, t):
        return self._all(t)[1]

    def _d2(self, t):
        return self._all(t)[2]


def circle(radius: float = 1.0, center=(0.0, 0.0)) -> StarShape:
    return StarShape(a0=radius, coeff_a=(), coeff_b=(), center=center)


# module-level operation names


def radius(shape: StarShape, t):
    return shape.radius(t)


def curve_point(curve: BoundaryCurve, t):
    return curve.point(t)


def curve_derivative(curve: BoundaryCurve, t):
    return curve.derivative(t)


def outward_normal(curve: BoundaryCurve, t):
    return curve.normal(t)


def random_shape(
    rng_seed: int,
    N: int = 5,
    q: float = 0.0,
    a0_range: Sequence[float] = (0.5, 1.5),
    center=(0.0, 0.0),
    *,
    index: int | None = None,
) -> StarShape:
    """Draw a random star shape.

    a_n, b_n ~ U[-1, 1] and a0 ~ U[a0_range]. With ``index`` given, draws
    come from the substream ``(rng_seed, index)``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    lo, hi = float(a0_range[0]), float(a0_range[1])
    if not (0.0 < lo <= hi) or not math.isfinite(hi):
        raise ValueError(f"invalid a0 interval [{lo}, {hi}]")
    gen = stream(rng_seed) if index is None else stream(rng_seed, index)
    coeffs = gen.uniform(-1.0, 1.0, size=2 * N)
    a0 = lo if lo == hi else float(gen.uniform(lo, hi))
    return StarShape(a0=a0, coeff_a=tuple(coeffs[:N]), coeff_b=tuple(coeffs[N:]), q=q, center=center)


# binary shape records, little-endian:
#   tag u8, center 2*f64, a0 f64, q f64, N u32, coeff_a N*f64, coeff_b N*f64

def shape_to_bytes(curve: BoundaryCurve) -> bytes:
    if isinstance(curve, StarShape):
        tag, a0, q, a, b = TAG_STAR, curve.a0, curve.q, curve.coeff_a, curve.coeff_b
    elif isinstance(curve, Kite):
        tag, a0, q, a, b = TAG_KITE, 1.0, 0.0, (), ()
    elif isinstance(curve, RoundSquare):
        tag, a0, q, a, b = TAG_ROUND_SQUARE, 1.0, 0.0, (), ()
    elif isinstance(curve, SquareRadius):
        tag, a0, q, a, b = TAG_SQUARE, curve.scale, 0.0, (), ()
    else:
        raise TypeError(f"cannot serialise {type(curve).__name__}")
    n = len(a)
    head = struct.pack("<Bdddd", tag, curve.center[0], curve.center[1], a0, q) + struct.pack("<I", n)
    return head + struct.pack(f"<{n}d", *a) + struct.pack(f"<{n}d", *b)


def shape_record_size(N: int) -> int:
    return 37 + 16 * N


def shape_from_bytes(buf: bytes, offset: int = 0) -> tuple[BoundaryCurve, int]:
    """Decode one shape record; return ``(curve, bytes_consumed)``."""
    tag, cx, cy, a0, q = struct.unpack_from("<Bdddd", buf, offset)
    (n,) = struct.unpack_from("<I", buf, offset + 33)
    pos = offset + 37
    a = struct.unpack_from(f"<{n}d", buf, pos)
    b = struct.unpack_from(f"<{n}d", buf, pos + 8 * n)
    size = 37 + 16 * n
    center = (cx, cy)
    if tag == TAG_STAR:
        return StarShape(a0=a0, coeff_a=a, coeff_b=b, q=q, center=center), size
    if tag == TAG_KITE:
        return Kite(center=center), size
    if tag == TAG_ROUND_SQUARE:
        return RoundSquare(center=center), size
    if tag == TAG_SQUARE:
        return SquareRadius(center=center, scale=a0), size
    raise ValueError(f"unknown shape tag {tag}")


def centroid(curve: BoundaryCurve, n: int = 4096) -> np.ndarray:
    """Area centroid of the enclosed region (shoelace formula on n boundary samples)."""
    t = TWO_PI * (np.arange(n) + 0.5) / n
    p = curve.point(t)
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)
