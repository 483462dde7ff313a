import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msrcomplete.geometry import (
    CurveDomainError,
    Kite,
    RoundSquare,
    SquareRadius,
    StarShape,
    centroid,
    circle,
    curve_derivative,
    curve_point,
    outward_normal,
    radius,
    random_shape,
    shape_from_bytes,
    shape_record_size,
    shape_to_bytes,
)


def test_radius_constant_circle():
    c = circle(1.0)
    assert np.allclose(radius(c, np.linspace(0, 6, 7)), 1.0)


def test_radius_single_mode():
    s = StarShape(1.0, (1.0,), (0.0,))
    assert radius(s, 0.0) == pytest.approx(1.5)


def test_radius_all_modes_at_zero():
    s = StarShape(0.5, (1.0,) * 5, (1.0,) * 5)
    assert radius(s, 0.0) == pytest.approx(0.75)


@pytest.mark.parametrize(
    "curve, t, expected",
    [
        (Kite(), 0.0, (1.0, 0.0)),
        (RoundSquare(), math.pi / 2, (0.0, 4.5)),
        (SquareRadius(), math.pi / 4, (0.5, 0.5)),
    ],
)
def test_curve_points(curve, t, expected):
    assert np.allclose(curve_point(curve, t), expected, atol=1e-14)


def test_derivatives_at_zero():
    assert np.allclose(curve_derivative(circle(1.0), 0.0), (0.0, 1.0))
    assert np.allclose(curve_derivative(Kite(), 0.0), (0.0, 1.5))


@pytest.mark.parametrize("curve", [Kite(), RoundSquare(), StarShape(1.0, (0.3, -0.2), (0.1, 0.4), q=0.5)])
def test_derivative_matches_central_difference(curve):
    t, h = 1.234, 1e-6
    fd = (curve_point(curve, t + h) - curve_point(curve, t - h)) / (2 * h)
    d = curve_derivative(curve, t)
    assert np.linalg.norm(fd - d) <= 1e-6 * np.linalg.norm(d)
    fd2 = (curve.derivative(t + h) - curve.derivative(t - h)) / (2 * h)
    assert np.allclose(fd2, curve.second_derivative(t), rtol=1e-5, atol=1e-6)


def test_square_derivative_inside_quarter():
    sq = SquareRadius()
    t, h = 0.4, 1e-6
    fd = (sq.point(t + h) - sq.point(t - h)) / (2 * h)
    assert np.allclose(fd, sq.derivative(t), rtol=1e-7)


def test_square_rejects_corners():
    sq = SquareRadius()
    assert not sq.is_smooth
    with pytest.raises(CurveDomainError):
        sq.derivative(math.pi / 2)


def test_unit_circle_normals():
    c = circle(1.0)
    assert np.allclose(outward_normal(c, 0.0), (1.0, 0.0))
    assert np.allclose(outward_normal(c, math.pi / 2), (0.0, 1.0))


def test_star_normal_points_outward():
    s = StarShape(1.0, (0.5,), (0.0,))
    nu = outward_normal(s, 0.7)
    assert abs(np.linalg.norm(nu) - 1) < 1e-14
    assert nu @ curve_point(s, 0.7) > 0


def test_random_shape_is_seeded():
    a = random_shape(7, N=5, q=0.0, a0_range=(0.5, 1.5))
    b = random_shape(7, N=5, q=0.0, a0_range=(0.5, 1.5))
    assert a == b
    assert random_shape(8) != a


def test_random_shape_degenerate_interval():
    for s in range(20):
        assert random_shape(s, a0_range=(1.0, 1.0)).a0 == 1.0


def test_random_shape_coefficient_mean():
    a1 = np.array([random_shape(3, index=i).coeff_a[0] for i in range(10000)])
    assert abs(a1.mean()) <= 0.03


def test_star_rejects_bad_coefficients():
    with pytest.raises(ValueError):
        StarShape(1.0, (1.5,), (0.0,))
    with pytest.raises(ValueError):
        StarShape(-1.0, (), ())


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    N=st.integers(1, 6),
    q=st.floats(0, 1),
    t=st.floats(0, 2 * math.pi),
)
def test_random_star_radius_positive(seed, N, q, t):
    s = random_shape(seed, N=N, q=q)
    # |a cos nt + b sin nt| <= sqrt(2), so the sum is at most sqrt(2)/2
    assert radius(s, t) >= (1 - math.sqrt(0.5)) * s.a0 - 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), N=st.integers(1, 6), cx=st.floats(-3, 3), cy=st.floats(-3, 3))
def test_shape_bytes_round_trip(seed, N, cx, cy):
    s = random_shape(seed, N=N, center=(cx, cy))
    buf = shape_to_bytes(s)
    assert len(buf) == shape_record_size(N)
    back, used = shape_from_bytes(buf)
    assert used == len(buf)
    assert back == s


@pytest.mark.parametrize("curve", [Kite(), RoundSquare(), SquareRadius(scale=2.0)])
def test_named_shapes_round_trip(curve):
    back, _ = shape_from_bytes(shape_to_bytes(curve))
    assert type(back) is type(curve)
    assert np.allclose(back.point(np.linspace(0.1, 6, 9)), curve.point(np.linspace(0.1, 6, 9)))


def test_centroid():
    assert np.allclose(centroid(circle(1.0, (0.3, -0.2))), (0.3, -0.2))
    assert np.allclose(centroid(SquareRadius()), (0.0, 0.0), atol=1e-12)
    # kite: x = cos t + 0.65 cos 2t - 0.65, symmetric about the x axis
    assert centroid(Kite())[1] == pytest.approx(0.0, abs=1e-12)
