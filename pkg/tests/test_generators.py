import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import fd_grad
from pilot.generators import (
    SplineCurve, cartesian, default_spiral_turns, gaussian_init, radial, spiral, spline_matrix,
    spline_resample, spline_resample_grad,
)
from pilot.kinematics import HardwareSpec, feasibility_report


@pytest.fixture(scope="module")
def spiral_1shot():
    return spiral(HardwareSpec(n=64), 1, 3000)


def test_spiral_feasible(spiral_1shot):
    assert feasibility_report(spiral_1shot, HardwareSpec(n=64), 1e-6).feasible
    assert spiral_1shot.meta["coverage_complete"]


def test_spiral_radius_monotone():
    t = spiral(HardwareSpec(n=64), 1, 2000, density_exponent=1.0, turns=1.0)
    r = np.linalg.norm(t.coords[0], axis=1)
    assert r[0] == pytest.approx(0, abs=1e-12)
    assert r[-1] == pytest.approx(32, rel=1e-9)
    assert np.all(np.diff(r) >= -1e-12)


def test_spiral_two_shots_rotated():
    t = spiral(HardwareSpec(n=32), 2, 400)
    assert np.allclose(t.coords[1], -t.coords[0], atol=1e-12)


def test_spiral_incomplete_coverage_flag():
    t = spiral(HardwareSpec(n=64), 1, 50, turns=8)
    assert not t.meta["coverage_complete"]
    assert feasibility_report(t, HardwareSpec(n=64), 1e-6).feasible


def test_spiral_too_short():
    with pytest.raises(ValueError):
        spiral(HardwareSpec(), 1, 2)


def test_default_turns():
    assert default_spiral_turns(64, 1, 3000) == pytest.approx(3000 / 128)
    assert default_spiral_turns(64, 1, 10**6) == 32
    assert default_spiral_turns(64, 4, 256) == 2
    assert default_spiral_turns(64, 1, 10) == 1


def test_radial_geometry():
    t = radial(HardwareSpec(n=64), 2, 101)
    assert np.allclose(t.coords[0, :, 1], 0)
    assert np.allclose(t.coords[1, :, 0], 0, atol=1e-12)
    assert np.allclose(t.coords[:, 50], 0, atol=1e-12)
    assert np.all(np.linalg.norm(t.coords, axis=-1) <= 32 + 1e-12)


def test_radial_feasible():
    spec = HardwareSpec(n=64)
    assert feasibility_report(radial(spec, 4, 3000), spec, 1e-6).feasible


def test_radial_speed_limited_when_few_samples():
    spec = HardwareSpec(n=64)
    t = radial(spec, 1, 5)
    assert not t.meta["coverage_complete"]
    assert feasibility_report(t, spec, 1e-6).feasible


def test_cartesian_lines():
    spec = HardwareSpec(n=64)
    t = cartesian(spec, 5, 3000)
    ky = t.coords[:, :, 1]
    assert np.allclose(ky, ky[:, :1])
    assert np.allclose(np.diff(ky[:, 0]), 16)
    assert np.all(np.diff(t.coords[:, :, 0], axis=1) > 0)
    assert feasibility_report(t, spec, 1e-6).feasible


def test_generators_deterministic():
    spec = HardwareSpec(n=32)
    for f in (spiral, radial, cartesian):
        assert f(spec, 2, 300) == f(spec, 2, 300)


def test_gaussian_init_std_band():
    n = 320
    for seed in range(3):
        pts = gaussian_init(n, 3000, seed)
        assert n / 6 * 0.93 <= pts[:, 0].std() <= n / 6 * 1.07
        assert np.all(np.abs(pts) <= 160)
    assert np.array_equal(gaussian_init(n, 100, 7), gaussian_init(n, 100, 7))


def test_gaussian_cloud_infeasible():
    spec = HardwareSpec(n=64)
    rep = feasibility_report(gaussian_init(64, 500, 0)[None], spec)
    assert not rep.feasible and rep.max_velocity_violation > 10


def test_spline_straight_line():
    out = spline_resample(np.array([[0.0, 0.0], [10.0, 0.0]]), 5)
    assert np.allclose(out, [[0, 0], [2.5, 0], [5, 0], [7.5, 0], [10, 0]])


def test_spline_requires_two_points():
    with pytest.raises(ValueError):
        spline_resample(np.zeros((1, 2)), 5)


def test_spline_interpolates_knots(rng):
    p = rng.normal(size=(7, 2))
    # m = 6 (c - 1) + 1 puts a sample on every knot
    out = spline_resample(p, 37)
    assert np.allclose(out[::6], p, atol=1e-10)


def test_spline_collinear(rng):
    s = np.sort(rng.uniform(0, 5, 6))
    p = np.stack([s, 2 * s + 1], -1)
    out = spline_resample(p, 50)
    assert np.allclose(out[:, 1], 2 * out[:, 0] + 1, atol=1e-10)


def test_spline_curve_natural_and_smooth(rng):
    p = rng.normal(size=(6, 2))
    curve = SplineCurve(p)
    M = curve.second_derivatives
    assert np.allclose(M[[0, -1]], 0)
    coef = curve.coefficients
    # continuity of value, slope and curvature at interior knots
    a, b, c, d = (coef[:, i] for i in range(4))
    assert np.allclose(a[:-1] + b[:-1] + c[:-1] + d[:-1], a[1:])
    assert np.allclose(b[:-1] + 2 * c[:-1] + 3 * d[:-1], b[1:])
    assert np.allclose(2 * c[:-1] + 6 * d[:-1], 2 * c[1:])
    assert np.allclose(curve(np.arange(6.0)), p)
    assert np.allclose(curve(np.linspace(0, 5, 40)), spline_resample(p, 40))


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, (5, 2), elements=st.floats(-10, 10)),
    arrays(np.float64, (5, 2), elements=st.floats(-10, 10)),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_spline_linear(P, Q, a, b):
    lhs = spline_resample(a * P + b * Q, 23)
    rhs = a * spline_resample(P, 23) + b * spline_resample(Q, 23)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_spline_grad_identity_endpoint():
    p = np.array([[0.0, 0.0], [4.0, 1.0]])
    up = np.zeros((9, 2))
    up[-1] = [1.0, 0.0]
    g = spline_resample_grad(p, 9, up)
    assert np.allclose(g, [[0, 0], [1, 0]])


def test_spline_grad_fd(rng):
    p = rng.normal(size=(6, 2))
    up = rng.normal(size=(40, 2))
    g = spline_resample_grad(p, 40, up)
    num = fd_grad(lambda x: float(np.sum(up * spline_resample(x, 40))), p, 1e-5, range(p.size))
    assert np.allclose(g.ravel(), num, rtol=1e-8, atol=1e-10)
    assert np.all(spline_resample_grad(p, 40, np.zeros((40, 2))) == 0)


def test_spline_matrix_rows_sum_to_one():
    A = spline_matrix(9, 50)
    assert np.allclose(A.sum(axis=1), 1)
