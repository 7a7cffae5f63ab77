import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import fd_grad
from pilot.kinematics import (
    FeasibilityReport, HardwareSpec, Trajectory, accelerations, constraint_penalty, feasibility_report,
    from_waveforms, project_feasible, to_waveforms, velocities,
)


def traj(points, n=64):
    return Trajectory(np.asarray(points, dtype=float)[None], n)


def test_spec_derived_limits(spec):
    assert spec.v_max_grid == pytest.approx(42.576e6 * 40e-3 * 1e-5 * 0.2)
    assert spec.a_max_grid == pytest.approx(42.576e6 * 200 * 1e-10 * 0.2)


@pytest.mark.parametrize("field", ["g_max", "s_max", "dt", "gamma", "fov", "n"])
def test_spec_rejects_nonpositive(field):
    with pytest.raises(ValueError):
        HardwareSpec(**{field: 0})


def test_trajectory_clamps_and_is_immutable():
    t = traj([[0, 0], [40, -50]], n=64)
    assert np.array_equal(t.coords[0, 1], [32, -32])
    with pytest.raises(ValueError):
        t.coords[0, 0, 0] = 1.0


def test_trajectory_rejects_nonfinite_and_empty():
    with pytest.raises(ValueError):
        traj([[0, np.nan], [1, 1]])
    with pytest.raises(ValueError):
        Trajectory(np.zeros((1, 0, 2)), 64)


def test_velocities_straight_line():
    pts = np.arange(6)[:, None] * np.array([3.0, 4.0])
    v = velocities(traj(pts))
    assert np.allclose(v, [3, 4])
    assert np.allclose(np.linalg.norm(v, axis=-1), 5)


def test_velocities_constant_points():
    assert np.all(velocities(traj(np.ones((5, 2)))) == 0)


def test_velocities_and_accelerations_hand_values():
    t = traj([[0, 0], [1, 0], [3, 0]])
    assert np.array_equal(velocities(t)[0], [[1, 0], [2, 0]])
    assert np.array_equal(accelerations(t)[0], [[1, 0]])


def test_accelerations_line_and_parabola():
    assert np.allclose(accelerations(traj(np.linspace(0, 9, 10)[:, None] * [1.0, 2.0])), 0)
    i = np.arange(5.0)
    assert np.allclose(accelerations(traj(np.stack([i**2, 0 * i], -1)))[0], [2, 0])


def test_short_shots_raise():
    with pytest.raises(ValueError, match="shot too short"):
        velocities(traj([[0, 0]]))
    with pytest.raises(ValueError, match="shot too short"):
        accelerations(traj([[0, 0], [1, 1]]))


def test_no_cross_shot_differences():
    t = Trajectory(np.array([[[0, 0], [1, 0]], [[10, 10], [10, 12]]], float), 64)
    assert np.array_equal(velocities(t), [[[1, 0]], [[0, 2]]])


def test_penalty_zero_on_feasible(spec):
    pts = np.linspace(0, 1, 20)[:, None] * [1.0, 1.0]
    p, g = constraint_penalty(traj(pts), spec)
    assert p == 0 and np.all(g == 0)


def test_penalty_single_velocity(spec):
    t = traj([[0, 0], [spec.v_max_grid + 1, 0]])
    p, _ = constraint_penalty(t, spec, lambda_v=0.1, lambda_a=0.0)
    assert p == pytest.approx(0.1, rel=1e-12)


def test_penalty_gradient_fd(spec, rng):
    # large random steps so every hinge argument is far from zero
    k = np.cumsum(rng.normal(0, 6, size=(2, 30, 2)), axis=1)
    k = np.clip(k, -30, 30)

    def f(x):
        return constraint_penalty(x, spec, 0.1, 0.1)[0]

    vel = np.linalg.norm(np.diff(k, axis=1), axis=-1) - spec.v_max_grid
    acc = np.linalg.norm(np.diff(k, 2, axis=1), axis=-1) - spec.a_max_grid
    assume_far = min(np.abs(vel).min(), np.abs(acc).min())
    assert assume_far > 1e-3
    _, g = constraint_penalty(k, spec, 0.1, 0.1)
    idx = rng.choice(k.size, 50, replace=False)
    num = fd_grad(f, k, 1e-4, idx)
    assert np.allclose(g.flat[idx], num, rtol=1e-5, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (1, 8, 2), elements=st.floats(-30, 30)))
def test_penalty_zero_iff_feasible(k):
    spec = HardwareSpec()
    p, _ = constraint_penalty(k, spec)
    rep = feasibility_report(k, spec, 0.0)
    assert (p == 0) == rep.feasible


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 6, 2), elements=st.floats(-20, 20)), st.floats(-5, 5), st.floats(-5, 5))
def test_kinematics_translation_invariant(k, dx, dy):
    shifted = k + np.array([dx, dy])
    assert np.allclose(velocities(k), velocities(shifted), atol=1e-9)
    assert np.allclose(accelerations(k), accelerations(shifted), atol=1e-9)


def test_feasibility_report_counts(spec):
    t = traj([[0, 0], [10, 0], [10, 0], [10, 0]])
    rep = feasibility_report(t, spec)
    assert isinstance(rep, FeasibilityReport)
    assert rep.max_velocity_violation == pytest.approx(10 - spec.v_max_grid)
    assert not rep.feasible
    # one velocity (10) and one acceleration (-10, then 0) exceed the limits
    assert rep.violating_sample_count == 2
    assert feasibility_report(t, spec, tolerance=100).feasible


def test_feasibility_report_empty_errors(spec):
    with pytest.raises(ValueError):
        feasibility_report(np.zeros((1, 0, 2)), spec)


def test_waveform_peak_gradient(spec):
    t = traj([[0, 0], [spec.v_max_grid, 0], [spec.v_max_grid, 0]])
    w = to_waveforms(t, spec)
    assert np.linalg.norm(w.gradient[0, 0]) == pytest.approx(40.0, rel=1e-12)


def test_waveform_unit_velocity(spec):
    w = to_waveforms(traj([[0, 0], [1, 0]]), spec)
    assert w.gradient[0, 0, 0] == pytest.approx(1 / (42.576e6 * 1e-5 * 0.2) * 1e3, rel=1e-12)
    assert w.gradient[0, 0, 0] == pytest.approx(11.744, abs=1e-3)


def test_waveform_zero_velocity(spec):
    w = to_waveforms(traj(np.zeros((4, 2))), spec)
    assert np.all(w.gradient == 0) and np.all(w.slew == 0)


def test_waveform_roundtrip(spec, rng):
    k = rng.uniform(-20, 20, size=(3, 40, 2))
    v, a = from_waveforms(to_waveforms(k, spec), spec)
    assert np.allclose(v, velocities(k), rtol=1e-12, atol=0)
    assert np.allclose(a, accelerations(k), rtol=1e-12, atol=1e-13)


def test_project_feasible(spec, rng):
    k = np.cumsum(rng.normal(0, 1.0, size=(1, 200, 2)), axis=1)
    k *= 8 / np.abs(k).max()
    k[0, ::7] += 2.0  # jumps well beyond the acceleration limit
    t = Trajectory(k, 64)
    assert not feasibility_report(t, spec).feasible
    out = project_feasible(t, spec)
    assert feasibility_report(out, spec, 1e-9).feasible
    assert np.abs(out.coords - t.coords).max() < 5.0
    line = Trajectory(np.linspace(0, 5, 30)[None, :, None] * [1.0, 0.5], 64)
    assert project_feasible(line, spec) == line
