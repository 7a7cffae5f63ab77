"""Initial trajectories and the control-point spline parametrization."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded

from .kinematics import HardwareSpec, Trajectory, feasibility_report

DEFAULT_DENSITY_EXPONENT = 1.5


# -- natural cubic spline over a uniform parameter -----------------------------

@lru_cache(maxsize=64)
def _second_derivative_map(c: int) -> np.ndarray:
    """Matrix K with ``M = K @ P``: knot second derivatives of the natural spline."""
    K = np.zeros((c, c))
    if c < 3:
        return K
    inner = c - 2
    ab = np.zeros((3, inner))
    ab[0, 1:] = 1.0
    ab[1, :] = 4.0
    ab[2, :-1] = 1.0
    rhs = np.zeros((inner, c))
    idx = np.arange(inner)
    rhs[idx, idx] = 6.0
    rhs[idx, idx + 1] = -12.0
    rhs[idx, idx + 2] = 6.0
    K[1:-1] = solve_banded((1, 1), ab, rhs)
    return K


def _basis(c: int, t: np.ndarray) -> np.ndarray:
    """Rows map control points to spline values at parameters ``t`` in [0, c - 1]."""
    t = np.asarray(t, dtype=np.float64)
    seg = np.clip(np.floor(t).astype(int), 0, c - 2)
    s = t - seg
    rows = np.arange(t.size)
    lin = np.zeros((t.size, c))
    cub = np.zeros((t.size, c))
    lin[rows, seg] = 1.0 - s
    lin[rows, seg + 1] = s
    cub[rows, seg] = ((1.0 - s) ** 3 - (1.0 - s)) / 6.0
    cub[rows, seg + 1] = (s**3 - s) / 6.0
    return lin + cub @ _second_derivative_map(c)


@lru_cache(maxsize=64)
def spline_matrix(c: int, m: int) -> np.ndarray:
    """``(m, c)`` linear map from control points to ``m`` uniformly spaced curve samples."""
    if c < 2:
        raise ValueError("spline needs at least 2 control points")
    if m < 1:
        raise ValueError("m must be >= 1")
    t = np.linspace(0.0, c - 1.0, m) if m > 1 else np.zeros(1)
    A = _basis(c, t)
    A.flags.writeable = False
    return A


@dataclass(frozen=True, eq=False)
class SplineCurve:
    """Natural cubic spline through ``control_points`` at parameters 0, 1, ..., c - 1."""

    control_points: np.ndarray

    def __post_init__(self):
        p = np.array(self.control_points, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 2:
            raise ValueError("spline needs at least 2 control points of shape (c, d)")
        p.flags.writeable = False
        object.__setattr__(self, "control_points", p)

    @property
    def second_derivatives(self) -> np.ndarray:
        return _second_derivative_map(len(self.control_points)) @ self.control_points

    @property
    def coefficients(self) -> np.ndarray:
        """Per-segment ``(a, b, c, d)`` with ``x(s) = a + b s + c s^2 + d s^3``, shape (c-1, 4, dim)."""
        p, M = self.control_points, self.second_derivatives
        a = p[:-1]
        b = p[1:] - p[:-1] - (2.0 * M[:-1] + M[1:]) / 6.0
        cc = M[:-1] / 2.0
        d = (M[1:] - M[:-1]) / 6.0
        return np.stack([a, b, cc, d], axis=1)

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        return _basis(len(self.control_points), t) @ self.control_points


def spline_resample(control_points, m: int) -> np.ndarray:
    """Evaluate the natural spline through the control points at ``m`` uniform parameters.

    Accepts ``(c, 2)`` or batched ``(shots, c, 2)`` control points.
    """
    p = np.asarray(control_points, dtype=np.float64)
    if p.shape[-2] < 2:
        raise ValueError("spline needs at least 2 control points")
    return np.matmul(spline_matrix(p.shape[-2], m), p)


def spline_resample_grad(control_points, m: int, upstream) -> np.ndarray:
    """Pull a gradient w.r.t. the resampled points back onto the control points."""
    p = np.asarray(control_points)
    A = spline_matrix(p.shape[-2], m)
    return np.matmul(A.T, np.asarray(upstream, dtype=np.float64))


# -- speed-limited traversal of an analytic curve ------------------------------

def _traverse(curve, m: int, v_max: float, a_max: float, fine: int):
    """Sample ``curve(tau)``, tau in [0, 1], at m points under speed/acceleration caps.

    Builds the time-optimal speed profile on a fine arc-length grid (curvature
    limit, then forward and backward tangential-acceleration passes), then samples
    it at unit time steps.  If the whole curve takes fewer than m - 1 steps the
    clock is slowed uniformly, which only lowers velocities and accelerations.
    Returns ``(points, complete)``.
    """
    tau = np.linspace(0.0, 1.0, fine)
    pts = curve(tau)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    length = s[-1]
    if length == 0:
        return np.repeat(pts[:1], m, axis=0), True
    d1 = np.gradient(pts, s, axis=0)
    d2 = np.gradient(d1, s, axis=0)
    kappa = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / np.maximum(
        np.linalg.norm(d1, axis=1) ** 3, 1e-300
    )
    v = np.minimum(v_max, np.sqrt(a_max / np.maximum(kappa, 1e-300)))

    def tangential(vel, k):
        return np.sqrt(np.maximum(a_max**2 - (vel**2 * k) ** 2, 0.0))

    for i in range(1, fine):
        reach = math.sqrt(v[i - 1] ** 2 + 2.0 * tangential(v[i - 1], kappa[i - 1]) * seg[i - 1])
        v[i] = min(v[i], reach)
    for i in range(fine - 2, -1, -1):
        reach = math.sqrt(v[i + 1] ** 2 + 2.0 * tangential(v[i + 1], kappa[i + 1]) * seg[i])
        v[i] = min(v[i], reach)
    v = np.maximum(v, 1e-9 * v_max)
    t = np.concatenate([[0.0], np.cumsum(2.0 * seg / (v[1:] + v[:-1]))])
    total = t[-1]
    complete = total <= m - 1
    times = np.linspace(0.0, total, m) if complete else np.arange(m, dtype=np.float64)
    tau_s = np.interp(np.interp(times, t, s), s, tau)
    return curve(tau_s), complete


def _feasible_traversal(curve, m, spec: HardwareSpec, fine: int | None = None):
    fine = fine or max(20 * m, 20000)
    margin = 0.95
    for _ in range(30):
        pts, complete = _traverse(curve, m, margin * spec.v_max_grid, margin * spec.a_max_grid, fine)
        if feasibility_report(pts[None], spec, 0.0).feasible:
            return pts, complete
        margin *= 0.9
    raise RuntimeError("could not build a feasible traversal")


def default_spiral_turns(n: int, n_shots: int, m: int) -> float:
    """Revolutions per shot: Nyquist spacing at DR=1 scaled down by the sample budget.

    At full sampling (m = n^2 / shots) interleaved revolutions are one grid unit
    apart, i.e. n / (2 shots) turns; fewer samples thin the spiral in proportion,
    giving m / (2 n), clipped to [1, n / (2 shots)].
    """
    return float(np.clip(m / (2.0 * n), 1.0, max(1.0, n / (2.0 * n_shots))))


def spiral(
    spec: HardwareSpec,
    n_shots: int,
    m: int,
    density_exponent: float = DEFAULT_DENSITY_EXPONENT,
    turns: float | None = None,
) -> Trajectory:
    """Variable-density interleaved spiral, ``r = (n/2) tau^p`` with ``theta = 2 pi turns tau``."""
    if m < 3:
        raise ValueError("spiral needs m >= 3")
    n = spec.n
    if turns is None:
        turns = default_spiral_turns(n, n_shots, m)
    radius = n / 2

    def curve(tau):
        r = radius * tau**density_exponent
        th = 2.0 * np.pi * turns * tau
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    base, complete = _feasible_traversal(curve, m, spec)
    shots = []
    for s in range(n_shots):
        a = 2.0 * np.pi * s / n_shots
        rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        shots.append(base @ rot.T)
    return Trajectory.from_points(
        np.stack(shots),
        spec,
        kind="spiral",
        coverage_complete=bool(complete),
        turns=float(turns),
        density_exponent=float(density_exponent),
    )


def _line(spec: HardwareSpec, m: int, half: float):
    """Uniform samples on [-half, half], shortened symmetrically if the speed cap binds."""
    if m < 2:
        raise ValueError("line shots need m >= 2")
    step = 2.0 * half / (m - 1)
    complete = step <= spec.v_max_grid
    if not complete:
        half = spec.v_max_grid * (m - 1) / 2.0
    return np.linspace(-half, half, m), complete


def radial(spec: HardwareSpec, n_shots: int, m: int) -> Trajectory:
    """Diameters through the origin at angles ``pi s / n_shots``."""
    r, complete = _line(spec, m, spec.n / 2)
    shots = []
    for s in range(n_shots):
        a = np.pi * s / n_shots
        shots.append(np.stack([r * np.cos(a), r * np.sin(a)], axis=-1))
    return Trajectory.from_points(np.stack(shots), spec, kind="radial", coverage_complete=bool(complete))


def cartesian(spec: HardwareSpec, n_shots: int, m: int) -> Trajectory:
    """Horizontal lines at equispaced ky covering [-n/2, n/2], each read left to right."""
    half = spec.n / 2
    kx, complete = _line(spec, m, half)
    ky = np.linspace(-half, half, n_shots) if n_shots > 1 else np.zeros(1)
    shots = [np.stack([kx, np.full(m, y)], axis=-1) for y in ky]
    return Trajectory.from_points(np.stack(shots), spec, kind="cartesian", coverage_complete=bool(complete))


def gaussian_init(n: int, m: int, seed: int = 0) -> np.ndarray:
    """Unordered cloud of m points, i.i.d. N(0, (n/6)^2) per coordinate, clamped to the grid."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    pts = rng.normal(0.0, n / 6.0, size=(m, 2))
    return np.clip(pts, -n / 2, n / 2)


GENERATORS = {"spiral": spiral, "radial": radial, "cartesian": cartesian}
