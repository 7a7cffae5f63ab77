"""Trajectory container, discrete kinematics and hardware-constraint penalties.

All k-space coordinates are in grid units: one unit is 1/FOV cycles/m, so the
full Cartesian grid spans [-n/2, n/2] on each axis.  Velocities and
accelerations are kept per sample (grid units / sample, grid units / sample^2);
:class:`HardwareSpec` owns every conversion to physical units.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

GAMMA_1H = 42.576e6  # Hz/T


@dataclass(frozen=True)
class HardwareSpec:
    """Gradient-system limits plus imaging geometry.

    Parameters
    ----------
    g_max : peak gradient amplitude in mT/m.
    s_max : maximum slew rate in T/m/s.
    dt : dwell time in seconds.
    gamma : gyromagnetic ratio in Hz/T.
    fov : field of view in meters.
    n : grid size in pixels per side.
    """

    g_max: float = 40.0
    s_max: float = 200.0
    dt: float = 1e-5
    gamma: float = GAMMA_1H
    fov: float = 0.2
    n: int = 64

    def __post_init__(self):
        for name in ("g_max", "s_max", "dt", "gamma", "fov", "n"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"HardwareSpec.{name} must be finite and > 0, got {value!r}")

    @property
    def grid_per_tesla_meter(self) -> float:
        """Grid units per sample produced by a 1 T/m gradient."""
        return self.gamma * self.dt * self.fov

    @property
    def v_max_grid(self) -> float:
        return self.grid_per_tesla_meter * self.g_max * 1e-3

    @property
    def a_max_grid(self) -> float:
        return self.gamma * self.s_max * self.dt**2 * self.fov

    def with_n(self, n: int) -> "HardwareSpec":
        return HardwareSpec(self.g_max, self.s_max, self.dt, self.gamma, self.fov, int(n))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered k-space samples, ``coords[shot, sample] = (kx, ky)`` in grid units.

    Coordinates are clamped to ``[-n/2, n/2]`` on construction and the stored
    array is read-only.
    """

    coords: np.ndarray
    n: int
    dt: float = 1e-5
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64)
        if coords.ndim == 2:
            coords = coords[None]
        if coords.ndim != 3 or coords.shape[-1] != 2:
            raise ValueError(f"coords must have shape (shots, samples, 2), got {coords.shape}")
        if coords.shape[0] == 0 or coords.shape[1] == 0:
            raise ValueError("empty trajectory")
        if not np.all(np.isfinite(coords)):
            raise ValueError("trajectory coordinates must be finite")
        if self.n <= 0 or self.dt <= 0:
            raise ValueError("n and dt must be positive")
        half = self.n / 2
        np.clip(coords, -half, half, out=coords)
        coords.flags.writeable = False
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "meta", dict(self.meta))

    @classmethod
    def from_points(cls, coords, spec: HardwareSpec, **meta) -> "Trajectory":
        return cls(coords, n=spec.n, dt=spec.dt, meta=meta)

    @property
    def shots(self) -> int:
        return self.coords.shape[0]

    @property
    def samples_per_shot(self) -> int:
        return self.coords.shape[1]

    def replace(self, coords) -> "Trajectory":
        return Trajectory(coords, n=self.n, dt=self.dt, meta=self.meta)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.n == other.n
            and self.dt == other.dt
            and self.coords.shape == other.coords.shape
            and bool(np.array_equal(self.coords, other.coords))
        )

    __hash__ = None


@dataclass(frozen=True)
class FeasibilityReport:
    max_velocity_violation: float
    max_acceleration_violation: float
    violating_sample_count: int
    feasible: bool
    tolerance: float = 0.0

    @property
    def max_violation(self) -> float:
        return max(self.max_velocity_violation, self.max_acceleration_violation)

    def to_dict(self) -> dict:
        return {
            "max_velocity_violation": float(self.max_velocity_violation),
            "max_acceleration_violation": float(self.max_acceleration_violation),
            "violating_sample_count": int(self.violating_sample_count),
            "feasible": bool(self.feasible),
            "tolerance": float(self.tolerance),
        }


def _coords(traj) -> np.ndarray:
    return traj.coords if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)


def velocities(traj) -> np.ndarray:
    """First differences within each shot, shape ``(shots, m - 1, 2)``."""
    k = _coords(traj)
    if k.shape[1] < 2:
        raise ValueError("shot too short: velocities need at least 2 samples")
    return np.diff(k, axis=1)


def accelerations(traj) -> np.ndarray:
    """Second differences within each shot, shape ``(shots, m - 2, 2)``."""
    k = _coords(traj)
    if k.shape[1] < 3:
        raise ValueError("shot too short: accelerations need at least 3 samples")
    return k[:, 2:] - 2.0 * k[:, 1:-1] + k[:, :-2]


def _hinge(vec: np.ndarray, limit: float):
    """Return (sum of hinge excess, d(sum)/d(vec))."""
    norm = np.linalg.norm(vec, axis=-1)
    active = norm > limit
    excess = np.where(active, norm - limit, 0.0)
    # norm > limit > 0 on active entries, so the division is safe
    safe = np.where(active, norm, 1.0)
    dvec = np.where(active[..., None], vec / safe[..., None], 0.0)
    return float(excess.sum()), dvec


def constraint_penalty(traj, spec: HardwareSpec, lambda_v: float = 0.1, lambda_a: float = 0.1):
    """Hinge penalty on velocity and acceleration magnitudes.

    Returns ``(penalty, grad)`` where ``grad`` has the shape of the coordinates.
    The subgradient is taken as 0 at the hinge kink.
    """
    k = _coords(traj)
    grad = np.zeros_like(k)
    penalty = 0.0
    if lambda_v and k.shape[1] >= 2:
        pv, dv = _hinge(np.diff(k, axis=1), spec.v_max_grid)
        penalty += lambda_v * pv
        dv = lambda_v * dv
        grad[:, 1:] += dv
        grad[:, :-1] -= dv
    if lambda_a and k.shape[1] >= 3:
        acc = k[:, 2:] - 2.0 * k[:, 1:-1] + k[:, :-2]
        pa, da = _hinge(acc, spec.a_max_grid)
        penalty += lambda_a * pa
        da = lambda_a * da
        grad[:, 2:] += da
        grad[:, 1:-1] -= 2.0 * da
        grad[:, :-2] += da
    return penalty, grad


def feasibility_report(traj, spec: HardwareSpec, tolerance: float = 0.0) -> FeasibilityReport:
    k = _coords(traj)
    if k.size == 0:
        raise ValueError("empty trajectory")
    vel_exc = np.zeros(0)
    acc_exc = np.zeros(0)
    if k.shape[1] >= 2:
        vel_exc = np.maximum(np.linalg.norm(velocities(k), axis=-1) - spec.v_max_grid, 0.0).ravel()
    if k.shape[1] >= 3:
        acc_exc = np.maximum(np.linalg.norm(accelerations(k), axis=-1) - spec.a_max_grid, 0.0).ravel()
    max_v = float(vel_exc.max(initial=0.0))
    max_a = float(acc_exc.max(initial=0.0))
    count = int(np.count_nonzero(vel_exc > tolerance) + np.count_nonzero(acc_exc > tolerance))
    return FeasibilityReport(
        max_velocity_violation=max_v,
        max_acceleration_violation=max_a,
        violating_sample_count=count,
        feasible=bool(max_v <= tolerance and max_a <= tolerance),
        tolerance=float(tolerance),
    )


@dataclass(frozen=True)
class Waveforms:
    """Gradient (mT/m) and slew-rate (T/m/s) waveforms, one row per shot."""

    gradient: np.ndarray  # (shots, m - 1, 2)
    slew: np.ndarray  # (shots, m - 2, 2)


def to_waveforms(traj, spec: HardwareSpec) -> Waveforms:
    k = _coords(traj)
    # per-sample grid displacement -> T/m, then mT/m
    grad_t = velocities(k) / spec.grid_per_tesla_meter
    if k.shape[1] >= 3:
        slew = accelerations(k) / (spec.grid_per_tesla_meter * spec.dt)
    else:
        slew = np.zeros((k.shape[0], 0, 2))
    return Waveforms(gradient=grad_t * 1e3, slew=slew)


def from_waveforms(wave: Waveforms, spec: HardwareSpec):
    """Inverse unit conversion: ``(velocities, accelerations)`` in grid units."""
    vel = wave.gradient * 1e-3 * spec.grid_per_tesla_meter
    acc = wave.slew * spec.grid_per_tesla_meter * spec.dt
    return vel, acc


def _project_stencil(k, stencil, limit):
    """Exact projection onto ``|sum_j stencil[j] k[i+j]| <= limit`` for non-overlapping windows.

    Windows starting at i, i + w, i + 2w, ... share no samples, so each pass over
    one offset is itself an exact Euclidean projection.
    """
    w = len(stencil)
    c = np.asarray(stencil, dtype=np.float64)
    for off in range(w):
        count = (k.shape[1] - off) // w
        if count == 0:
            continue
        win = k[:, off : off + count * w].reshape(k.shape[0], count, w, 2)
        lin = np.einsum("j,scjd->scd", c, win)
        mag = np.linalg.norm(lin, axis=-1, keepdims=True)
        excess = np.maximum(mag - limit, 0.0)
        corr = lin * (excess / np.maximum(mag, 1e-300)) / (c @ c)
        win -= corr[:, :, None, :] * c[None, None, :, None]
        k[:, off : off + count * w] = win.reshape(k.shape[0], count * w, 2)
    return k


def project_feasible(traj: Trajectory, spec: HardwareSpec, iterations: int = 5000, margin: float = 1e-3) -> Trajectory:
    """Move samples onto the feasible set by cyclic projections.

    Velocity caps, acceleration caps and the grid box are convex sets, so
    alternating exact projections onto each converges to a point satisfying
    all of them.  Targets are shrunk by ``margin`` so the loop ends after a
    finite number of passes.  Intended as an optional strict-export step after
    soft-penalized training.
    """
    k = np.array(traj.coords, dtype=np.float64)
    half = traj.n / 2
    v_lim, a_lim = spec.v_max_grid * (1 - margin), spec.a_max_grid * (1 - margin)
    for _ in range(iterations):
        if feasibility_report(k, spec).feasible:
            break
        if k.shape[1] >= 2:
            k = _project_stencil(k, (-1.0, 1.0), v_lim)
        if k.shape[1] >= 3:
            k = _project_stencil(k, (1.0, -2.0, 1.0), a_lim)
        np.clip(k, -half, half, out=k)
    return traj.replace(k)
