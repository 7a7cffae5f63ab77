"""Synthetic multi-coil phantoms and file formats.

File formats
------------
* trajectory: JSON object ``{"schema_version", "n", "fov", "dt", "gamma",
  "n_shots", "m", "coords"}``; ``coords`` is the row-major flattening of the
  ``(n_shots, m, 2)`` array written with 17 significant digits.
* waveforms: CSV with header ``shot,sample,Gx_mT_per_m,Gy_mT_per_m,Sx_T_per_m_s,Sy_T_per_m_s``.
  Gradient sample ``i`` is ``(k[i+1] - k[i]) / (gamma dt fov)``; the slew
  columns are empty on the last row of each shot, where no second difference
  exists.
* images / arrays: raw little-endian values plus a ``<name>.json`` sidecar with
  shape and dtype.
* report: JSON with metrics and the feasibility summary.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kinematics import GAMMA_1H, HardwareSpec, Trajectory, to_waveforms
from .taskmodel import TaskModelParams, rss

TRAJECTORY_SCHEMA_VERSION = 1
WAVEFORM_COLUMNS = ("shot", "sample", "Gx_mT_per_m", "Gy_mT_per_m", "Sx_T_per_m_s", "Sy_T_per_m_s")


class SchemaError(ValueError):
    """A file does not follow the expected schema."""


# -- phantoms --------------------------------------------------------------------

# intensity, semi-axis a, semi-axis b, x0, y0, angle (deg); modified (Toft) table
SHEPP_LOGAN_ELLIPSES = np.array(
    [
        [1.0, 0.6900, 0.9200, 0.00, 0.0000, 0.0],
        [-0.8, 0.6624, 0.8740, 0.00, -0.0184, 0.0],
        [-0.2, 0.1100, 0.3100, 0.22, 0.0000, -18.0],
        [-0.2, 0.1600, 0.4100, -0.22, 0.0000, 18.0],
        [0.1, 0.2100, 0.2500, 0.00, 0.3500, 0.0],
        [0.1, 0.0460, 0.0460, 0.00, 0.1000, 0.0],
        [0.1, 0.0460, 0.0460, 0.00, -0.1000, 0.0],
        [0.1, 0.0460, 0.0230, -0.08, -0.6050, 0.0],
        [0.1, 0.0230, 0.0230, 0.00, -0.6060, 0.0],
        [0.1, 0.0230, 0.0460, 0.06, -0.6050, 0.0],
    ]
)


def _grid(n: int):
    """Pixel-center coordinates in [-1, 1); pixel n/2 sits exactly at 0."""
    c = (np.arange(n) - n // 2) / (n / 2)
    y, x = np.meshgrid(c, c, indexing="ij")
    return x, y


def phantom_from_ellipses(n: int, ellipses) -> np.ndarray:
    """Sum of uniform ellipses; image rows run along y, columns along x."""
    x, y = _grid(n)
    img = np.zeros((n, n))
    for amp, a, b, x0, y0, ang in np.asarray(ellipses, dtype=np.float64):
        t = np.deg2rad(ang)
        dx, dy = x - x0, y - y0
        xr = dx * np.cos(t) + dy * np.sin(t)
        yr = -dx * np.sin(t) + dy * np.cos(t)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += amp
    return img


def shepp_logan(n: int) -> np.ndarray:
    """Modified 10-ellipse Shepp-Logan phantom with overlapping intensities summed."""
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    # overlapping +1 / -0.8 / -0.2 regions can leave -1e-17 rounding residue
    return np.clip(phantom_from_ellipses(int(n), SHEPP_LOGAN_ELLIPSES), 0.0, 1.0)


def random_phantom(n: int, rng: np.random.Generator, max_rotation=np.pi, max_shift=0.1, jitter=0.1):
    """Shepp-Logan under a random rigid motion with per-ellipse intensity jitter, clipped at 0."""
    e = SHEPP_LOGAN_ELLIPSES.copy()
    rot = rng.uniform(-max_rotation, max_rotation)
    shift = rng.uniform(-max_shift, max_shift, size=2)
    c, s = np.cos(rot), np.sin(rot)
    x0, y0 = e[:, 3].copy(), e[:, 4].copy()
    e[:, 3] = c * x0 - s * y0 + shift[0]
    e[:, 4] = s * x0 + c * y0 + shift[1]
    e[:, 5] += np.rad2deg(rot)
    e[:, 0] *= 1.0 + jitter * rng.standard_normal(len(e))
    return np.maximum(phantom_from_ellipses(n, e), 0.0)


def coil_sensitivities(n: int, l: int, seed: int = 0, width: float = 0.5) -> np.ndarray:
    """``l`` smooth complex coil maps normalized so that ``sum_i |s_i|^2 = 1`` per pixel.

    Magnitudes are Gaussian bumps of standard deviation ``width * n`` pixels
    centred on a circle of radius ``0.6 * n / 2``; each map carries a random
    linear phase.
    """
    if l < 1:
        raise ValueError("need at least one coil")
    rng = np.random.default_rng(seed)
    x, y = _grid(n)
    x, y = x * n / 2, y * n / 2
    radius = 0.6 * n / 2
    maps = np.empty((l, n, n), dtype=np.complex128)
    for i in range(l):
        ang = 2 * np.pi * i / l
        cx, cy = radius * np.cos(ang), radius * np.sin(ang)
        mag = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * (width * n) ** 2))
        slope = rng.uniform(-1.0, 1.0, size=2) * np.pi / n
        phase = rng.uniform(-np.pi, np.pi) + slope[0] * x + slope[1] * y
        maps[i] = mag * np.exp(1j * phase)
    return maps / np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))


def simulate_multichannel(image, sensitivities):
    """Return ``(channels, rss_target)`` with ``channels[i] = image * s_i``."""
    channels = np.asarray(image)[None] * np.asarray(sensitivities)
    return channels, rss(channels, axis=0)


@dataclass
class PhantomDataset:
    """Multi-coil images ``channels (N, l, n, n)`` with RSS targets ``targets (N, n, n)``."""

    channels: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return len(self.targets)

    def __getitem__(self, i):
        return self.channels[i], self.targets[i]

    @property
    def n(self) -> int:
        return self.targets.shape[-1]

    @classmethod
    def from_pairs(cls, pairs) -> "PhantomDataset":
        if isinstance(pairs, cls):
            return pairs
        pairs = list(pairs)
        if not pairs:
            raise ValueError("empty dataset")
        ch = np.stack([np.asarray(c) for c, _ in pairs])
        if ch.ndim == 3:
            ch = ch[:, None]
        return cls(ch, np.stack([np.asarray(t, dtype=np.float64) for _, t in pairs]))


def make_phantom_dataset(n: int, n_train: int, n_val: int, coils: int = 4, seed: int = 0):
    """Seeded train/validation split of randomly posed multi-coil phantoms."""
    rng = np.random.default_rng(seed)
    sens = coil_sensitivities(n, coils, seed)
    sets = []
    for count in (n_train, n_val):
        ch = np.empty((count, coils, n, n), dtype=np.complex128)
        tg = np.empty((count, n, n))
        for i in range(count):
            ch[i], tg[i] = simulate_multichannel(random_phantom(n, rng), sens)
        sets.append(PhantomDataset(ch, tg))
    return sets[0], sets[1]


# -- trajectories -----------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryFile:
    schema_version: int
    n: int
    fov: float
    dt: float
    gamma: float
    coords: np.ndarray

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(self.coords, n=self.n, dt=self.dt)

    def spec(self, g_max: float = 40.0, s_max: float = 200.0) -> HardwareSpec:
        return HardwareSpec(g_max=g_max, s_max=s_max, dt=self.dt, gamma=self.gamma, fov=self.fov, n=self.n)


def _g17(x: float) -> str:
    return format(float(x), ".17g")


def dumps_trajectory(traj: Trajectory, fov: float = 0.2, gamma: float = GAMMA_1H) -> str:
    head = {
        "schema_version": TRAJECTORY_SCHEMA_VERSION,
        "n": int(traj.n),
        "fov": float(fov),
        "dt": float(traj.dt),
        "gamma": float(gamma),
        "n_shots": int(traj.shots),
        "m": int(traj.samples_per_shot),
    }
    body = ", ".join(f'"{k}": {json.dumps(v) if isinstance(v, int) else _g17(v)}' for k, v in head.items())
    coords = ", ".join(_g17(v) for v in traj.coords.ravel())
    return "{" + body + ', "coords": [' + coords + "]}\n"


def save_trajectory(path, traj: Trajectory, spec: HardwareSpec | None = None) -> Path:
    fov = spec.fov if spec is not None else 0.2
    gamma = spec.gamma if spec is not None else GAMMA_1H
    path = Path(path)
    path.write_text(dumps_trajectory(traj, fov, gamma), encoding="utf-8")
    return path


def loads_trajectory(text: str) -> TrajectoryFile:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"trajectory file is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise SchemaError("trajectory file must hold a JSON object")
    version = obj.get("schema_version")
    if version != TRAJECTORY_SCHEMA_VERSION:
        raise SchemaError(f"unsupported trajectory schema_version {version!r}")
    missing = {"n", "fov", "dt", "gamma", "n_shots", "m", "coords"} - obj.keys()
    if missing:
        raise SchemaError(f"trajectory file missing fields: {sorted(missing)}")
    shots, m = int(obj["n_shots"]), int(obj["m"])
    coords = np.asarray(obj["coords"], dtype=np.float64)
    if coords.size != shots * m * 2:
        raise SchemaError(f"expected {shots * m * 2} coordinates, found {coords.size}")
    return TrajectoryFile(
        schema_version=version,
        n=int(obj["n"]),
        fov=float(obj["fov"]),
        dt=float(obj["dt"]),
        gamma=float(obj["gamma"]),
        coords=coords.reshape(shots, m, 2),
    )


def load_trajectory(path) -> TrajectoryFile:
    return loads_trajectory(Path(path).read_text(encoding="utf-8"))


# -- waveforms ---------------------------------------------------------------------

def save_waveforms(path, traj: Trajectory, spec: HardwareSpec) -> Path:
    wave = to_waveforms(traj, spec)
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(WAVEFORM_COLUMNS)
        for s in range(traj.shots):
            g, sl = wave.gradient[s], wave.slew[s]
            for i in range(len(g)):
                row = [s, i, repr(float(g[i, 0])), repr(float(g[i, 1]))]
                row += [repr(float(sl[i, 0])), repr(float(sl[i, 1]))] if i < len(sl) else ["", ""]
                writer.writerow(row)
    return path


def load_waveforms(path):
    """Return ``(gradient, slew)`` arrays of shape (shots, m-1, 2) and (shots, m-2, 2)."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != WAVEFORM_COLUMNS:
            raise SchemaError(f"unexpected waveform columns {header}")
        rows = list(reader)
    shots: dict[int, list] = {}
    for r in rows:
        shots.setdefault(int(r[0]), []).append(r)
    grads, slews = [], []
    for s in sorted(shots):
        rs = shots[s]
        grads.append([[float(r[2]), float(r[3])] for r in rs])
        slews.append([[float(r[4]), float(r[5])] for r in rs if r[4] != ""])
    return np.asarray(grads), np.asarray(slews).reshape(len(grads), -1, 2)


# -- raw arrays ----------------------------------------------------------------------

def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_array(path, array, dtype="<f4", **extra) -> Path:
    """Write raw little-endian values plus a JSON sidecar ``<path>.json``."""
    path = Path(path)
    arr = np.ascontiguousarray(np.asarray(array), dtype=np.dtype(dtype).newbyteorder("<"))
    path.write_bytes(arr.tobytes())
    meta = {"shape": list(arr.shape), "dtype": arr.dtype.str, **extra}
    _sidecar(path).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return path


def load_array(path):
    """Return ``(array, sidecar_dict)``."""
    path = Path(path)
    try:
        meta = json.loads(_sidecar(path).read_text(encoding="utf-8"))
        shape, dtype = tuple(meta["shape"]), np.dtype(meta["dtype"])
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"bad or missing sidecar for {path}: {exc}") from exc
    data = np.frombuffer(path.read_bytes(), dtype=dtype)
    if data.size != math.prod(shape):
        raise SchemaError(f"{path} holds {data.size} values, sidecar says {shape}")
    return data.reshape(shape).copy(), meta


def save_image(path, image) -> Path:
    return save_array(path, np.asarray(image, dtype=np.float64), "<f4")


def load_image(path) -> np.ndarray:
    return load_array(path)[0].astype(np.float64)


def save_model(path, params: TaskModelParams) -> Path:
    """Concatenate every layer (weights, then bias) as little-endian float64."""
    flat = np.concatenate([a.ravel() for a in params.arrays])
    layers = [{"weight": list(w.shape), "bias": list(b.shape)} for w, b in zip(params.weights, params.biases)]
    return save_array(path, flat, "<f8", layers=layers, input_scale=float(params.input_scale))


def load_model(path) -> TaskModelParams:
    flat, meta = load_array(path)
    try:
        layers = meta["layers"]
        scale = float(meta["input_scale"])
    except KeyError as exc:
        raise SchemaError(f"model sidecar missing {exc}") from exc
    arrays, pos = [], 0
    for layer in layers:
        for key in ("weight", "bias"):
            shape = tuple(layer[key])
            size = math.prod(shape)
            arrays.append(flat[pos:pos + size].reshape(shape).astype(np.float64))
            pos += size
    if pos != flat.size:
        raise SchemaError("model file size does not match its layer list")
    return TaskModelParams(arrays[0::2], arrays[1::2], scale)


def save_report(path, report: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")
    return path
