"""Joint trajectory / reconstruction training and the four-stage TSP pipeline."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..dataio import PhantomDataset
from ..generators import gaussian_init, spline_resample, spline_resample_grad
from ..kinematics import HardwareSpec, Trajectory, constraint_penalty, feasibility_report, project_feasible
from ..metrics import psnr, ssim
from ..nufft import NufftConfig, NufftOperator
from ..taskmodel import TaskModelParams, add_noise, init_model, l1_loss, model_backward, model_forward, rss
from .adam import AdamState, adam_step
from .pipeline import batch_loss_and_grads, model_input
from .tsp import path_length, tsp_greedy

PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class OptimConfig:
    lr_model: float = 1e-3
    lr_traj: float = 1e-2
    lambda_v: float = 0.1
    lambda_a: float = 0.1
    epochs: int = 10
    batch_size: int = 20
    multiscale: tuple | None = None  # (initial control points per shot, doubling period in epochs)
    seed: int = 0
    snr_db: float | None = None
    precision: str = "float32"
    calibrate_scale: bool = True
    # cosine-anneal the trajectory step size to this fraction over the run
    traj_lr_final: float = 0.1
    eval_every: int = 1

    def __post_init__(self):
        if self.lr_model <= 0:
            raise ValueError("lr_model must be positive")
        if self.lr_traj < 0:
            raise ValueError("lr_traj must be non-negative")
        if self.lambda_v < 0 or self.lambda_a < 0:
            raise ValueError("constraint weights must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.multiscale is not None:
            c0, period = self.multiscale
            if int(c0) < 2 or int(period) < 1:
                raise ValueError("multiscale needs >= 2 control points and a doubling period >= 1")
            object.__setattr__(self, "multiscale", (int(c0), int(period)))
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        if not 0.0 <= self.traj_lr_final <= 1.0:
            raise ValueError("traj_lr_final must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


class History(list):
    """Per-epoch records (dicts); ``events`` holds stage artifacts and summaries."""

    def __init__(self, *args):
        super().__init__(*args)
        self.events: dict = {}


class TrainingDiverged(FloatingPointError):
    pass


def _dataset(data) -> PhantomDataset:
    ds = PhantomDataset.from_pairs(data)
    if len(ds) == 0:
        raise ValueError("empty dataset")
    return ds


def calibrate_input_scale(op: NufftOperator, ds: PhantomDataset, batch: int = 50) -> float:
    """Least-squares gain mapping the RSS regridded image onto the target."""
    num = den = 0.0
    for lo in range(0, len(ds), batch):
        r = model_input(op, ds.channels[lo : lo + batch])
        t = ds.targets[lo : lo + batch]
        num += float(np.sum(r * t))
        den += float(np.sum(r * r))
    return num / den if den > 0 else 1.0


def evaluate(data, traj: Trajectory, params: TaskModelParams, nufft_cfg: NufftConfig = NufftConfig(),
             snr_db=None, seed: int = 0, batch: int = 50) -> dict:
    """Mean L1 loss, PSNR and SSIM of the reconstructions (float64 pipeline)."""
    ds = _dataset(data)
    op = NufftOperator(traj, ds.n, nufft_cfg)
    rng = np.random.default_rng(seed)
    losses, ps, ss = [], [], []
    for lo in range(0, len(ds), batch):
        pred, _ = model_forward(params, model_input(op, ds.channels[lo : lo + batch], snr_db, rng))
        tg = ds.targets[lo : lo + batch]
        losses.append(l1_loss(pred, tg)[0] * len(tg))
        ps += [psnr(a, b) for a, b in zip(pred, tg)]
        ss += [ssim(a, b) for a, b in zip(pred, tg)]
    return {"loss": float(np.sum(losses) / len(ds)), "psnr": float(np.mean(ps)), "ssim": float(np.mean(ss))}


class _TrajectoryVariable:
    """Optimized trajectory: free coordinates or spline control points."""

    def __init__(self, init: Trajectory, multiscale):
        self.n = init.n
        self.m = init.samples_per_shot
        self.dt = init.dt
        self.meta = dict(init.meta)
        self.period = None
        if multiscale is None or multiscale[0] >= self.m:
            self.control = None
            self.value = np.array(init.coords)
        else:
            c0, self.period = multiscale
            idx = np.linspace(0.0, self.m - 1.0, c0)
            self.control = np.stack(
                [np.stack([np.interp(idx, np.arange(self.m), s[:, d]) for d in range(2)], -1) for s in init.coords]
            )
            self._fit_bounds()
            self.value = self.control

    def _fit_bounds(self):
        # shrink any shot axis whose spline leaves the grid; the map is linear in the control points
        half = self.n / 2
        peak = np.abs(spline_resample(self.control, self.m)).max(axis=1, keepdims=True)
        self.control = self.control * np.minimum(1.0, half / np.maximum(peak, 1e-300))

    @property
    def coords(self) -> np.ndarray:
        if self.control is None:
            return self.value
        return spline_resample(self.control, self.m)

    @property
    def n_control(self) -> int:
        return self.m if self.control is None else self.control.shape[1]

    def pull_back(self, grad_coords):
        if self.control is None:
            return grad_coords
        return spline_resample_grad(self.control, self.m, grad_coords)

    def set(self, value):
        if self.control is None:
            self.value = np.clip(value, -self.n / 2, self.n / 2)
        else:
            self.control = value
            self._fit_bounds()
            self.value = self.control

    def maybe_refine(self, epoch: int) -> bool:
        """Double the control points at period boundaries; returns True when the variable changed."""
        if self.control is None or epoch == 0 or epoch % self.period:
            return False
        c = 2 * self.control.shape[1]
        if c >= self.m:
            self.value = np.clip(self.coords, -self.n / 2, self.n / 2)
            self.control = None
        else:
            self.control = spline_resample(self.control, c)
            self._fit_bounds()
            self.value = self.control
        return True

    def trajectory(self) -> Trajectory:
        return Trajectory(self.coords, self.n, self.dt, dict(self.meta))


def _traj_lr(cfg: OptimConfig, epoch: int) -> float:
    if cfg.traj_lr_final >= 1.0 or cfg.epochs <= 1:
        return cfg.lr_traj
    frac = epoch / (cfg.epochs - 1)
    f = cfg.traj_lr_final + (1.0 - cfg.traj_lr_final) * 0.5 * (1.0 + math.cos(math.pi * frac))
    return cfg.lr_traj * f


def train_pilot(
    dataset,
    init: Trajectory,
    model_init: TaskModelParams,
    cfg: OptimConfig = OptimConfig(),
    spec: HardwareSpec | None = None,
    nufft_cfg: NufftConfig = NufftConfig(),
    validation=None,
    callback=None,
    stage: str | None = None,
):
    """Jointly learn the trajectory and reconstruction model on ``dataset``.

    Returns ``(trajectory, params, history)``.  ``callback(epoch, trajectory,
    control_points)`` is invoked after every epoch (control points are ``None``
    once all samples are free variables).
    """
    ds = _dataset(dataset)
    val = _dataset(validation) if validation is not None else None
    n = ds.n
    if init.n != n:
        raise ValueError(f"trajectory grid {init.n} does not match images {n}")
    spec = spec or HardwareSpec(n=n)
    dtype = PRECISIONS[cfg.precision]
    rng = np.random.default_rng(cfg.seed)
    noise_rng = np.random.default_rng([cfg.seed, 1])
    train_traj = cfg.lr_traj > 0

    params = model_init.copy()
    if cfg.calibrate_scale:
        params.input_scale = calibrate_input_scale(NufftOperator(init, n, nufft_cfg), ds)
    var = _TrajectoryVariable(init, cfg.multiscale if train_traj else None)
    adam_model = AdamState.zeros_like(params.arrays)
    adam_traj = AdamState.zeros_like([var.value])

    channels = ds.channels.astype(np.result_type(dtype, np.complex64), copy=False)
    targets = ds.targets.astype(dtype, copy=False)
    fixed_op = None if train_traj else NufftOperator(init, n, nufft_cfg, dtype)
    fixed_samples = fixed_op.forward(channels) if fixed_op is not None else None
    eval_set = val if val is not None else PhantomDataset(ds.channels[:50], ds.targets[:50])

    history = History()
    for epoch in range(cfg.epochs):
        if train_traj and var.maybe_refine(epoch):
            adam_traj = AdamState.zeros_like([var.value])
        lr_k = _traj_lr(cfg, epoch)
        order = rng.permutation(len(ds))
        tot, task_tot, pen_tot = 0.0, 0.0, 0.0
        train_ps = []
        for b, lo in enumerate(range(0, len(ds), cfg.batch_size)):
            idx = np.sort(order[lo : lo + cfg.batch_size])
            coords = var.coords
            if train_traj:
                op = NufftOperator(coords, n, nufft_cfg, dtype)
                res = batch_loss_and_grads(op, params, channels[idx], targets[idx], cfg.snr_db, noise_rng)
                task, g_params, g_coords = res.loss, res.grad_params, res.grad_coords
                pen, g_pen = constraint_penalty(coords, spec, cfg.lambda_v, cfg.lambda_a)
                pred = res.pred
            else:
                X = fixed_samples[idx]
                if cfg.snr_db is not None and not np.isinf(cfg.snr_db):
                    X = add_noise(X, cfg.snr_db, rng=noise_rng)
                r = rss(fixed_op.adjoint(X))
                pred, cache = model_forward(params, r)
                task, g_pred = l1_loss(pred, targets[idx])
                g_params, _ = model_backward(params, cache, g_pred)
                pen = constraint_penalty(coords, spec, cfg.lambda_v, cfg.lambda_a)[0]
            loss = task + pen
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in g_params):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
            new, adam_model = adam_step(adam_model, params.arrays, g_params, cfg.lr_model)
            params = params.with_arrays(new)
            if train_traj:
                g = var.pull_back(g_coords + g_pen)
                if not np.all(np.isfinite(g)):
                    raise TrainingDiverged(f"non-finite trajectory gradient at epoch {epoch}, batch {b}")
                (new_k,), adam_traj = adam_step(adam_traj, [var.value], [g], lr_k)
                var.set(new_k)
            w = len(idx)
            tot += loss * w
            task_tot += task * w
            pen_tot += pen * w
            train_ps.append(float(np.mean([psnr(p, t) for p, t in zip(pred, targets[idx])])) * w)

        traj = var.trajectory()
        rec = {
            "epoch": epoch,
            "loss": tot / len(ds),
            "task_loss": task_tot / len(ds),
            "penalty": pen_tot / len(ds),
            "train_psnr": float(np.sum(train_ps) / len(ds)),
            "max_violation": feasibility_report(traj, spec).max_violation,
            "control_points": var.n_control,
            "lr_traj": lr_k,
        }
        if stage is not None:
            rec["stage"] = stage
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            ev = evaluate(eval_set, traj, params, nufft_cfg, cfg.snr_db, seed=cfg.seed)
            rec.update(psnr=ev["psnr"], ssim=ev["ssim"], eval_loss=ev["loss"])
        history.append(rec)
        if callback is not None:
            callback(epoch, traj, None if var.control is None else var.control.copy())

    out = init if not train_traj else var.trajectory()
    return out, params, history


def train_pilot_tsp(
    dataset,
    cfg: OptimConfig,
    n: int,
    m: int,
    model_init: TaskModelParams | None = None,
    stage2_epochs: int | None = None,
    stage4_epochs: int | None = None,
    stage4_cfg: OptimConfig | None = None,
    spec: HardwareSpec | None = None,
    nufft_cfg: NufftConfig = NufftConfig(),
    validation=None,
    keep_model: bool = True,
    stage4_start: str = "project",
):
    """Single-shot point cloud -> unconstrained learning -> greedy TSP ordering -> constrained fine-tuning.

    ``stage4_start="project"`` moves the ordered path onto the nearest feasible
    curve before fine-tuning (the hinge penalty alone stalls against the sharp
    corners of a TSP tour); ``"path"`` fine-tunes the raw ordered path.

    ``history.events`` holds the stage-2 cloud, the stage-3 path, the stage-3
    permutation and the path lengths before and after ordering.
    """
    if stage4_start not in ("project", "path"):
        raise ValueError(f"stage4_start must be 'project' or 'path', got {stage4_start!r}")
    spec = spec or HardwareSpec(n=n)
    model_init = model_init or init_model(cfg.seed)
    history = History()

    cloud = gaussian_init(n, m, cfg.seed)
    init = Trajectory(cloud[None], n, spec.dt, {"kind": "gaussian"})
    history.events["stage1"] = init

    cfg2 = replace(cfg, lambda_v=0.0, lambda_a=0.0, multiscale=None,
                   epochs=cfg.epochs if stage2_epochs is None else stage2_epochs)
    traj2, params2, h2 = train_pilot(dataset, init, model_init, cfg2, spec, nufft_cfg, validation, stage="stage2")
    history.extend(h2)
    history.events["stage2"] = traj2

    pts = traj2.coords[0]
    perm = tsp_greedy(pts)
    traj3 = Trajectory(pts[perm][None], n, spec.dt, {"kind": "tsp"})
    history.events["stage3"] = traj3
    history.events["permutation"] = perm
    history.events["length_before"] = path_length(pts)
    history.events["length_after"] = path_length(pts, perm)

    cfg4 = stage4_cfg or replace(cfg, multiscale=None)
    if stage4_epochs is not None:
        cfg4 = replace(cfg4, epochs=stage4_epochs)
    start = params2 if keep_model else model_init
    # the model was trained on the stage-2 operator; the order change leaves the sample set intact
    cfg4 = replace(cfg4, calibrate_scale=cfg4.calibrate_scale and not keep_model)
    start4 = project_feasible(traj3, spec, iterations=20000) if stage4_start == "project" else traj3
    history.events["stage4_start"] = start4
    traj4, params4, h4 = train_pilot(dataset, start4, start, cfg4, spec, nufft_cfg, validation, stage="stage4")
    history.extend(h4)
    history.events["stage4"] = traj4
    return traj4, params4, history
