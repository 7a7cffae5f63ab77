"""Command-line driver.

Exit codes: 0 success / feasible, 1 infeasible, 2 usage or input error,
3 numeric failure.  ``--config file.json`` may supply any flag of a command
(keys use the flag name with dashes or underscores); explicit flags win.
"""
from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import dataio, generators
from .kinematics import HardwareSpec, Trajectory, feasibility_report
from .metrics import psnr, ssim
from .nufft import NufftConfig, NufftOperator
from .optimizer import OptimConfig, TrainingDiverged, evaluate, reconstruct, train_pilot, train_pilot_tsp
from .svg import save_svg
from .taskmodel import init_model

OUTPUT_TOLERANCE = 1e-2
HISTORY_COLUMNS = ("epoch", "loss", "psnr", "ssim", "max_violation")

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.0.0"


def _hardware_flags(p, with_grid=False):
    p.add_argument("--gmax", type=float, default=None, help="peak gradient, mT/m (default 40)")
    p.add_argument("--smax", type=float, default=None, help="peak slew rate, T/m/s (default 200)")
    p.add_argument("--dt", type=float, default=None, help="dwell time, s (default 1e-5)")
    p.add_argument("--fov", type=float, default=None, help="field of view, m (default 0.2)")
    p.add_argument("--gamma", type=float, default=None, help="gyromagnetic ratio, Hz/T")


def _spec(args, tf: dataio.TrajectoryFile | None = None, n: int | None = None) -> HardwareSpec:
    base = HardwareSpec()
    pick = lambda flag, from_file, default: flag if flag is not None else (from_file if from_file is not None else default)
    return HardwareSpec(
        g_max=pick(args.gmax, None, base.g_max),
        s_max=pick(args.smax, None, base.s_max),
        dt=pick(args.dt, tf.dt if tf else None, base.dt),
        gamma=pick(args.gamma, tf.gamma if tf else None, base.gamma),
        fov=pick(args.fov, tf.fov if tf else None, base.fov),
        n=tf.n if tf else (n or base.n),
    )


def _load_traj(path) -> dataio.TrajectoryFile:
    try:
        return dataio.load_trajectory(path)
    except OSError as exc:
        raise UsageError(f"cannot read trajectory {path}: {exc}") from exc


def _write_history(path: Path, history):
    cols = list(HISTORY_COLUMNS)
    extra = [k for k in ("stage", "task_loss", "penalty", "train_psnr", "control_points") if any(k in r for r in history)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols + extra)
        for i, r in enumerate(history):
            row = [i if k == "epoch" else r.get(k, "") for k in cols] + [r.get(k, "") for k in extra]
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _manifest(out_dir: Path, args, command: str, cfg: dict, inputs: dict, outputs: dict, started: float):
    manifest = {
        "command": command,
        "tool_version": _version(),
        "seed": cfg.get("seed"),
        "config": cfg,
        "flags": {k: v for k, v in vars(args).items() if k != "func"},
        "inputs": inputs,
        "outputs": outputs,
        "wall_time_s": time.time() - started,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


# -- commands ------------------------------------------------------------------------

def cmd_generate(args):
    spec = _spec(args, n=args.n)
    if args.kind == "gaussian":
        cloud = np.stack([generators.gaussian_init(spec.n, args.samples, args.seed + s) for s in range(args.shots)])
        traj = Trajectory(cloud, spec.n, spec.dt, {"kind": "gaussian"})
    elif args.kind == "spiral":
        traj = generators.spiral(spec, args.shots, args.samples, args.density_exponent, args.turns)
    else:
        traj = generators.GENERATORS[args.kind](spec, args.shots, args.samples)
    dataio.save_trajectory(args.out, traj, spec)
    rep = feasibility_report(traj, spec, args.tolerance)
    print(json.dumps({"out": str(args.out), "kind": args.kind, **rep.to_dict()}, sort_keys=True))
    return EXIT_OK


def cmd_check(args):
    tf = _load_traj(args.traj)
    rep = feasibility_report(tf.trajectory, _spec(args, tf), args.tolerance)
    print(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK if rep.feasible else EXIT_INFEASIBLE


def _optim_config(args, **over) -> OptimConfig:
    ms = None
    if getattr(args, "multiscale", None):
        try:
            c0, period = (int(v) for v in str(args.multiscale).split(","))
        except ValueError as exc:
            raise UsageError("--multiscale expects 'control_points,period'") from exc
        ms = (c0, period)
    kw = dict(
        lr_model=args.lr_model,
        lr_traj=args.lr_traj,
        lambda_v=args.lambda_v,
        lambda_a=args.lambda_a,
        epochs=getattr(args, "epochs", 0),
        batch_size=args.batch_size,
        multiscale=ms,
        seed=args.seed,
        snr_db=args.snr_db,
        precision=args.precision,
        traj_lr_final=args.traj_lr_final,
        eval_every=args.eval_every,
    )
    kw.update(over)
    try:
        return OptimConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _dataset_flags(p):
    p.add_argument("--dataset-seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-val", type=int, default=50)
    p.add_argument("--coils", type=int, default=4)


def _train_flags(p, epochs=True):
    if epochs:
        p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr-traj", type=float, default=0.01)
    p.add_argument("--lr-model", type=float, default=0.001)
    p.add_argument("--lambda-v", type=float, default=0.1)
    p.add_argument("--lambda-a", type=float, default=0.1)
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=20)
    p.add_argument("--seed", type=int, default=0, help="model initialization, shuffling and noise seed")
    p.add_argument("--precision", choices=("float32", "float64"), default="float32")
    p.add_argument("--traj-lr-final", type=float, default=0.1,
                   help="cosine-anneal the trajectory learning rate to this fraction (1 = constant)")
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--out-dir", type=Path, required=True)


def _report(traj, spec, params, val, cfg, extra=None):
    rep = feasibility_report(traj, spec, OUTPUT_TOLERANCE)
    ev = evaluate(val, traj, params, snr_db=cfg.snr_db, seed=cfg.seed)
    out = {"feasibility": rep.to_dict(), "validation": ev}
    out.update(extra or {})
    return out, rep


def cmd_optimize(args):
    started = time.time()
    tf = _load_traj(args.traj_init)
    spec = _spec(args, tf)
    cfg = _optim_config(args)
    train, val = dataio.make_phantom_dataset(tf.n, args.n_train, args.n_val, args.coils, args.dataset_seed)
    traj, params, history = train_pilot(train, tf.trajectory, init_model(cfg.seed), cfg, spec, validation=val)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    outputs = {
        "trajectory": out / "trajectory.json",
        "model": out / "model.f64",
        "history": out / "history.csv",
        "svg": out / "trajectory.svg",
        "report": out / "report.json",
    }
    if cfg.lr_traj == 0:
        shutil.copyfile(args.traj_init, outputs["trajectory"])
    else:
        dataio.save_trajectory(outputs["trajectory"], traj, spec)
    dataio.save_model(outputs["model"], params)
    _write_history(outputs["history"], history)
    save_svg(outputs["svg"], traj, spec)
    report, rep = _report(traj, spec, params, val, cfg)
    dataio.save_report(outputs["report"], report)
    _manifest(out, args, "optimize", cfg.to_dict(), {"traj_init": str(args.traj_init)},
              {k: str(v) for k, v in outputs.items()}, started)
    print(json.dumps({"validation": report["validation"], "feasible": rep.feasible,
                      "max_violation": rep.max_violation}, sort_keys=True))
    return EXIT_OK if rep.feasible else EXIT_INFEASIBLE


def cmd_tsp_optimize(args):
    started = time.time()
    spec = _spec(args, n=args.n)
    cfg = _optim_config(args, epochs=args.stage2_epochs)
    train, val = dataio.make_phantom_dataset(args.n, args.n_train, args.n_val, args.coils, args.dataset_seed)
    traj, params, history = train_pilot_tsp(train, cfg, args.n, args.samples, init_model(cfg.seed),
                                            stage2_epochs=args.stage2_epochs, stage4_epochs=args.stage4_epochs,
                                            spec=spec, validation=val)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    ev = history.events
    outputs = {
        "stage2_cloud": out / "stage2_cloud.json",
        "stage3_path": out / "stage3_path.json",
        "trajectory": out / "trajectory.json",
        "model": out / "model.f64",
        "history": out / "history.csv",
        "svg_stage2": out / "stage2_cloud.svg",
        "svg_stage3": out / "stage3_path.svg",
        "svg": out / "trajectory.svg",
        "report": out / "report.json",
    }
    dataio.save_trajectory(outputs["stage2_cloud"], ev["stage2"], spec)
    dataio.save_trajectory(outputs["stage3_path"], ev["stage3"], spec)
    dataio.save_trajectory(outputs["trajectory"], traj, spec)
    dataio.save_model(outputs["model"], params)
    _write_history(outputs["history"], history)
    save_svg(outputs["svg_stage2"], ev["stage2"], spec, points=True)
    save_svg(outputs["svg_stage3"], ev["stage3"], spec)
    save_svg(outputs["svg"], traj, spec)
    lengths = {"stage2_length": ev["length_before"], "stage3_length": ev["length_after"]}
    report, rep = _report(traj, spec, params, val, cfg, lengths)
    dataio.save_report(outputs["report"], report)
    cfgd = cfg.to_dict()
    cfgd.update(stage2_epochs=args.stage2_epochs, stage4_epochs=args.stage4_epochs, n=args.n, m=args.samples)
    _manifest(out, args, "tsp-optimize", cfgd, {}, {k: str(v) for k, v in outputs.items()}, started)
    print(json.dumps({**lengths, "stage3_shorter": lengths["stage3_length"] < lengths["stage2_length"],
                      "validation": report["validation"], "feasible": rep.feasible,
                      "max_violation": rep.max_violation}, sort_keys=True))
    return EXIT_OK if rep.feasible else EXIT_INFEASIBLE


def _read_image(path):
    try:
        return dataio.load_array(path)[0]
    except OSError as exc:
        raise UsageError(f"cannot read image {path}: {exc}") from exc


def cmd_reconstruct(args):
    tf = _load_traj(args.traj)
    try:
        params = dataio.load_model(args.model)
    except OSError as exc:
        raise UsageError(f"cannot read model {args.model}: {exc}") from exc
    img = _read_image(args.image)
    if img.ndim == 2:
        channels, _ = dataio.simulate_multichannel(img.astype(np.float64), dataio.coil_sensitivities(img.shape[-1], args.coils, args.coil_seed))
    elif img.ndim == 3:
        channels = img
    else:
        raise UsageError("image must be (n, n) or (coils, n, n)")
    if channels.shape[-1] != tf.n:
        raise UsageError(f"image size {channels.shape[-1]} does not match trajectory grid {tf.n}")
    op = NufftOperator(tf.trajectory, tf.n, NufftConfig())
    rec = reconstruct(op, params, channels[None], args.snr_db, np.random.default_rng(args.seed))[0]
    dataio.save_image(args.out, rec)
    result = {"out": str(args.out)}
    if args.truth is not None:
        truth = _read_image(args.truth).astype(np.float64)
        result.update(psnr=psnr(rec, truth), ssim=ssim(rec, truth))
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_export_waveform(args):
    tf = _load_traj(args.traj)
    spec = _spec(args, tf)
    dataio.save_waveforms(args.out, tf.trajectory, spec)
    rep = feasibility_report(tf.trajectory, spec)
    print(json.dumps({"out": str(args.out), "feasible": rep.feasible}, sort_keys=True))
    return EXIT_OK


def cmd_phantom(args):
    rng = np.random.default_rng(args.seed)
    img = dataio.shepp_logan(args.n) if args.seed is None else dataio.random_phantom(args.n, rng)
    dataio.save_image(args.out, img)
    print(json.dumps({"out": str(args.out), "n": args.n}))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pilot", description="Learned k-space trajectory toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write an initial trajectory")
    p.add_argument("--kind", choices=("spiral", "radial", "cartesian", "gaussian"), required=True)
    p.add_argument("--shots", type=int, default=1)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0, help="gaussian clouds only")
    p.add_argument("--density-exponent", type=float, default=generators.DEFAULT_DENSITY_EXPONENT)
    p.add_argument("--turns", type=float, default=None)
    p.add_argument("--tolerance", type=float, default=0.0)
    _hardware_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("check", help="feasibility report; exit 0 iff feasible")
    p.add_argument("--traj", type=Path, required=True)
    p.add_argument("--tolerance", type=float, default=0.0)
    _hardware_flags(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("optimize", help="jointly learn trajectory and reconstruction")
    p.add_argument("--traj-init", type=Path, required=True)
    p.add_argument("--multiscale", type=str, default=None, help="control_points,period")
    _dataset_flags(p)
    _train_flags(p)
    _hardware_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("tsp-optimize", help="point cloud, unconstrained learning, TSP ordering, fine-tuning")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--stage2-epochs", type=int, default=100)
    p.add_argument("--stage4-epochs", type=int, default=100)
    _dataset_flags(p)
    _train_flags(p, epochs=False)
    _hardware_flags(p)
    p.set_defaults(func=cmd_tsp_optimize)

    p = sub.add_parser("reconstruct", help="sample, regrid and apply a trained model")
    p.add_argument("--traj", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True, help="raw image with JSON sidecar")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--truth", type=Path, default=None)
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--coil-seed", type=int, default=0)
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("export-waveform", help="gradient and slew waveforms as CSV")
    p.add_argument("--traj", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _hardware_flags(p)
    p.set_defaults(func=cmd_export_waveform)

    p = sub.add_parser("phantom", help="write a Shepp-Logan (or seeded random) phantom image")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_phantom)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv):
    """Inject ``--config`` values as subparser defaults so explicit flags override them."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path, default=None)
    known, rest = pre.parse_known_args(argv)
    if known.config is None:
        return rest
    try:
        cfg = json.loads(known.config.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    command = next((a for a in rest if not a.startswith("-")), None)
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    if command not in subs.choices:
        return rest
    sp = subs.choices[command]
    dests = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in dests or dest == "help":
            raise UsageError(f"unknown config key {key!r} for {command}")
        action = dests[dest]
        if action.type is not None and value is not None:
            value = action.type(value) if not isinstance(value, list) else value
        if action.required:
            action.required = False
        defaults[dest] = value
    sp.set_defaults(**defaults)
    return rest


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        rest = _apply_config(parser, argv)
        args = parser.parse_args(rest)
        return args.func(args)
    except SystemExit as exc:  # argparse: 0 for --help/--version, 2 for usage errors
        return int(exc.code or 0)
    except (UsageError, dataio.SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
