import json

import numpy as np
import pytest

from pilot import dataio
from pilot.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().out


def test_generate_then_check(tmp_path, capsys):
    out = tmp_path / "s.json"
    code, text = run(capsys, "generate", "--kind", "spiral", "--shots", 2, "--samples", 500, "--n", 64, "--out", out)
    assert code == 0 and json.loads(text)["feasible"]
    code, text = run(capsys, "check", "--traj", out)
    assert code == 0 and json.loads(text)["feasible"] is True


def test_check_infeasible_exit_1(tmp_path, capsys):
    out = tmp_path / "g.json"
    assert run(capsys, "generate", "--kind", "gaussian", "--samples", 300, "--n", 64, "--out", out)[0] == 0
    code, text = run(capsys, "check", "--traj", out)
    assert code == 1 and json.loads(text)["feasible"] is False


def test_check_honours_hardware_flags(tmp_path, capsys):
    out = tmp_path / "r.json"
    run(capsys, "generate", "--kind", "radial", "--shots", 2, "--samples", 64, "--n", 32, "--out", out)
    # step 0.5 grid units/sample: infeasible once the gradient cap is tiny
    assert run(capsys, "check", "--traj", out, "--gmax", 1.0)[0] == 1


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["check"]) == 2
    assert main(["check", "--traj", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_version": 7}')
    assert main(["check", "--traj", str(bad)]) == 2
    capsys.readouterr()


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kind": "cartesian", "shots": 3, "samples": 40, "n": 32, "out": str(tmp_path / "c.json")}))
    assert main(["--config", str(cfg), "generate", "--shots", "5"]) == 0
    tf = dataio.load_trajectory(tmp_path / "c.json")
    assert tf.coords.shape == (5, 40, 2)
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert main(["--config", str(cfg), "generate"]) == 2
    capsys.readouterr()


@pytest.fixture(scope="module")
def optimized(tmp_path_factory):
    d = tmp_path_factory.mktemp("opt")
    init = d / "init.json"
    main(["generate", "--kind", "radial", "--shots", "2", "--samples", "48", "--n", "16", "--out", str(init)])
    common = ["--n-train", "6", "--n-val", "3", "--coils", "2", "--epochs", "2", "--batch-size", "3"]
    codes = {
        name: main(["optimize", "--traj-init", str(init), "--out-dir", str(d / name), *common, *extra])
        for name, extra in {
            "fixed": ["--lr-traj", "0"],
            "a": ["--snr-db", "20"],
            "b": ["--snr-db", "20"],
            "ms": ["--multiscale", "4,1"],
        }.items()
    }
    return d, init, codes


def test_optimize_outputs(optimized):
    d, _, codes = optimized
    report = json.loads((d / "a" / "report.json").read_text())
    # exit status mirrors the feasibility verdict at the 1e-2 output tolerance
    assert codes["a"] == (0 if report["feasibility"]["feasible"] else 1)
    names = {p.name for p in (d / "a").iterdir()}
    assert {"trajectory.json", "model.f64", "model.f64.json", "history.csv", "trajectory.svg", "report.json",
            "manifest.json"} <= names
    header = (d / "a" / "history.csv").read_text().splitlines()[0].split(",")
    assert header[:5] == ["epoch", "loss", "psnr", "ssim", "max_violation"]
    manifest = json.loads((d / "a" / "manifest.json").read_text())
    assert {"config", "seed", "tool_version", "inputs", "outputs", "wall_time_s"} <= manifest.keys()
    assert (d / "a" / "trajectory.svg").read_text().startswith("<svg")


def test_optimize_fixed_is_byte_identical(optimized):
    d, init, codes = optimized
    assert codes["fixed"] == 0
    assert (d / "fixed" / "trajectory.json").read_bytes() == init.read_bytes()


def test_optimize_rerun_identical(optimized):
    d, _, _ = optimized
    for f in ("trajectory.json", "model.f64", "history.csv", "report.json"):
        assert (d / "a" / f).read_bytes() == (d / "b" / f).read_bytes()


def test_optimize_multiscale(optimized):
    d, _, codes = optimized
    assert codes["ms"] in (0, 1)
    assert "control_points" in (d / "ms" / "history.csv").read_text().splitlines()[0]


def test_reconstruct_and_export(optimized, tmp_path, capsys):
    d, _, _ = optimized
    ph = tmp_path / "ph.f32"
    assert main(["phantom", "--n", "16", "--out", str(ph)]) == 0
    rec = tmp_path / "rec.f32"
    code, text = run(capsys, "reconstruct", "--traj", d / "a" / "trajectory.json", "--model", d / "a" / "model.f64",
                     "--image", ph, "--truth", ph, "--out", rec, "--coils", 2)
    assert code == 0
    res = json.loads(text.strip().splitlines()[-1])
    assert np.isfinite(res["psnr"]) and -1 <= res["ssim"] <= 1
    assert dataio.load_image(rec).shape == (16, 16)
    csv_path = tmp_path / "w.csv"
    assert run(capsys, "export-waveform", "--traj", d / "a" / "trajectory.json", "--out", csv_path)[0] == 0
    assert csv_path.read_text().startswith("shot,sample,Gx_mT_per_m,Gy_mT_per_m,Sx_T_per_m_s,Sy_T_per_m_s")


def test_tsp_optimize_small(tmp_path, capsys):
    out = tmp_path / "tsp"
    code, text = run(capsys, "tsp-optimize", "--n", 16, "--samples", 40, "--stage2-epochs", 1, "--stage4-epochs", 1,
                     "--n-train", 4, "--n-val", 2, "--coils", 2, "--batch-size", 2, "--lr-traj", 0.05,
                     "--out-dir", out)
    res = json.loads(text.strip().splitlines()[-1])
    assert res["stage3_shorter"] and res["stage3_length"] < res["stage2_length"]
    assert code in (0, 1)
    for f in ("stage2_cloud.json", "stage3_path.json", "trajectory.json", "manifest.json", "stage2_cloud.svg"):
        assert (out / f).exists()


def test_tsp_optimize_n64_m512_orders_path(tmp_path, capsys):
    out = tmp_path / "tsp64"
    code, text = run(capsys, "tsp-optimize", "--n", 64, "--samples", 512, "--stage2-epochs", 1, "--stage4-epochs", 1,
                     "--n-train", 2, "--n-val", 1, "--coils", 2, "--batch-size", 2, "--out-dir", out)
    res = json.loads(text.strip().splitlines()[-1])
    assert code in (0, 1)
    assert res["stage3_length"] < res["stage2_length"]
