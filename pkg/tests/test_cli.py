"""Command-line surface: artifacts, manifests, exit codes, determinism.

Runs the CLI as a subprocess (python -m tsdm.cli) against a tiny
synthetic setup so every subcommand stays fast; recovery-quality
assertions live in the acceptance suite, not here.
"""

import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from tsdm.dataio import load_mask_csv, load_matrix_csv
from tsdm.metrics import detection_metrics

TINY = {
    "channels": 4,
    "window": 16,
    "base_width": 8,
    "depth": 2,
    "time_embed_dim": 8,
    "epochs": 2,
    "synth_count": 10,
    "n_steps": 40,
    "subseq_len": 5,
    "repeats": 2,
    "attack_channels": "0,2",
    "attack_end": 16,
    "mask_channels": "1,3",
    "mask_start": 2,
    "mask_end": 14,
    "bench_repeats": 1,
    "seed": 7,
}


def write_config(path: Path, **overrides) -> Path:
    merged = {**TINY, **overrides}
    path.write_text("".join(f"{k} = {v}\n" for k, v in merged.items()))
    return path


def run_cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "tsdm.cli", *map(str, args)],
                          cwd=cwd, capture_output=True, text=True)


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    """One synth+train setup shared read-only by the module's tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "tiny.cfg")
    for cmd in (("synth",), ("train", "base/windows")):
        r = run_cli("--config", cfg.name, "--out", "base", *cmd, cwd=root)
        assert r.returncode == 0, r.stderr
    return root


def test_synth_writes_dataset_and_manifest(cli_env):
    files = sorted((cli_env / "base" / "windows").glob("*.csv"))
    assert len(files) == TINY["synth_count"]
    x, header = load_matrix_csv(files[0])
    assert x.shape == (TINY["channels"], TINY["window"]) and header is None
    manifest = json.loads((cli_env / "base" / "manifest.json").read_text())
    resolved = (cli_env / "base" / "config.resolved.txt").read_bytes()
    assert manifest["config_sha256"] == hashlib.sha256(resolved).hexdigest()
    assert manifest["seed"] == TINY["seed"]
    assert set(manifest["versions"]) == {"python", "numpy", "tsdm"}


def test_train_writes_checkpoint_and_loss_curve(cli_env):
    assert (cli_env / "base" / "model.tsdm").exists()
    lines = (cli_env / "base" / "loss_curve.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss"
    assert len(lines) == 1 + TINY["epochs"]
    losses = [float(l.split(",")[1]) for l in lines[1:]]
    assert all(np.isfinite(losses))


def test_attack_touches_exactly_the_truth_mask(cli_env):
    cfg = cli_env / "tiny.cfg"
    r = run_cli("--config", cfg.name, "--out", "atk", "attack",
                "base/windows/00003.csv", cwd=cli_env)
    assert r.returncode == 0, r.stderr
    x, _ = load_matrix_csv(cli_env / "base/windows/00003.csv")
    y, _ = load_matrix_csv(cli_env / "atk/attacked.csv")
    gt = load_mask_csv(cli_env / "atk/attack_truth_mask.csv")
    assert np.array_equal(y != x, gt == 1.0)
    assert gt[0].any() and gt[2].any() and not gt[1].any()


def test_mask_pokes_nans_exactly_at_missing_entries(cli_env):
    cfg = cli_env / "tiny.cfg"
    r = run_cli("--config", cfg.name, "--out", "msk", "mask",
                "base/windows/00003.csv", cwd=cli_env)
    assert r.returncode == 0, r.stderr
    x, _ = load_matrix_csv(cli_env / "base/windows/00003.csv")
    masked, _ = load_matrix_csv(cli_env / "msk/masked.csv")
    lm = load_mask_csv(cli_env / "msk/loss_mask.csv")
    assert np.array_equal(np.isnan(masked), lm == 0.0)
    assert np.array_equal(masked[lm == 1.0], x[lm == 1.0])


def test_recover_emits_artifacts_and_metrics(cli_env):
    cfg = write_config(cli_env / "rec.cfg",
                       checkpoint=cli_env / "base/model.tsdm")
    r = run_cli("--config", cfg.name, "--out", "rec", "recover",
                "atk/attacked.csv", "--truth", "base/windows/00003.csv",
                cwd=cli_env)
    assert r.returncode == 0, r.stderr
    recovered, _ = load_matrix_csv(cli_env / "rec/recovered.csv")
    assert recovered.shape == (TINY["channels"], TINY["window"])
    assert np.all(np.isfinite(recovered))
    load_mask_csv(cli_env / "rec/outlier_mask.csv")
    report = json.loads((cli_env / "rec/report.json").read_text())
    for key in ("stage_taken", "outlier_fraction", "weighted_rmse",
                "masked_rmse", "detection_precision", "detection_recall"):
        assert key in report
    assert report["weighted_rmse"] >= 0
    # wall-clock lives in the sidecar only, never in report.json
    assert "runtime_ms" not in report
    assert (cli_env / "rec/timing.txt").read_text().startswith("runtime_ms=")


def test_recover_clean_input_reports_stage1_only(cli_env):
    cfg = write_config(cli_env / "clean.cfg",
                       checkpoint=cli_env / "base/model.tsdm",
                       outlier_branch_threshold=1.0)
    r = run_cli("--config", cfg.name, "--out", "cln", "recover",
                "base/windows/00005.csv", cwd=cli_env)
    assert r.returncode == 0, r.stderr
    report = json.loads((cli_env / "cln/report.json").read_text())
    assert report["stage_taken"] == "stage1_only"


def test_eval_matches_library_metrics(cli_env):
    cfg = cli_env / "rec.cfg"
    r = run_cli("--config", cfg.name, "--out", "ev", "eval",
                "base/windows/00003.csv", "rec/recovered.csv",
                "--flagged", "atk/attack_truth_mask.csv",
                "--corrupt", "atk/attack_truth_mask.csv", cwd=cli_env)
    assert r.returncode == 0, r.stderr
    metrics = json.loads((cli_env / "ev/metrics.json").read_text())
    report = json.loads((cli_env / "rec/report.json").read_text())
    assert metrics["weighted_rmse"] == pytest.approx(report["weighted_rmse"],
                                                     rel=1e-9)
    gt = load_mask_csv(cli_env / "atk/attack_truth_mask.csv")
    assert (metrics["detection_precision"],
            metrics["detection_recall"]) == detection_metrics(gt, gt) == (1, 1)


def test_bench_emits_timing_table(cli_env):
    cfg = write_config(cli_env / "bench.cfg",
                       checkpoint=cli_env / "base/model.tsdm")
    r = run_cli("--config", cfg.name, "--out", "bn", "bench", cwd=cli_env)
    assert r.returncode == 0, r.stderr
    lines = (cli_env / "bn/bench_timing.csv").read_text().splitlines()
    assert lines[0] == "channels,T,s,mean_ms,std_ms,ratio_vs_full"
    table = {int(l.split(",")[2]): float(l.split(",")[5]) for l in lines[1:]}
    assert table[TINY["n_steps"]] == 1.0
    assert 0.0 < table[TINY["subseq_len"]] < 1.0


def test_sweep_default_ratio_grid(cli_env):
    cfg = write_config(cli_env / "sw.cfg",
                       checkpoint=cli_env / "base/model.tsdm")
    r = run_cli("--config", cfg.name, "--out", "sw", "sweep",
                "base/windows/00004.csv", cwd=cli_env)
    assert r.returncode == 0, r.stderr
    lines = (cli_env / "sw/sweep.csv").read_text().splitlines()
    assert lines[0] == "axis,value,weighted_rmse,masked_rmse"
    rows = [l.split(",") for l in lines[1:]]
    assert [float(row[1]) for row in rows] == [.01, .05, .10, .20, .30, .40,
                                               .50]
    assert all(row[0] == "ratio" for row in rows)
    assert all(float(row[2]) >= 0 and float(row[3]) >= 0 for row in rows)


def test_sweep_axis_and_values_follow_config(cli_env):
    cfg = write_config(cli_env / "sw2.cfg",
                       checkpoint=cli_env / "base/model.tsdm",
                       sweep_axis="repeats", sweep_values="1,2")
    r = run_cli("--config", cfg.name, "--out", "sw2", "sweep",
                "base/windows/00004.csv", cwd=cli_env)
    assert r.returncode == 0, r.stderr
    lines = (cli_env / "sw2/sweep.csv").read_text().splitlines()
    assert len(lines) == 3
    assert [l.split(",")[:2] for l in lines[1:]] == [["repeats", "1"],
                                                     ["repeats", "2"]]


def test_unknown_flag_is_usage_error(cli_env):
    r = run_cli("--frobnicate", "synth", cwd=cli_env)
    assert r.returncode == 1
    assert "usage" in r.stderr.lower()


def test_missing_subcommand_is_usage_error(cli_env):
    r = run_cli(cwd=cli_env)
    assert r.returncode == 1


def test_help_exits_zero(cli_env):
    r = run_cli("--help", cwd=cli_env)
    assert r.returncode == 0 and "usage" in r.stdout.lower()


def test_missing_input_is_runtime_failure(cli_env):
    cfg = cli_env / "rec.cfg"
    r = run_cli("--config", cfg.name, "--out", "x1", "recover",
                "no-such-file.csv", cwd=cli_env)
    assert r.returncode == 2
    assert "error:" in r.stderr


def test_unknown_config_key_is_runtime_failure(cli_env, tmp_path):
    bad = cli_env / "bad.cfg"
    bad.write_text("not_a_real_key = 3\n")
    r = run_cli("--config", bad.name, "--out", "x2", "synth", cwd=cli_env)
    assert r.returncode == 2
    assert "not_a_real_key" in r.stderr


def test_rerun_reproduces_artifacts_byte_identically(cli_env):
    cfg = write_config(cli_env / "det.cfg",
                       checkpoint=cli_env / "base/model.tsdm")

    def run_and_hash():
        r = run_cli("--config", cfg.name, "--out", "det", "recover",
                    "atk/attacked.csv", "--truth", "base/windows/00003.csv",
                    cwd=cli_env)
        assert r.returncode == 0, r.stderr
        return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                for p in sorted((cli_env / "det").iterdir())
                if p.name != "timing.txt"}

    first, second = run_and_hash(), run_and_hash()
    assert first == second and len(first) >= 4


def test_seed_flag_overrides_config(cli_env):
    cfg = write_config(cli_env / "seed.cfg",
                       checkpoint=cli_env / "base/model.tsdm")
    outs = []
    for name, seed in (("s1", 11), ("s2", 11), ("s3", 12)):
        r = run_cli("--config", cfg.name, "--seed", seed, "--out", name,
                    "recover", "atk/attacked.csv", cwd=cli_env)
        assert r.returncode == 0, r.stderr
        outs.append((cli_env / name / "recovered.csv").read_bytes())
        manifest = json.loads((cli_env / name / "manifest.json").read_text())
        assert manifest["seed"] == seed
    assert outs[0] == outs[1] and outs[0] != outs[2]
