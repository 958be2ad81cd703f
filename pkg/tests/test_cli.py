"""Command-line surface: wiring, exit codes, and output formats."""

import re

import numpy as np

from adair import degrade as D
from adair.cli import main
from adair.ppm import read_image, write_image

DESK_ARGS = [
    "--set", "base_channels=8", "--set", "tb_counts=1,1,1,1",
    "--set", "refinement_blocks=1", "--set", "precision=float32",
]


def _write_pair(tmp_path, seed=0, size=24):
    clean = D.make_test_image(size, size, seed=seed)
    noisy = D.add_gaussian_noise(clean, 25.0, seed=seed + 1)
    cp, dp = tmp_path / "clean.ppm", tmp_path / "degraded.ppm"
    write_image(cp, clean)
    write_image(dp, noisy)
    return cp, dp


# ---------------------------------------------------------------------------
# params
# ---------------------------------------------------------------------------

def test_params_baseline_matches_published_total(capsys):
    code = main(["params", "--config", "configs/paper_scale.cfg", "--no-aflb"])
    out = capsys.readouterr().out
    assert code == 0
    total = int(re.search(r"total parameters: ([\d,]+)", out).group(1).replace(",", ""))
    assert abs(total - 26.13e6) / 26.13e6 < 0.03


def test_params_full_reports_overhead(capsys):
    code = main(["params", "--config", "configs/paper_scale.cfg"])
    out = capsys.readouterr().out
    assert code == 0
    assert "overhead" in out and "2.64M" in out


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def test_analyze_identical_images_zero_curve(tmp_path, capsys):
    clean, _ = _write_pair(tmp_path)
    out_csv = tmp_path / "curve.csv"
    code = main(["analyze", "--clean", str(clean), "--degraded", str(clean),
                 "--out", str(out_csv)])
    assert code == 0
    rows = out_csv.read_text().strip().splitlines()[1:]
    assert len(rows) == 160
    assert all(float(r.split(",")[1]) == 0.0 for r in rows)


def test_analyze_deterministic_and_plots(tmp_path, capsys):
    clean, degraded = _write_pair(tmp_path, seed=3)
    a_csv, b_csv = tmp_path / "a.csv", tmp_path / "b.csv"
    svg = tmp_path / "curve.svg"
    assert main(["analyze", "--clean", str(clean), "--degraded", str(degraded),
                 "--out", str(a_csv), "--plot", str(svg), "--tag", "noise"]) == 0
    assert main(["analyze", "--clean", str(clean), "--degraded", str(degraded),
                 "--out", str(b_csv)]) == 0
    assert a_csv.read_bytes() == b_csv.read_bytes()
    assert svg.read_text().startswith("<svg")


# ---------------------------------------------------------------------------
# train / eval / restore pipeline
# ---------------------------------------------------------------------------

def test_train_eval_restore_roundtrip(tmp_path, capsys, monkeypatch):
    # tiny manifest-backed run end to end
    clean = D.make_test_image(40, 40, seed=7)
    clean_path = tmp_path / "c.ppm"
    write_image(clean_path, clean)
    spec = D.DegradationSpec("noise", {"sigma": 25.0}, seed=3)
    manifest = tmp_path / "data.tsv"
    D.write_manifest(manifest, [(str(clean_path), spec, 3)])

    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "base_channels = 8\ntb_counts = 1,1,1,1\nrefinement_blocks = 1\n"
        "precision = float32\nsteps = 3\nbatch_size = 1\npatch = 24\nseed = 1\n"
    )
    out = tmp_path / "run"
    code = main(["train", "--config", str(cfg), "--data", str(manifest),
                 "--out", str(out)])
    assert code == 0
    assert (out / "final.ckpt").exists()
    history = (out / "history.csv").read_text().strip().splitlines()
    assert history[0] == "step,loss,psnr_val"
    assert len(history) == 4

    assert main(["eval", "--checkpoint", str(out / "final.ckpt"),
                 "--data", str(manifest)]) == 0
    table = capsys.readouterr().out
    assert "noise" in table and "psnr" in table

    restored_dir = tmp_path / "restored"
    assert main(["restore", "--checkpoint", str(out / "final.ckpt"),
                 "--input", str(tmp_path / "c.ppm"), "--out", str(restored_dir)]) == 0
    restored = read_image(restored_dir / "c.ppm")
    assert restored.shape == (3, 40, 40)


def test_train_seed_env_fallback(tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "base_channels = 8\ntb_counts = 1,1,1,1\nrefinement_blocks = 1\n"
        "precision = float32\nsteps = 2\nbatch_size = 1\npatch = 16\n"
    )
    clean = D.make_test_image(16, 16, seed=1)
    write_image(tmp_path / "c.ppm", clean)
    manifest = tmp_path / "data.tsv"
    D.write_manifest(manifest, [(str(tmp_path / "c.ppm"),
                                 D.DegradationSpec("noise", {"sigma": 25.0}), 0)])
    monkeypatch.setenv("ADAIR_SEED", "9")

    def run(out):
        assert main(["train", "--config", str(cfg), "--data", str(manifest),
                     "--out", str(out)]) == 0
        return (out / "history.csv").read_bytes()

    assert run(tmp_path / "a") == run(tmp_path / "b")


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def test_gradcheck_exits_zero_and_reports_blocks(capsys):
    assert main(["gradcheck", "--seed", "7"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 10 and "FAIL" not in out
    for name in ("mask_generator", "cross_attention", "high_to_low", "low_to_high",
                 "merge", "mdta", "gdfn", "transformer_block",
                 "frequency_learning_block", "full_desk_model"):
        assert name in out


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------

def test_usage_error_exits_1(capsys):
    assert main(["params"]) == 1  # missing --config
    assert main(["not-a-command"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_runtime_error_exits_2(tmp_path, capsys):
    missing = tmp_path / "nope.ckpt"
    assert main(["restore", "--checkpoint", str(missing),
                 "--input", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("base_channels = 8\nwarp_drive = on\n")
    assert main(["params", "--config", str(cfg)]) == 2
    assert "warp_drive" in capsys.readouterr().err
