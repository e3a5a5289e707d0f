import subprocess

import pytest

from toksync.cli import main

TINY_CONFIG = """\
out_dir: out
budgets: [100, 200]
drop_probs: [0.1]
loss_budget: 200
dataset:
  n_clips: 3
  n_steps: 20
  height: 6
  width: 6
codebook:
  k: 64
  dim: 16
  n_clusters: 8
dynamics:
  base_change_rate: 0.1
policies:
  intervals: [3, 5]
  tau_percentiles: [90.0]
winrate:
  n_seeds: 4
  subset_size: 3
utility:
  context_len: 2
  train_clips: 2
  sample_timesteps: 8
  sample_positions: 12
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Run generate once; simulate/sweep/utility tests share the dataset."""
    root = tmp_path_factory.mktemp("ws")
    cfg = root / "tiny.yaml"
    cfg.write_text(TINY_CONFIG)
    ret = main(["generate", "--config", str(cfg), "--out", str(root / "out")])
    assert ret == 0
    return root


def cfg_path(workspace):
    return str(workspace / "tiny.yaml")


def out_dir(workspace):
    return str(workspace / "out")


def test_missing_subcommand_is_config_error(capsys):
    assert main([]) == 1
    assert "config error" in capsys.readouterr().err


def test_unknown_flag_is_config_error(capsys):
    assert main(["generate", "--nope"]) == 1
    assert "config error" in capsys.readouterr().err


def test_invalid_config_value(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("budgets: [10]\n")
    assert main(["generate", "--config", str(bad)]) == 1
    assert "budgets" in capsys.readouterr().err


def test_missing_config_file_is_io_error(tmp_path, capsys):
    assert main(["generate", "--config", str(tmp_path / "nope.yaml")]) == 2
    assert "I/O error" in capsys.readouterr().err


def test_simulate_before_generate_is_io_error(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path / "empty")]) == 2
    assert "generate" in capsys.readouterr().err


def test_generate_outputs(workspace):
    out = workspace / "out"
    clips = sorted((out / "clips").glob("clip_*.tks"))
    assert len(clips) == 3
    assert (out / "codebook.tkcb").exists()
    assert (out / "figures" / "change_rate_hist.png").exists()
    lines = (out / "generate_stats.csv").read_text().splitlines()
    assert lines[0].startswith("# toksync config_hash=")
    stats = dict(line.split(",", 1) for line in lines[2:])
    assert float(stats["p99.9"]) >= float(stats["p99"])
    assert int(stats["n_clips"]) == 3


def test_generate_is_deterministic(tmp_path, monkeypatch):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(TINY_CONFIG)
    for d in ("run1", "run2"):
        (tmp_path / d).mkdir()
        monkeypatch.chdir(tmp_path / d)
        assert main(["generate", "--config", str(cfg)]) == 0
    a, b = tmp_path / "run1" / "out", tmp_path / "run2" / "out"
    assert (a / "clips" / "clip_00000.tks").read_bytes() == (b / "clips" / "clip_00000.tks").read_bytes()
    assert (a / "codebook.tkcb").read_bytes() == (b / "codebook.tkcb").read_bytes()
    assert (a / "generate_stats.csv").read_bytes() == (b / "generate_stats.csv").read_bytes()


def test_seed_override_changes_provenance(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(TINY_CONFIG)
    out = tmp_path / "out5"
    assert main(["generate", "--config", str(cfg), "--out", str(out), "--seed", "5"]) == 0
    first = (out / "generate_stats.csv").read_text().splitlines()[0]
    assert first.endswith("master_seed=5")


def test_simulate_outputs(workspace):
    assert main(["simulate", "--config", cfg_path(workspace), "--out", out_dir(workspace)]) == 0
    lines = (workspace / "out" / "simulate.csv").read_text().splitlines()
    assert lines[1].split(",")[:6] == [
        "policy_id", "tau_h", "interval", "budget_bytes", "drop_prob", "clip_index",
    ]
    # 3 policies x (2 lossless budgets + 1 lossy point at the loss budget) x 3 clips
    assert len(lines) == 2 + 3 * 3 * 3


def test_sweep_outputs(workspace):
    assert main(["sweep", "--config", cfg_path(workspace), "--out", out_dir(workspace)]) == 0
    out = workspace / "out"
    for name in (
        "rd_curve.csv",
        "loss_robustness.csv",
        "keyframes_vs_tau.csv",
        "utility_vs_bitrate.csv",
        "winrate.csv",
    ):
        lines = (out / name).read_text().splitlines()
        assert lines[0].startswith("# toksync config_hash="), name
        assert len(lines) >= 3, name
    for name in ("rd_curve", "loss_robustness", "keyframes_vs_tau", "utility_vs_bitrate"):
        assert (out / "figures" / f"{name}.png").exists()
    assert (out / "models" / "probe.npz").exists()
    win_last = (out / "winrate.csv").read_text().splitlines()[-1].split(",")
    assert win_last[0] == "all" and win_last[-1].endswith("/4")
    kf_lines = (out / "keyframes_vs_tau.csv").read_text().splitlines()
    assert all(line.split(",")[0].startswith("adaptive_tau") for line in kf_lines[2:])


def test_utility_outputs(workspace):
    assert main(["utility", "--config", cfg_path(workspace), "--out", out_dir(workspace)]) == 0
    lines = (workspace / "out" / "utility.csv").read_text().splitlines()
    header = lines[1].split(",")
    rows = [dict(zip(header, line.split(","))) for line in lines[2:]]
    perfect = [r for r in rows if r["policy_id"] == "periodic_n1" and r["drop_prob"] == "0.0"]
    assert perfect, "perfect-sync reference rows missing"
    assert all(r["ppl_all"] != "" for r in rows)
    assert (workspace / "out" / "figures" / "utility.png").exists()


def test_clip_codebook_mismatch_is_io_error(workspace, tmp_path, capsys):
    other = tmp_path / "k128.yaml"
    other.write_text(TINY_CONFIG.replace("k: 64", "k: 128"))
    assert main(["simulate", "--config", str(other), "--out", out_dir(workspace)]) == 2
    assert "k=64" in capsys.readouterr().err


def test_console_script_help():
    proc = subprocess.run(["toksync", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("generate", "simulate", "sweep", "utility"):
        assert sub in proc.stdout
