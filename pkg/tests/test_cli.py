import csv
import json
import math

import numpy as np
import pytest

from ntklab.cli import main
from ntklab.errors import ConfigError
from ntklab.io import csv_text, load_inputs_csv, parse_config
from ntklab.kernel import eigen_bounds
from ntklab.model import LabeledDataset
from ntklab.trainer import COLUMNS

CONFIG = """
[data]
n = 12
d = 4
p = 2
seed = 1

[network]
width = 300

[train]
step_size = 0.01
max_iters = 400
loss_tol = 1e-3
record_every = 25
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(CONFIG)
    return path


def test_train_outputs(tmp_path, config, capsys):
    out = tmp_path / "out"
    assert main(["train", "--config", str(config), "--out", str(out)]) == 0
    with open(out / "trajectory.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == COLUMNS
    iters = [int(r[0]) for r in rows[1:]]
    assert all(b > a for a, b in zip(iters, iters[1:]))
    manifest = json.loads((out / "manifest.json").read_text())
    for key in ("config_hash", "seed", "build", "jitter", "terminal_loss", "wall_seconds", "outputs"):
        assert key in manifest
    for name in manifest["outputs"].values():
        assert (out / name).exists()
    for svg in ("loss.svg", "trajectory.svg"):
        text = (out / svg).read_text()
        assert text.startswith("<svg") and "href" not in text
    assert "iterations=" in capsys.readouterr().out


def test_rerun_and_replay_byte_identical(tmp_path, config):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["train", "--config", str(config), "--out", str(a)]) == 0
    assert main(["train", "--config", str(config), "--out", str(b)]) == 0
    assert main(["replay", str(a / "manifest.json"), "--out", str(c)]) == 0
    first = (a / "trajectory.csv").read_bytes()
    assert first == (b / "trajectory.csv").read_bytes() == (c / "trajectory.csv").read_bytes()


def test_seed_flag_overrides(tmp_path, config):
    assert main(["train", "--config", str(config), "--out", str(tmp_path / "a"), "--seed", "9"]) == 0
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 9


@pytest.mark.parametrize("section, line, field", [
    ("train", "step_size = -0.5", "step_size"),
    ("train", "mode = leapfrog", "mode"),
    ("train", "wall_clock = sometimes", "train.wall_clock"),
    ("train", "schedule = soon", "schedule"),
    ("network", "depth = 2", "network.depth"),
    ("data", "input_radius = huge", "data.input_radius"),
])
def test_bad_config_exit_1(tmp_path, capsys, section, line, field):
    text = CONFIG.replace(f"[{section}]\n", f"[{section}]\n{line}\n")
    path = tmp_path / "bad.ini"
    path.write_text(text)
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    assert field in capsys.readouterr().err


def test_missing_width_and_unknown_section():
    with pytest.raises(ConfigError, match="network.width"):
        parse_config("[data]\nn = 5\n")
    with pytest.raises(ConfigError, match="optim"):
        parse_config("[network]\nwidth = 5\n[optim]\nlr = 1\n")


def test_parse_config_values():
    cfg = parse_config(CONFIG)
    assert cfg.width == 300 and cfg.data.n == 12 and cfg.train.record_every == 25
    assert cfg.train.loss_tol == 1e-3 and cfg.init_scale == 1.0


def test_inline_comments_allowed():
    cfg = parse_config("[network]\nwidth = 300   ; hidden units\n[train]\nschedule = curvature  # eta / lambda_max\n")
    assert cfg.width == 300 and cfg.train.schedule == "curvature"


def test_zero_variance_train_exit_1(tmp_path, capsys):
    path = tmp_path / "p0.ini"
    path.write_text(CONFIG.replace("p = 2", "p = 0"))
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    assert "zero variance" in capsys.readouterr().err


def test_divergence_exit_2(tmp_path):
    path = tmp_path / "div.ini"
    path.write_text(CONFIG.replace("step_size = 0.01", "step_size = 1e300"))
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_unwritable_output_exit_3(tmp_path, config):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["train", "--config", str(config), "--out", str(blocker / "sub")]) == 3


def test_missing_config_exit_3(tmp_path):
    assert main(["train", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path)]) == 3


def test_replay_rejects_non_manifest(tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text("{}")
    assert main(["replay", str(bad), "--out", str(tmp_path / "o")]) == 1


def test_figure1_outputs(tmp_path, capsys):
    out = tmp_path / "fig"
    rc = main(["figure1", "--widths", "100,200", "--seeds", "2", "--max-iters", "2000",
               "--loss-tol", "1e-2", "--out", str(out)])
    assert rc == 0
    for name in ("figure1.csv", "v_perp.svg", "dist_minnorm.svg", "dist_init.svg", "manifest.json"):
        assert (out / name).exists()
    svg = (out / "v_perp.svg").read_text()
    assert svg.count("<polyline") == 2 and svg.count("<polygon") == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["widths"] == [100, 200]
    assert all(isinstance(v, bool) for v in manifest["trends"].values())
    assert len(manifest["cells"]) == 4
    assert "v_perp_non_increasing" in capsys.readouterr().out


def test_kernel_check(tmp_path):
    out = tmp_path / "k"
    assert main(["kernel-check", "--d", "5", "--trials", "100", "--seeds", "2", "--widths", "500,5000",
                 "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["series_max_err"] < 1e-10
    assert "max_entry_slope" in rep["empirical"] and rep["empirical"]["seeds"] == [0, 1]


def test_kernel_check_zero_trials(tmp_path):
    assert main(["kernel-check", "--trials", "0", "--out", str(tmp_path)]) == 1


def test_eig_bounds_synthetic(tmp_path):
    assert main(["eig-bounds", "--n", "40", "--d", "5", "--input-radius", "sqrt_d", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "eig_bounds.json").read_text())
    assert rep["sandwich_ok"] is True
    assert rep["lower_bound"] <= rep["exact_lambda_min"] <= rep["upper_bound"]


def test_eig_bounds_parallel_exit_1(tmp_path, capsys):
    path = tmp_path / "par.csv"
    path.write_text("1.0,1.0\n-1.0,-1.0\n1.0,-1.0\n")
    assert main(["eig-bounds", "--dataset", str(path)]) == 1
    assert "parallel" in capsys.readouterr().err


def test_eig_bounds_hand_dataset_matches_module(tmp_path):
    X = math.sqrt(2) * np.array([[1.0, 0.0], [0.0, 1.0], [-0.6, 0.8]])
    path = tmp_path / "hand.csv"
    path.write_text(csv_text(("x1", "x2"), X.tolist()))
    assert main(["eig-bounds", "--dataset", str(path), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "eig_bounds.json").read_text())
    direct = eigen_bounds(LabeledDataset(X, np.zeros(3)))
    assert rep["exact_lambda_min"] == pytest.approx(direct.exact_lambda_min, rel=1e-14)


def test_load_inputs_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,2\n3,abc\n")
    with pytest.raises(ConfigError):
        load_inputs_csv(path)


def test_generalize_outputs(tmp_path):
    out = tmp_path / "g"
    assert main(["generalize", "--p", "1", "--ns", "10,20", "--width", "200", "--seeds", "2",
                 "--n-test", "300", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["slope_gate"]["range"] == [-0.9, -0.25]
    assert isinstance(manifest["slope_gate"]["pass"], bool)
    with open(out / "gen_error.csv") as fh:
        assert len(list(csv.reader(fh))) == 5
    assert "fitted slope" in (out / "gen_error.svg").read_text()


def test_generalize_p2_runs(tmp_path):
    out = tmp_path / "g2"
    assert main(["generalize", "--p", "2", "--ns", "10,20", "--width", "200", "--seeds", "1",
                 "--n-test", "200", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert math.isfinite(manifest["slope"]) and len(manifest["median_gen_error"]) == 2


def test_generalize_zero_variance(tmp_path, capsys):
    assert main(["generalize", "--p", "0", "--standardize", "--out", str(tmp_path)]) == 1
    assert "zero variance" in capsys.readouterr().err


def test_threads_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("NTKLAB_THREADS", "2")
    out = tmp_path / "fig"
    assert main(["figure1", "--widths", "100", "--seeds", "2", "--max-iters", "200", "--loss-tol", "1e-1",
                 "--out", str(out)]) == 0
