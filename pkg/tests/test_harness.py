import csv
import filecmp

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kronqn.cli import main
from kronqn.config import ConfigError, PRESETS, RunConfig, preset_config
from kronqn.harness import CSV_HEADER, RunLog, cell_seed, parse_grid, run_grid, run_training, select_best


def tiny_config(**over):
    cfg = RunConfig()
    cfg.model.arch = "16-8-4-8-16"
    cfg.model.loss = "bce_with_sigmoid"
    cfg.data.source = "curves"
    cfg.data.dims = "4"
    cfg.data.n_samples = 60
    cfg.run.epochs = 2
    cfg.run.batch_size = 20
    cfg.optimizer.lr = 0.01
    cfg.optimizer.damping = 1.0
    for k, v in over.items():
        cfg.set(k.replace("__", "."), v)
    return cfg


def test_config_round_trip_and_strictness():
    cfg = tiny_config(optimizer__name="kfac", run__drop_last="true")
    assert RunConfig.parse(cfg.render()) == cfg
    with pytest.raises(ConfigError):
        RunConfig.parse("[model]\nbogus = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.parse("[extra]\nx = 1\n")
    with pytest.raises(ConfigError):
        RunConfig().set("optimizer.lr", "fast")


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-6, 10.0), st.integers(1, 50), st.booleans(), st.text("abc-", min_size=1, max_size=8))
def test_config_round_trip_property(lr, freq, wall, name):
    cfg = RunConfig()
    cfg.optimizer.lr = lr
    cfg.optimizer.update_freq = freq
    cfg.run.log_wallclock = wall
    cfg.model.arch = name
    assert RunConfig.parse(cfg.render()) == cfg


def test_presets():
    k = preset_config("mnist-ae-kbfgs")
    assert (k.run.batch_size, k.optimizer.update_freq, k.optimizer.beta, k.optimizer.mu1) == (1000, 1, 0.9, 0.2)
    assert preset_config("mnist-ae-kbfgs-amortized").optimizer.update_freq == 20
    assert set(PRESETS) >= {"mnist-ae-kbfgs", "mnist-ae-kbfgsl", "mnist-ae-kfac", "mnist-ae-adam", "mnist-ae-sgdm"}
    with pytest.raises(ConfigError):
        preset_config("nope")


@pytest.mark.parametrize("name", ["kbfgs", "kbfgsl", "kbfgsl-conv", "kfac", "adam", "sgdm"])
def test_every_optimizer_trains(name, tmp_path):
    cfg = tiny_config(optimizer__name=name, optimizer__lr=0.001 if name == "adam" else 0.01)
    rl = run_training(cfg, csv_path=tmp_path / "log.csv")
    assert rl.status == "completed"
    ks = [r.k for r in rl.rows]
    assert ks == sorted(ks) and ks[-1] == 6
    assert np.isfinite(rl.final_loss)
    back = RunLog.from_csv(tmp_path / "log.csv")
    assert back.rows == rl.rows


def test_csv_schema(tmp_path):
    run_training(tiny_config(), csv_path=tmp_path / "log.csv")
    with open(tmp_path / "log.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_HEADER
    assert rows[-1][-1] == "completed" and all(r[-1] == "running" for r in rows[1:-1])


@pytest.mark.parametrize("name", ["sgdm", "kbfgs", "kbfgsl", "kfac"])
def test_divergence_is_recorded(name):
    rl = run_training(tiny_config(optimizer__name=name, optimizer__lr=1e6))
    assert rl.status == "diverged"
    assert np.isnan(rl.final_loss)


def test_cli_train_replay_is_byte_identical(tmp_path):
    cfg_path = tmp_path / "run.ini"
    tiny_config().save(cfg_path)
    for d in ("a", "b"):
        assert main(["train", "--config", str(cfg_path), "--seed", "3", "--out", str(tmp_path / d)]) == 0
    assert filecmp.cmp(tmp_path / "a" / "run.csv", tmp_path / "b" / "run.csv", shallow=False)


def test_cli_exit_codes(tmp_path, capsys):
    cfg_path = tmp_path / "run.ini"
    tiny_config(optimizer__name="sgdm", optimizer__lr=1e6).save(cfg_path)
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path)]) != 0
    assert main(["train", "--config", str(tmp_path / "missing.ini")]) == 2
    (tmp_path / "bad.ini").write_text("[model]\nwat = 1\n")
    assert main(["train", "--config", str(tmp_path / "bad.ini")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["verify", "nonsense"])
    assert exc.value.code == 2


def test_cli_verify_damping(capsys):
    assert main(["verify", "damping"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 2 and "FAIL" not in out


def test_grid_counts_and_best(tmp_path):
    cfg_path, grid_path = tmp_path / "base.ini", tmp_path / "grid.ini"
    tiny_config(optimizer__name="sgdm").save(cfg_path)
    grid_path.write_text("[grid]\noptimizer.lr = 0.01, 1e6\noptimizer.beta = 0.9, 0.5\n")
    out = tmp_path / "g"
    assert main(["grid", "--config", str(cfg_path), "--grid", str(grid_path), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["cell_000.csv", "cell_001.csv", "cell_002.csv",
                                                     "cell_003.csv", "summary.csv"]
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert {r["status"] for r in rows if r["optimizer.lr"] == "1e6"} == {"diverged"}
    # independent argmin over the written summary
    ok = [r for r in rows if r["status"] == "completed"]
    best = min(ok, key=lambda r: float(r["final_loss"]))
    printed = [line for line in open(out / "summary.csv")]
    assert len(printed) == 5
    _, best_cell = run_grid(RunConfig.load(cfg_path), parse_grid(grid_path.read_text()), tmp_path / "g2")
    assert str(best_cell["cell"]) == best["cell"]


def test_grid_seeds_and_selection():
    assert cell_seed(0, 1) == cell_seed(0, 1) and cell_seed(0, 1) != cell_seed(0, 2)
    rows = [{"cell": 0, "final_loss": float("nan"), "status": "diverged"},
            {"cell": 1, "final_loss": 3.0, "status": "completed"},
            {"cell": 2, "final_loss": 2.0, "status": "completed"}]
    assert select_best(rows)["cell"] == 2
    assert select_best(rows[:1]) is None
    with pytest.raises(ConfigError):
        parse_grid("[grid]\nmodel.nothing = 1, 2\n")


def test_blown_up_curvature_is_divergence_not_crash():
    # this setting overflows H_G before the loss itself turns non-finite
    cfg = RunConfig()
    cfg.model.arch = "64-32-8-32-64"
    cfg.data.dims = "8"
    cfg.data.n_samples = 1000
    cfg.run.epochs = 5
    cfg.run.batch_size = 100
    cfg.optimizer.lr = 3.0
    cfg.optimizer.damping = 0.3
    for seed in (cell_seed(0, 4), cell_seed(0, 5)):
        rl = run_training(cfg.replace(run__seed=seed))
        assert rl.status == "diverged"
