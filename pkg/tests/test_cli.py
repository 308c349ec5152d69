import csv
import json
from pathlib import Path

import pytest

from viscoreg.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, main
from viscoreg.config import ConfigError, config_hash, load_config


def run(tmp_path, verb, name, *extra):
    return main([verb, "--out-dir", str(tmp_path / name), *extra])


CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMALL_DATA = ["--set", "data.n_traj=20", "--set", "data.traj_len=10"]


def test_gen_data_counts_and_determinism(tmp_path):
    assert run(tmp_path, "gen-data", "a", *SMALL_DATA) == EXIT_OK
    assert run(tmp_path, "gen-data", "b", *SMALL_DATA) == EXIT_OK
    a = (tmp_path / "a" / "dataset.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "dataset.jsonl").read_bytes()
    assert len(a.decode().splitlines()) == 20 * 10 + 1
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["outputs"] == mb["outputs"] and ma["seed"] == 0
    assert ma["config"]["data"]["n_traj"] == 20


def test_seed_flag_changes_output(tmp_path):
    run(tmp_path, "gen-data", "a", *SMALL_DATA)
    run(tmp_path, "gen-data", "c", *SMALL_DATA, "--seed", "9")
    assert (tmp_path / "a" / "dataset.jsonl").read_bytes() != (tmp_path / "c" / "dataset.jsonl").read_bytes()


def test_bad_ratios_and_maze_are_validation_errors(tmp_path):
    assert run(tmp_path, "gen-data", "r", "--set", "data.ratios=0.3,0.3,0.3,0.2") == EXIT_VALIDATION
    assert run(tmp_path, "gen-data", "m", "--set", "maze.name=/no/such/maze.txt") == EXIT_VALIDATION
    assert run(tmp_path, "gen-data", "k", "--set", "data.bogus=1") == EXIT_VALIDATION


def test_maze_file_is_hashed(tmp_path):
    p = tmp_path / "tiny.txt"
    p.write_text("#####\n#S.G#\n#####\n")
    assert run(tmp_path, "gen-data", "t", "--set", f"maze.name={p}", *SMALL_DATA) == EXIT_OK
    man = json.loads((tmp_path / "t" / "manifest.json").read_text())
    assert man["inputs"]["maze"]["path"] == str(p)


def test_train_and_eval_pipeline(tmp_path):
    out = "p"
    cfg = ["--config", str(CONFIGS / "empty5.ini")]
    assert run(tmp_path, "gen-data", out, *cfg) == EXIT_OK
    assert run(tmp_path, "train", out, *cfg, "--set", "train.log_every=1000") == EXIT_OK
    d = tmp_path / out
    metrics = json.loads((d / "metrics.json").read_text())
    assert metrics["max_abs_error_vs_closed_form"] <= 0.05
    assert (d / "checkpoint_0010000.json").exists()
    rows = list(csv.reader(open(d / "losses.csv")))
    assert rows[0] == ["step", "td_loss", "phy_loss", "eik_loss"] and len(rows) == 21
    assert run(tmp_path, "eval", out, *cfg, "--set", "eval.geometry_goals=40") == EXIT_OK
    ev = json.loads((d / "metrics.json").read_text())
    assert ev["success_rate"] == 1.0 and ev["n_tasks"] == 25
    assert (d / "geometry_g40_quiver.csv").exists()
    man = json.loads((d / "manifest.json").read_text())
    assert man["command"] == "eval" and "checkpoint" in man["inputs"]


def test_fk_training_reports_phy_loss(tmp_path):
    run(tmp_path, "gen-data", "f", *SMALL_DATA)
    assert run(tmp_path, "train", "f", "--set", "train.regularizer=fk", "--set", "train.n_steps=300") == EXIT_OK
    m = json.loads((tmp_path / "f" / "metrics.json").read_text())
    assert m["phy_loss"] >= 0 and m["phy_loss"] == m["phy_loss"]


def test_train_validation(tmp_path):
    run(tmp_path, "gen-data", "v", *SMALL_DATA)
    assert run(tmp_path, "train", "v", "--set", "train.regularizer=fk,eikonal") == EXIT_VALIDATION
    assert run(tmp_path, "train", "v", "--set", "train.checkpoint_every=150") == EXIT_VALIDATION
    assert run(tmp_path, "train", "missing") == EXIT_VALIDATION


def test_eval_rejects_other_maze(tmp_path):
    run(tmp_path, "gen-data", "e", *SMALL_DATA)
    run(tmp_path, "train", "e", "--set", "train.n_steps=10")
    assert run(tmp_path, "eval", "e", "--set", "maze.name=maze10") == EXIT_VALIDATION


def test_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("VISCOREG_DATA__N_TRAJ", "4")
    assert run(tmp_path, "gen-data", "env", "--set", "data.traj_len=5") == EXIT_OK
    assert len((tmp_path / "env" / "dataset.jsonl").read_text().splitlines()) == 21
    monkeypatch.setenv("VISCOREG_DATA__N_TRAJ", "many")
    assert run(tmp_path, "gen-data", "env2") == EXIT_VALIDATION


def test_config_file_precedence(tmp_path, monkeypatch):
    ini = tmp_path / "c.ini"
    ini.write_text("[data]\nn_traj = 7\ntraj_len = 3\n[run]\nseed = 4\n")
    cfg = load_config(ini, env={})
    assert cfg["data"]["n_traj"] == 7 and cfg["run"]["seed"] == 4
    cfg = load_config(ini, env={"VISCOREG_DATA__N_TRAJ": "8"}, overrides={"run.seed": "5"})
    assert cfg["data"]["n_traj"] == 8 and cfg["run"]["seed"] == 5
    assert config_hash(cfg) != config_hash(load_config(ini, env={}))
    bad = tmp_path / "bad.ini"
    bad.write_text("[nowhere]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad, env={})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini", env={})


def test_oracle_all_goal_and_strip(tmp_path):
    assert run(tmp_path, "oracle", "g", "--set", "oracle.scene=all_goal", "--set", "oracle.h=0.125") == EXIT_OK
    m = json.loads((tmp_path / "g" / "metrics.json").read_text())
    assert m["value_max"] == 0 and m["hjb_residual_max"] == 0 and m["linearized_residual_max"] == 0
    assert run(tmp_path, "oracle", "s", "--set", "oracle.scene=strip", "--set", "oracle.h=0.002",
               "--set", "oracle.nu=0.1", "--set", "oracle.n_probes=0") == EXIT_OK
    m = json.loads((tmp_path / "s" / "metrics.json").read_text())
    assert m["strip_max_rel_error"] <= 0.01 and not m["failed"]
    for name in ("psi", "value", "eikonal", "hjb_residual"):
        assert (tmp_path / "s" / f"{name}_field.csv").exists()


def test_oracle_obstacle_band(tmp_path):
    assert run(tmp_path, "oracle", "f", "--set", "oracle.bc=absorbing", "--set", "oracle.h=0.015625",
               "--set", "oracle.n_probes=2", "--set", "oracle.n_walkers=2000") == EXIT_OK
    m = json.loads((tmp_path / "f" / "metrics.json").read_text())
    assert m["band_value_exceeds_eikonal"] and m["band_mean_normal_dot"] > 0
    assert m["n_probes"] == 2 and (tmp_path / "f" / "probes.csv").exists()


def test_oracle_partial_failure_is_runtime_error(tmp_path):
    # a grid that does not tile the arena fails every solver stage
    assert run(tmp_path, "oracle", "x", "--set", "oracle.h=0.3") in (EXIT_VALIDATION, EXIT_RUNTIME)
    assert run(tmp_path, "oracle", "y", "--set", "oracle.scene=moon") == EXIT_VALIDATION


def test_ablate_small(tmp_path):
    args = ["--set", "maze.name=empty5", *SMALL_DATA, "--set", "ablate.k_grid=1,5", "--set", "ablate.nu_grid=0.1",
            "--set", "ablate.n_seeds=2", "--set", "ablate.n_steps=200", "--set", "ablate.n_tasks=5",
            "--set", "ablate.n_variance_pairs=3", "--set", "ablate.n_repeats=40"]
    assert run(tmp_path, "ablate", "a", *args) == EXIT_OK
    assert run(tmp_path, "ablate", "b", *args, "--parallel", "2") == EXIT_OK
    ra = (tmp_path / "a" / "report.csv").read_text()
    assert ra == (tmp_path / "b" / "report.csv").read_text()
    rows = list(csv.DictReader(ra.splitlines()))
    assert len(rows) == 6 and list(rows[0]) == ["sweep_param", "value", "seed", "success_rate", "mean_steps",
                                                "fk_variance", "hinge_slack", "alignment_score"]
    assert float(rows[-1]["hinge_slack"]) == 10.0
    assert len(list((tmp_path / "a" / "runs").iterdir())) == 6
    assert (tmp_path / "a" / "summary.csv").exists()


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit):
        main(["train", "--help"])
    out = capsys.readouterr().out
    for key in ("n_traj", "checkpoint_every", "jensen_k", "nu_grid", "VISCOREG_"):
        assert key in out


def test_parallel_must_be_positive(tmp_path):
    assert run(tmp_path, "gen-data", "p", "--parallel", "0") == EXIT_VALIDATION
