"""Trainer, run harness and CLI on tiny budgets."""
import json

import numpy as np
import pytest

from fisherbrc import cli
from fisherbrc.behavior import BCConfig, train_bc
from fisherbrc.bandit import (LandscapeModel, argmax_actions, bandit_config, landscape_columns, landscape_grid,
                              train_bandit, value_at, write_landscape)
from fisherbrc.datasets import gen_pointmass_dataset, write_dataset
from fisherbrc.envs import PointMassSpec
from fisherbrc.harness import (RunConfig, load_run_checkpoint, read_metrics, replay_config, run_training,
                               suite_variants)
from fisherbrc.trainer import METRIC_COLUMNS, TrainConfig, train

TINY_BC = BCConfig(steps=200, n_checkpoints=1)


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    d = tmp_path_factory.mktemp("tiny")
    ds = gen_pointmass_dataset("random", size=2000, seed=0)
    write_dataset(ds, d / "random.ofrl")
    return d, ds, train_bc(ds.observations, ds.actions, TINY_BC, 0)


def _cfg(algo, **kw):
    base = dict(steps=200, eval_interval=100, eval_episodes=2, batch_size=32, dtype="float32")
    return TrainConfig.for_algo(algo, **(base | kw))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(algo="ppo")
    with pytest.raises(ValueError):
        TrainConfig(algo="sac")  # default critic is an offset critic
    with pytest.raises(ValueError):
        _cfg("sac", dtype="float16")
    cfg = _cfg("cql")
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


@pytest.mark.parametrize("algo", ["fisher-brc", "brac", "cql", "sac"])
def test_each_algorithm_runs(tiny, algo):
    _, ds, bm = tiny
    r = train(ds.as_batch(), bm, PointMassSpec(), _cfg(algo), seed=0)
    assert not r.collapsed and [row["step"] for row in r.rows] == [100, 200]
    row = r.rows[-1]
    assert set(row) == set(METRIC_COLUMNS)
    assert all(np.isfinite(v) for v in row.values())
    if algo == "fisher-brc":
        assert row["penalty"] > 0
    else:
        assert row["penalty"] == 0


def test_bc_algo_evaluates_behavior_mode(tiny):
    _, ds, bm = tiny
    r = train(ds.as_batch(), bm, PointMassSpec(), _cfg("bc"), seed=0)
    assert len(r.rows) == 1 and r.state is None
    assert np.isfinite(r.final_normalized)


def test_collapse_is_detected(tiny):
    _, ds, bm = tiny
    data = ds.as_batch()
    data = data._replace(r=data.r.at[:].set(np.nan))
    r = train(data, bm, PointMassSpec(), _cfg("fisher-brc"), seed=0)
    assert r.collapsed and r.collapse_step == 1 and r.rows == []


def test_run_directory_and_replay(tmp_path, tiny):
    d, _, _ = tiny
    rc = RunConfig(str(d / "random.ofrl"), str(tmp_path / "a"), 3, None, _cfg("fisher-brc"), TINY_BC)
    out = run_training(rc)
    for name in ("config.json", "metrics.csv", "behavior.ckpt", "final.ckpt", "summary.json"):
        assert (out / name).exists()
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["eval_seed"] == 20003 and cfg["dataset"]["size"] == 2000
    assert replay_config(out) == rc
    rows = read_metrics(out / "metrics.csv")
    assert [r["step"] for r in rows] == [100.0, 200.0]
    loaded = load_run_checkpoint(out / "final.ckpt")
    assert loaded.config == rc.train and loaded.seed == 3 and loaded.policy is not None


def test_same_seed_gives_identical_bytes(tmp_path, tiny):
    d, _, bm = tiny
    outs = []
    for name in ("x", "y"):
        rc = RunConfig(str(d / "random.ofrl"), str(tmp_path / name), 1, None, _cfg("sac"), TINY_BC)
        outs.append(run_training(rc, behavior=bm))
    for f in ("metrics.csv", "final.ckpt", "behavior.ckpt"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_suites():
    labels = [lab for lab, _ in suite_variants("lambda-sweep")]
    assert labels == ["fisher-brc_lam0", "fisher-brc_lam0.1", "fisher-brc_lam1"]
    plain = dict(suite_variants("no-offset-gp"))["no-offset-gp_lam0.1"]
    assert plain.critic.use_offset is False and plain.critic.lam == 0.1
    with pytest.raises(ValueError):
        suite_variants("nope")


def test_bandit_landscape_columns(tmp_path):
    fb = train_bandit("fisher-brc", 0, 0.1, steps=200)
    br = train_bandit("brac", 0, steps=200)
    assert bandit_config("fisher-brc").critic.penalty_source == "uniform"
    models = [LandscapeModel.from_result(fb), LandscapeModel.from_result(br)]
    cols = landscape_columns(models, landscape_grid(201), alphas=(0.1, 1.0))
    assert list(cols) == ["a", "log_mu", "fisher-brc_lam0.1_seed0", "brac_lam0_seed0_alpha0.1",
                          "brac_lam0_seed0_alpha1"]
    # the offset column is the offset plus log mu, the plain one R + alpha log mu
    a = cols["a"]
    np.testing.assert_allclose(cols["fisher-brc_lam0.1_seed0"], models[0].critic_values(a) + cols["log_mu"])
    np.testing.assert_allclose(cols["brac_lam0_seed0_alpha1"], models[1].critic_values(a) + cols["log_mu"])
    write_landscape(tmp_path / "l.csv", cols)
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert len(lines) == 202 and lines[0].startswith("a,log_mu,")
    assert value_at([0, 1], [0, 2], 0.25) == 0.5
    assert list(argmax_actions([0, 1, 2], [1, 3, 3])) == [1, 2]


def test_cli_end_to_end(tmp_path, capsys):
    data, bc = tmp_path / "b.ofrl", tmp_path / "b.ckpt"
    assert cli.main(["gen-data", "--env", "bandit", "--seed", "0", "--out", str(data), "--csv",
                     str(tmp_path / "b.csv")]) == 0
    assert cli.main(["train-bc", "--data", str(data), "--out", str(bc)]) == 0
    common = ["--data", str(data), "--bc", str(bc), "--steps", "100", "--eval-interval", "100",
              "--eval-episodes", "1", "--seed", "0"]
    assert cli.main(["train", "--algo", "fisher-brc", "--lambda", "0.1", "--out", str(tmp_path / "f")] + common) == 0
    assert cli.main(["train", "--algo", "brac", "--out", str(tmp_path / "r")] + common) == 0
    assert cli.main(["train", "--algo", "fisher-brc", "--no-offset", "--penalty-source", "data",
                     "--reward-bonus", "5", "--out", str(tmp_path / "n")] + common) == 0
    echo = json.loads((tmp_path / "n" / "config.json").read_text())
    assert echo["train"]["critic"]["use_offset"] is False
    assert echo["train"]["critic"]["penalty_source"] == "dataset"
    assert echo["train"]["critic"]["reward_bonus"] == 5.0
    assert cli.main(["landscape", "--models", str(tmp_path / "f"), str(tmp_path / "r"), "--grid", "101",
                     "--out", str(tmp_path / "land.csv")]) == 0
    header = (tmp_path / "land.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["a", "log_mu", "fisher-brc_lam0.1_seed0"] and len(header) == 3 + 6
    capsys.readouterr()
    assert cli.main(["eval", "--policy", str(tmp_path / "f"), "--episodes", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["episodes"] == 3 and np.isfinite(out["mean_return"])


def test_cli_pointmass_train(tmp_path, tiny):
    d, _, _ = tiny
    assert cli.main(["train", "--algo", "sac", "--data", str(d / "random.ofrl"), "--out", str(tmp_path / "s"),
                     "--steps", "100", "--eval-interval", "100", "--eval-episodes", "1", "--dtype", "float32"]) == 0
    summary = json.loads((tmp_path / "s" / "summary.json").read_text())
    assert summary["status"] == "completed" and summary["steps_completed"] == 100


def test_cli_ablate_plumbing(tmp_path, capsys, tiny):
    # a small random dataset stands in for the medium tier so no online SAC run is needed
    d, ds, _ = tiny
    (tmp_path / "data").mkdir()
    write_dataset(ds, tmp_path / "data" / "pointmass_medium_seed0.ofrl")
    assert cli.main(["ablate", "--suite", "no-offset-gp", "--out", str(tmp_path), "--seeds", "1", "--steps", "50",
                     "--eval-interval", "50", "--eval-episodes", "1", "--bc-steps", "50", "--dtype", "float32"]) == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.startswith("{")]
    assert [r["variant"] for r in rows] == ["fisher-brc_lam0.1", "no-offset-gp_lam0.1"]
    assert (tmp_path / "summary.csv").read_text().startswith("suite,tier,variant,seeds,")


def test_cli_rejects_unknown_algo():
    with pytest.raises(SystemExit):
        cli.main(["train", "--algo", "ppo", "--data", "x", "--out", "y"])
