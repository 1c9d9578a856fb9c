"""Reproducible runs: config echo, behavior pretraining, training, outputs.

A run directory holds ``config.json`` (everything needed to replay the run),
``metrics.csv``, ``behavior.ckpt``, ``final.ckpt`` and ``summary.json``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .actors import PolicyModel
from .bandit import fit_bandit_behavior
from .behavior import BCConfig, bc_config_from_dict, train_bc
from .checkpoint import (behavior_from_section, behavior_section, load_behavior, read_checkpoint,
                         save_behavior, write_checkpoint)
from .critics import CriticConfig
from .datasets import Dataset, gen_bandit_dataset, gen_pointmass_dataset, read_dataset, write_dataset
from .envs import get_spec
from .trainer import METRIC_COLUMNS, TrainConfig, TrainResult, eval_seed, train


@dataclass(frozen=True)
class RunConfig:
    data: str
    out: str
    seed: int = 0
    bc_path: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    bc: BCConfig = field(default_factory=BCConfig)

    @property
    def algo(self) -> str:
        return self.train.algo

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["train"] = TrainConfig.from_dict(d["train"])
        d["bc"] = bc_config_from_dict(d["bc"])
        return cls(**d)


# -- outputs --------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def metrics_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in METRIC_COLUMNS])
    return buf.getvalue()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in csv.DictReader(f)]


def save_run_checkpoint(path, result: TrainResult) -> None:
    tag, sec = behavior_section(result.behavior)
    sections = {tag: sec}
    if result.state is not None:
        st = result.state
        sections["CRITIC"] = ({"use_offset": result.config.critic.use_offset},
                              {"online": st.online, "target": st.target})
        target_entropy = result.config.actor.target_entropy
        sections["POLICY"] = ({"target_entropy": target_entropy, "dtype": result.config.dtype},
                              {"trunk": st.trunk, "log_alpha": st.log_alpha})
    sections["RUN"] = ({"config": result.config.to_dict(), "seed": result.seed}, {})
    write_checkpoint(path, sections)


@dataclass
class LoadedRun:
    config: TrainConfig
    seed: int
    behavior: object
    critic: dict | None
    policy: PolicyModel | None


def load_run_checkpoint(path) -> LoadedRun:
    sec = read_checkpoint(path)
    meta = sec["RUN"][0]
    cfg = TrainConfig.from_dict(meta["config"])
    behavior = behavior_from_section(*sec["BEHAVIOR"])
    critic = sec["CRITIC"][1] if "CRITIC" in sec else None
    policy = None
    if "POLICY" in sec:
        pm, arr = sec["POLICY"]
        te = pm["target_entropy"]
        policy = PolicyModel(arr["trunk"], arr["log_alpha"], float("nan") if te is None else te)
    return LoadedRun(cfg, meta["seed"], behavior, critic, policy)


# -- the run ----------------------------------------------------------------------

def get_behavior(ds: Dataset, config: RunConfig):
    """Load the behavior model from ``bc_path`` or fit one."""
    if config.bc_path and Path(config.bc_path).exists():
        return load_behavior(config.bc_path)
    if ds.spec_id == "bandit":
        return fit_bandit_behavior(ds)
    return train_bc(ds.observations, ds.actions, config.bc, config.seed)


def run_training(config: RunConfig, behavior=None) -> Path:
    """Pretrain (or load) the behavior model, train, and write the run directory."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = read_dataset(config.data)
    spec = get_spec(ds.spec_id)
    if behavior is None:
        behavior = get_behavior(ds, config)
    save_behavior(out / "behavior.ckpt", behavior)

    echo = config.to_dict() | {"eval_seed": eval_seed(config.seed), "dataset": {
        "spec_id": ds.spec_id, "tier": ds.tier, "seed": ds.seed, "size": len(ds)}}
    if config.algo == "cql":
        echo["cql_defaults_note"] = "IS proposal and sample count are implementation choices"
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")

    result = train(ds.as_batch(), behavior, spec, config.train, config.seed)
    (out / "metrics.csv").write_text(metrics_csv(result.rows))
    save_run_checkpoint(out / "final.ckpt", result)
    last = result.rows[-1] if result.rows else {}
    summary = {"status": "collapsed" if result.collapsed else "completed",
               "collapse_step": result.collapse_step,
               "final_return": last.get("mean_return"),
               "final_normalized_return": last.get("normalized_return"),
               "steps_completed": last.get("step", 0)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out


def replay_config(run_dir) -> RunConfig:
    """RunConfig recovered from a run's ``config.json``."""
    d = json.loads((Path(run_dir) / "config.json").read_text())
    keep = {k: d[k] for k in ("data", "out", "seed", "bc_path", "train", "bc")}
    return RunConfig.from_dict(keep)


# -- ablations --------------------------------------------------------------------

SUITES = ("lambda-sweep", "no-offset-gp")
SWEEP_LAMBDAS = (0.0, 0.1, 1.0)


@dataclass(frozen=True)
class AblationSettings:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    tiers: tuple[str, ...] = ("medium", "expert")
    steps: int = 50_000
    dtype: str = "float64"
    data_seed: int = 0
    eval_interval: int = 1_000
    eval_episodes: int = 10
    bc: BCConfig = field(default_factory=BCConfig)


def suite_variants(suite: str) -> list[tuple[str, TrainConfig]]:
    """(label, train config) pairs for a suite; steps and dtype are filled in later."""
    if suite == "lambda-sweep":
        return [(f"fisher-brc_lam{lam:g}", TrainConfig(critic=CriticConfig(lam=lam))) for lam in SWEEP_LAMBDAS]
    if suite == "no-offset-gp":
        return [("fisher-brc_lam0.1", TrainConfig(critic=CriticConfig(lam=0.1))),
                ("no-offset-gp_lam0.1", TrainConfig(critic=CriticConfig(lam=0.1, use_offset=False)))]
    raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")


def ensure_dataset(data_dir: Path, tier: str, seed: int) -> Path:
    path = data_dir / f"pointmass_{tier}_seed{seed}.ofrl"
    if not path.exists():
        data_dir.mkdir(parents=True, exist_ok=True)
        write_dataset(gen_pointmass_dataset(tier, seed=seed), path)
    return path


def run_ablation(suite: str, out, settings: AblationSettings = AblationSettings(),
                 log=print) -> list[dict]:
    """Run every variant over every seed and tier; write ``summary.csv`` and ``summary.json``.

    Collapsed runs are counted and left out of the mean.
    """
    variants = suite_variants(suite)
    tiers = ("medium",) if suite == "no-offset-gp" else settings.tiers
    out = Path(out)
    table = []
    behaviors: dict = {}
    for tier in tiers:
        data = ensure_dataset(out / "data", tier, settings.data_seed)
        ds = read_dataset(data)
        for label, base in variants:
            finals, collapses = [], 0
            for seed in settings.seeds:
                key = (tier, seed)
                if key not in behaviors:
                    behaviors[key] = train_bc(ds.observations, ds.actions, settings.bc, seed)
                cfg = replace(base, steps=settings.steps, dtype=settings.dtype,
                              eval_interval=min(settings.eval_interval, max(settings.steps, 1)),
                              eval_episodes=settings.eval_episodes)
                rc = RunConfig(str(data), str(out / tier / label / f"seed{seed}"), seed, None, cfg, settings.bc)
                run_dir = run_training(rc, behavior=behaviors[key])
                summary = json.loads((run_dir / "summary.json").read_text())
                if summary["status"] == "collapsed":
                    collapses += 1
                else:
                    finals.append(summary["final_normalized_return"])
                log(f"{suite} {tier} {label} seed{seed}: {summary['status']} "
                    f"{summary['final_normalized_return']}")
            table.append({"suite": suite, "tier": tier, "variant": label, "seeds": len(settings.seeds),
                          "mean_normalized_return": float(np.mean(finals)) if finals else math.nan,
                          "std_normalized_return": float(np.std(finals)) if finals else math.nan,
                          "collapses": collapses})
    write_summary(out, table)
    return table


def write_summary(out: Path, table: list[dict]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cols = ["suite", "tier", "variant", "seeds", "mean_normalized_return", "std_normalized_return", "collapses"]
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(cols)
        for r in table:
            w.writerow([_fmt(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    (out / "summary.json").write_text(json.dumps(table, indent=2) + "\n")


def gen_data(env: str, tier: str, seed: int, out) -> Dataset:
    ds = gen_bandit_dataset(seed) if env == "bandit" else gen_pointmass_dataset(tier, seed=seed)
    write_dataset(ds, out)
    return ds


__all__ = ["RunConfig", "run_training", "replay_config", "run_ablation", "AblationSettings",
           "metrics_csv", "read_metrics", "load_run_checkpoint", "save_run_checkpoint", "gen_data",
           "suite_variants", "SUITES"]
