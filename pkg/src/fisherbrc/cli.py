"""Command-line entry point: ``fisherbrc <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .actors import ActorConfig
from .baselines import CQLConfig
from .behavior import BCConfig
from .critics import CriticConfig
from .trainer import ALGOS, TrainConfig


def _train_config(args) -> TrainConfig:
    plain = args.algo != "fisher-brc" or args.no_offset
    lam = args.lam if args.lam is not None else (0.1 if args.algo == "fisher-brc" else 0.0)
    critic = CriticConfig(lam=lam, use_offset=not plain, reward_bonus=args.reward_bonus,
                          penalty_source={"data": "dataset"}.get(args.penalty_source, args.penalty_source))
    return TrainConfig(algo=args.algo, steps=args.steps, eval_interval=args.eval_interval,
                       eval_episodes=args.eval_episodes, dtype=args.dtype, critic=critic,
                       actor=ActorConfig(brac_alpha=args.brac_alpha),
                       cql=CQLConfig(weight=args.cql_weight))


def cmd_gen_data(args):
    from .datasets import export_csv
    from .harness import gen_data

    ds = gen_data(args.env, args.tier, args.seed, args.out)
    if args.csv:
        export_csv(ds, args.csv)
    print(f"wrote {len(ds)} transitions ({ds.spec_id}/{ds.tier}, seed {ds.seed}) to {args.out}")


def cmd_train_bc(args):
    from .behavior import bc_eval_loglik, train_bc
    from .checkpoint import save_behavior
    from .datasets import read_dataset
    from .bandit import fit_bandit_behavior

    ds = read_dataset(args.data)
    if ds.spec_id == "bandit":
        model = fit_bandit_behavior(ds)
        print(f"Laplace fit: loc={float(model.loc):.6g} scale={float(model.scale):.6g}")
    else:
        model = train_bc(ds.observations, ds.actions, BCConfig(steps=args.steps), args.seed)
        print(f"train log-likelihood {bc_eval_loglik(model, ds.observations, ds.actions):.4f}")
    save_behavior(args.out, model)


def cmd_train(args):
    from .harness import RunConfig, run_training

    rc = RunConfig(args.data, args.out, args.seed, args.bc, _train_config(args))
    out = run_training(rc)
    print((out / "summary.json").read_text().strip())


def cmd_landscape(args):
    from .bandit import BRAC_ALPHAS, LandscapeModel, landscape_columns, landscape_grid, write_landscape
    from .harness import load_run_checkpoint

    models = []
    for m in args.models:
        path = Path(m)
        run = load_run_checkpoint(path / "final.ckpt" if path.is_dir() else path)
        if run.critic is None:
            sys.exit(f"{m}: no critic in checkpoint")
        if run.config.critic.use_offset is False and run.config.algo == "fisher-brc" and run.config.critic.lam > 0:
            label = f"no-offset_lam{run.config.critic.lam:g}_seed{run.seed}"
        elif run.config.critic.use_offset:
            label = f"fisher-brc_lam{run.config.critic.lam:g}_seed{run.seed}"
        else:
            label = f"{run.config.algo}_seed{run.seed}"
        models.append(LandscapeModel(label, run.config.algo, run.critic["online"], run.behavior,
                                     run.config.critic.use_offset, run.config.critic.lam))
    if any(getattr(m.behavior, "loc", None) is None for m in models):
        sys.exit("landscapes need a 1-D bandit run")
    cols = landscape_columns(models, landscape_grid(args.grid), args.alphas or BRAC_ALPHAS)
    write_landscape(args.out, cols)
    print(f"wrote {len(cols) - 1} columns x {args.grid} rows to {args.out}")


def cmd_ablate(args):
    from .harness import AblationSettings, run_ablation

    settings = AblationSettings(seeds=tuple(range(args.seeds)), steps=args.steps, dtype=args.dtype,
                                eval_interval=args.eval_interval, eval_episodes=args.eval_episodes,
                                bc=BCConfig(steps=args.bc_steps))
    table = run_ablation(args.suite, args.out, settings)
    for row in table:
        print(json.dumps(row))


def cmd_eval(args):
    from .envs import ToyBanditSpec, get_spec
    from .harness import load_run_checkpoint
    from .trainer import evaluate_behavior, evaluate_trunk

    path = Path(args.policy)
    run = load_run_checkpoint(path / "final.ckpt" if path.is_dir() else path)
    spec = ToyBanditSpec() if getattr(run.behavior, "loc", None) is not None else get_spec("pointmass")
    if run.policy is None:
        ret, norm = evaluate_behavior(run.behavior, spec, args.episodes, args.seed)
    else:
        ret, norm = evaluate_trunk(run.policy.trunk, spec, args.episodes, args.seed)
    print(json.dumps({"episodes": args.episodes, "seed": args.seed, "mean_return": ret,
                      "normalized_return": norm}))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fisherbrc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate an offline dataset")
    g.add_argument("--env", choices=["bandit", "pointmass"], required=True)
    g.add_argument("--tier", choices=["random", "medium", "expert", "mixed"], default="random")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--csv", help="also export a CSV copy")
    g.set_defaults(func=cmd_gen_data)

    b = sub.add_parser("train-bc", help="fit the behavior density")
    b.add_argument("--data", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--steps", type=int, default=BCConfig.steps)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_train_bc)

    t = sub.add_parser("train", help="run offline training")
    t.add_argument("--algo", choices=ALGOS, required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--bc", help="behavior checkpoint (fitted on the fly when absent)")
    t.add_argument("--lambda", dest="lam", type=float, default=None)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--no-offset", action="store_true", help="plain critic (penalty on grad_a Q)")
    t.add_argument("--penalty-source", choices=["policy", "data", "uniform"], default="policy")
    t.add_argument("--reward-bonus", type=float, default=0.0)
    t.add_argument("--steps", type=int, default=TrainConfig.steps)
    t.add_argument("--eval-interval", type=int, default=TrainConfig.eval_interval)
    t.add_argument("--eval-episodes", type=int, default=TrainConfig.eval_episodes)
    t.add_argument("--dtype", choices=["float32", "float64"], default=TrainConfig.dtype)
    t.add_argument("--brac-alpha", type=float, default=ActorConfig.brac_alpha)
    t.add_argument("--cql-weight", type=float, default=CQLConfig.weight)
    t.set_defaults(func=cmd_train)

    l = sub.add_parser("landscape", help="export bandit critic landscapes")
    l.add_argument("--models", nargs="+", required=True, help="run directories or final.ckpt files")
    l.add_argument("--grid", type=int, default=2001)
    l.add_argument("--alphas", type=float, nargs="*")
    l.add_argument("--out", required=True)
    l.set_defaults(func=cmd_landscape)

    a = sub.add_parser("ablate", help="run an ablation suite")
    a.add_argument("--suite", choices=["lambda-sweep", "no-offset-gp"], required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", type=int, default=5)
    a.add_argument("--steps", type=int, default=TrainConfig.steps)
    a.add_argument("--dtype", choices=["float32", "float64"], default=TrainConfig.dtype)
    a.add_argument("--eval-interval", type=int, default=TrainConfig.eval_interval)
    a.add_argument("--eval-episodes", type=int, default=TrainConfig.eval_episodes)
    a.add_argument("--bc-steps", type=int, default=BCConfig.steps)
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="evaluate a trained policy")
    e.add_argument("--policy", required=True, help="run directory or final.ckpt")
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
