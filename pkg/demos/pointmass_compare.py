"""Compare BC, SAC and Fisher-BRC on one point-mass dataset tier.

    python demos/pointmass_compare.py --tier medium --steps 20000

The first call for a seed trains the online SAC agent that produces the
medium and expert data (a few minutes on one CPU).
"""
import argparse

from fisherbrc.behavior import BCConfig, train_bc
from fisherbrc.critics import CriticConfig
from fisherbrc.datasets import gen_pointmass_dataset
from fisherbrc.envs import PointMassSpec
from fisherbrc.trainer import TrainConfig, train


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--tier", default="medium", choices=["random", "medium", "expert", "mixed"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=20_000)
    p.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    args = p.parse_args()

    ds = gen_pointmass_dataset(args.tier, seed=args.seed)
    print(f"{args.tier}: {len(ds)} transitions, mean reward {ds.rewards.mean():.3f}")
    behavior = train_bc(ds.observations, ds.actions, BCConfig(), args.seed)
    spec = PointMassSpec()
    variants = {
        "bc": TrainConfig.for_algo("bc"),
        "sac": TrainConfig.for_algo("sac", steps=args.steps, dtype=args.dtype),
        "fisher-brc lam=0.1": TrainConfig.for_algo("fisher-brc", steps=args.steps, dtype=args.dtype),
        "fisher-brc lam=1": TrainConfig.for_algo("fisher-brc", steps=args.steps, dtype=args.dtype,
                                                 critic=CriticConfig(lam=1.0)),
    }
    for name, cfg in variants.items():
        r = train(ds.as_batch(), behavior, spec, cfg, args.seed)
        status = f"collapsed at step {r.collapse_step}" if r.collapsed else f"{r.final_normalized:6.1f}"
        print(f"{name:20s} normalized return {status}")


if __name__ == "__main__":
    main()
