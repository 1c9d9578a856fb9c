"""Train Fisher-BRC and BRAC on the 1-D bandit and print where each landscape peaks.

    python demos/bandit_landscape.py [--seed 0] [--out landscape.csv]
"""
import argparse

import numpy as np

from fisherbrc.bandit import (BRAC_ALPHAS, LandscapeModel, argmax_actions, landscape_columns, landscape_grid,
                              train_bandit, value_at, write_landscape)


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="landscape.csv")
    args = p.parse_args()

    models = [LandscapeModel.from_result(train_bandit("fisher-brc", args.seed, lam)) for lam in (0.1, 1.0)]
    models.append(LandscapeModel.from_result(train_bandit("brac", args.seed)))
    cols = landscape_columns(models, landscape_grid(), BRAC_ALPHAS)
    write_landscape(args.out, cols)

    a = cols["a"]
    for name, v in cols.items():
        if name in ("a", "log_mu"):
            continue
        peaks = np.round(argmax_actions(a, v), 3)
        print(f"{name:32s} argmax {peaks.tolist()}  v(0.25)={value_at(a, v, 0.25):8.3f}  "
              f"v(0.75)={value_at(a, v, 0.75):8.3f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
