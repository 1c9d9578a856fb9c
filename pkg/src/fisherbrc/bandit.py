"""The 1-D continuous bandit: fitted behavior, trained critics, landscapes.

Rewards are observed only on ``[-0.25, 0.25]``. A Laplace behavior density is
fitted to the logged actions and the critics are trained with the common
offline loop, after which their value landscapes over ``[-1, 1]`` can be
compared on a grid.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import jax.numpy as jnp
import numpy as np

from .behavior import fit_laplace
from .critics import CriticConfig, twin_values
from .datasets import Dataset, gen_bandit_dataset
from .distributions import LaplaceParams, log_prob
from .envs import ToyBanditSpec
from .oracles import Grid1D
from .trainer import TrainConfig, TrainResult, train

BRAC_ALPHAS = (0.03, 0.1, 0.3, 1.0, 3.0, 10.0)


def bandit_config(algo: str, lam: float = 0.1, steps: int = 5_000, dtype: str = "float64") -> TrainConfig:
    """Fisher-BRC (offset critic) or a plain reward critic; gamma is zero on a bandit.

    The offset penalty is taken at uniform actions on ``[-1, 1]``, the
    landscape a uniformly initialized policy would probe.
    """
    if algo == "fisher-brc":
        critic = CriticConfig(lam=lam, gamma=0.0, penalty_source="uniform")
    else:
        critic = CriticConfig(lam=0.0, gamma=0.0, use_offset=False)
    return TrainConfig(algo=algo, steps=steps, eval_interval=min(1_000, max(steps, 1)), eval_episodes=1,
                       dtype=dtype, critic=critic)


def fit_bandit_behavior(ds: Dataset) -> LaplaceParams:
    return fit_laplace(ds.actions[:, 0], -1.0, 1.0)


def train_bandit(algo: str, seed: int = 0, lam: float = 0.1, steps: int = 5_000,
                 dtype: str = "float64", ds: Dataset | None = None) -> TrainResult:
    ds = gen_bandit_dataset(seed) if ds is None else ds
    return train(ds.as_batch(), fit_bandit_behavior(ds), ToyBanditSpec(), bandit_config(algo, lam, steps, dtype), seed)


@dataclass(frozen=True)
class LandscapeModel:
    """A trained bandit critic and the behavior density it was trained with."""
    label: str
    algo: str
    critic: dict
    behavior: LaplaceParams
    use_offset: bool
    lam: float = 0.0

    @classmethod
    def from_result(cls, result: TrainResult, label: str | None = None) -> "LandscapeModel":
        c = result.config.critic
        label = label or f"{result.config.algo}_lam{c.lam:g}_seed{result.seed}"
        return cls(label, result.config.algo, result.state.online, result.behavior, c.use_offset, c.lam)

    def critic_values(self, actions) -> np.ndarray:
        """Min-twin critic output without the behavior term (the offset, or R for a plain critic)."""
        a = jnp.asarray(actions, jnp.float64).reshape(-1, 1)
        params = _cast64(self.critic)
        q1, q2 = twin_values(params, jnp.zeros_like(a), a, None, False)
        return np.asarray(jnp.minimum(q1, q2))

    def log_mu(self, actions) -> np.ndarray:
        return np.asarray(log_prob(self.behavior, jnp.asarray(actions, jnp.float64)))


def _cast64(tree):
    if isinstance(tree, dict):
        return {k: _cast64(v) for k, v in tree.items()}
    return jnp.asarray(tree, jnp.float64)


def landscape_columns(models: list[LandscapeModel], grid: Grid1D,
                      alphas=BRAC_ALPHAS) -> dict[str, np.ndarray]:
    """Grid columns: ``a``, ``log_mu``, then ``O + log mu`` per offset model and
    ``R + alpha log mu`` per plain model and alpha."""
    if not models:
        raise ValueError("no models given")
    a = np.asarray(grid.points)
    cols = {"a": a, "log_mu": models[0].log_mu(a)}
    for m in models:
        lm = m.log_mu(a)
        v = m.critic_values(a)
        if m.use_offset:
            cols[m.label] = v + lm
        else:
            for alpha in alphas:
                cols[f"{m.label}_alpha{alpha:g}"] = v + alpha * lm
    return cols


def write_landscape(path, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(names)
        for i in range(len(columns["a"])):
            w.writerow([repr(float(columns[n][i])) for n in names])


def argmax_actions(a, values, tol: float = 1e-9) -> np.ndarray:
    """All grid actions within ``tol`` of the maximum value."""
    a, values = np.asarray(a), np.asarray(values)
    return a[values >= values.max() - tol]


def value_at(a, values, x: float) -> float:
    """Linear interpolation of a landscape at ``x``."""
    return float(np.interp(x, np.asarray(a), np.asarray(values)))


def landscape_grid(n: int = 2001) -> Grid1D:
    return Grid1D(-1.0, 1.0, n)


def relabel(model: LandscapeModel, label: str) -> LandscapeModel:
    return replace(model, label=label)
