"""Behavioral cloning of the data-generating policy.

The behavior density is a state-conditional mixture of tanh-squashed
Gaussians trained by maximum likelihood plus an entropy bonus whose
temperature is tuned toward a target entropy (the SAC dual update).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Sequence

import jax
import jax.numpy as jnp
import numpy as np

from . import distributions as D
from .autodiff import (NonFiniteError, ParameterSet, adam_init, adam_update,
                       init_mlp, mlp_apply)


@dataclass(frozen=True)
class BCConfig:
    steps: int = 20_000
    base_lr: float = 1e-3
    lr_milestones: tuple[float, ...] = (0.8, 0.9)
    decay_factor: float = 10.0
    batch_size: int = 256
    target_entropy: float | None = None  # None -> -action_dim
    n_components: int = 5
    hidden: tuple[int, ...] = (64, 64)
    init_temperature: float = 0.1
    n_checkpoints: int = 10

    def __post_init__(self):
        ms = tuple(self.lr_milestones)
        if any(not 0.0 < m < 1.0 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing in (0, 1): {ms}")
        if self.decay_factor <= 1.0:
            raise ValueError("decay_factor must be > 1")
        if self.steps < 1 or self.batch_size < 1 or self.n_components < 1:
            raise ValueError("steps, batch_size and n_components must be positive")


@dataclass
class BehaviorModel:
    trunk: ParameterSet
    state_dim: int
    action_dim: int
    n_components: int
    config: BCConfig = field(default_factory=BCConfig)
    loss_trace: np.ndarray | None = None
    lr_trace: np.ndarray | None = None
    checkpoint_steps: np.ndarray | None = None
    checkpoint_loglik: np.ndarray | None = None
    temperature_trace: np.ndarray | None = None

    def dist(self, states) -> D.MixtureParams:
        return behavior_dist(self.trunk, states, self.action_dim, self.n_components)

    def log_prob(self, states, actions):
        return D.log_prob(self.dist(states), actions)

    def mode(self, states):
        return D.mode(self.dist(states))


def behavior_dist(trunk: ParameterSet, states, action_dim: int, n_components: int) -> D.MixtureParams:
    return D.mixture(mlp_apply(trunk, states), action_dim, n_components)


def init_behavior(key, state_dim: int, action_dim: int, config: BCConfig) -> BehaviorModel:
    head = D.mixture_head_size(action_dim, config.n_components)
    trunk = init_mlp(key, [state_dim, *config.hidden, head])
    return BehaviorModel(trunk, state_dim, action_dim, config.n_components, config)


def lr_schedule(config: BCConfig) -> np.ndarray:
    """Per-step learning rate: ``base_lr / decay_factor**k`` after k milestones."""
    steps = np.arange(config.steps)
    bounds = [int(round(m * config.steps)) for m in config.lr_milestones]
    k = np.searchsorted(bounds, steps, side="right")
    return config.base_lr / config.decay_factor ** k.astype(np.float64)


def _bc_losses(trunk, log_alpha, s, a, key, action_dim, n_components, target_entropy):
    dist = behavior_dist(trunk, s, action_dim, n_components)
    nll = -jnp.mean(D.log_prob(dist, a))
    sampled = D.sample(dist, key)
    entropy = -jnp.mean(D.log_prob(dist, sampled))
    alpha = jnp.exp(log_alpha)
    loss = nll - jax.lax.stop_gradient(alpha) * entropy
    alpha_loss = alpha * (jax.lax.stop_gradient(entropy) - target_entropy)
    return loss, (nll, entropy, alpha_loss)


@partial(jax.jit, static_argnames=("action_dim", "n_components", "batch_size", "target_entropy"))
def _bc_chunk(carry, lrs, keys, states, actions, *, action_dim, n_components, batch_size,
              target_entropy):
    def step(carry, inp):
        trunk, log_alpha, opt, aopt = carry
        lr, key = inp
        kb, ks = jax.random.split(key)
        idx = jax.random.randint(kb, (batch_size,), 0, states.shape[0])
        s, a = states[idx], actions[idx]

        def total(tr, la):
            loss, aux = _bc_losses(tr, la, s, a, ks, action_dim, n_components, target_entropy)
            return loss, aux

        (loss, (nll, ent, _)), g = jax.value_and_grad(total, has_aux=True)(trunk, log_alpha)
        trunk, opt = adam_update(trunk, g, opt, lr)
        ga = jax.grad(lambda la: jnp.exp(la) * (jax.lax.stop_gradient(ent) - target_entropy))(log_alpha)
        log_alpha, aopt = adam_update(log_alpha, ga, aopt, lr)
        return (trunk, log_alpha, opt, aopt), (loss, jnp.exp(log_alpha))

    return jax.lax.scan(step, carry, (lrs, keys))


def train_bc(states, actions, config: BCConfig = BCConfig(), seed: int = 0) -> BehaviorModel:
    """Fit the behavior mixture to ``(states, actions)`` pairs.

    Raises :class:`NonFiniteError` if the loss diverges.
    """
    states = jnp.asarray(states, jnp.float64)
    actions = jnp.asarray(actions, jnp.float64)
    if states.ndim != 2 or actions.ndim != 2 or states.shape[0] != actions.shape[0]:
        raise ValueError("states and actions must be (N, dim) arrays of equal length")
    if states.shape[0] == 0:
        raise ValueError("empty dataset")
    state_dim, action_dim = states.shape[1], actions.shape[1]
    target_entropy = float(-action_dim if config.target_entropy is None else config.target_entropy)

    key = jax.random.PRNGKey(seed)
    k_init, k_train = jax.random.split(key)
    model = init_behavior(k_init, state_dim, action_dim, config)
    log_alpha = jnp.log(jnp.asarray(config.init_temperature, jnp.float64))
    carry = (model.trunk, log_alpha, adam_init(model.trunk), adam_init(log_alpha))

    lrs = lr_schedule(config)
    keys = jax.random.split(k_train, config.steps)
    bounds = np.linspace(0, config.steps, config.n_checkpoints + 1).astype(int)
    eval_idx = np.arange(min(states.shape[0], 10_000))
    losses, temps, ck_steps, ck_ll = [], [], [0], []
    ck_ll.append(float(jnp.mean(D.log_prob(behavior_dist(model.trunk, states[eval_idx], action_dim,
                                                         config.n_components), actions[eval_idx]))))
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi == lo:
            continue
        carry, (loss, temp) = _bc_chunk(
            carry, jnp.asarray(lrs[lo:hi]), keys[lo:hi], states, actions,
            action_dim=action_dim, n_components=config.n_components,
            batch_size=config.batch_size, target_entropy=target_entropy)
        loss = np.asarray(loss)
        if not np.all(np.isfinite(loss)):
            bad = lo + int(np.argmin(np.isfinite(loss)))
            raise NonFiniteError(f"behavior cloning diverged at step {bad}")
        losses.append(loss)
        temps.append(np.asarray(temp))
        dist = behavior_dist(carry[0], states[eval_idx], action_dim, config.n_components)
        ck_steps.append(int(hi))
        ck_ll.append(float(jnp.mean(D.log_prob(dist, actions[eval_idx]))))

    model.trunk = carry[0]
    model.loss_trace = np.concatenate(losses)
    model.lr_trace = lrs
    model.temperature_trace = np.concatenate(temps)
    model.checkpoint_steps = np.asarray(ck_steps)
    model.checkpoint_loglik = np.asarray(ck_ll)
    return model


def bc_eval_loglik(model: BehaviorModel, states, actions) -> float:
    """Mean log-likelihood of ``actions`` under the model; deterministic."""
    return float(jnp.mean(model.log_prob(jnp.asarray(states), jnp.asarray(actions))))


def fit_laplace(actions, low: float = -1.0, high: float = 1.0) -> D.LaplaceParams:
    """Maximum-likelihood Laplace fit to 1-D actions, truncated to ``[low, high]``.

    The untruncated MLE (median, mean absolute deviation) is used for the
    location and scale; the truncation only renormalizes the density.
    """
    x = np.asarray(actions, dtype=np.float64).reshape(-1)
    loc = float(np.median(x))
    scale = float(np.mean(np.abs(x - loc)))
    if scale <= 0.0:
        raise ValueError("degenerate actions: zero Laplace scale")
    return D.LaplaceParams(jnp.asarray(loc), jnp.asarray(scale), low, high)


def config_dict(config: BCConfig) -> dict:
    d = asdict(config)
    d["lr_milestones"] = list(config.lr_milestones)
    d["hidden"] = list(config.hidden)
    return d


def bc_config_from_dict(d: dict) -> BCConfig:
    d = dict(d)
    d["lr_milestones"] = tuple(d["lr_milestones"])
    d["hidden"] = tuple(d["hidden"])
    return BCConfig(**d)


def hidden_sizes(params: ParameterSet) -> Sequence[int]:
    n = sum(1 for k in params if k.startswith("w"))
    return [int(params[f"w{i}"].shape[1]) for i in range(n - 1)]
