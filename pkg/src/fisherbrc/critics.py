"""Twin critics, optionally in offset form ``Q(s, a) = O(s, a) + log mu(a|s)``.

The same twin networks serve two roles. With ``use_offset`` they are the
offsets O1, O2 and the behavior log-density is added on top; without it they
are plain Q networks (BRAC, CQL, SAC and the no-offset ablation).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .actors import PolicyModel, sample_with_log_prob
from .autodiff import (NonFiniteError, ParameterSet, adam_init, adam_update,
                       init_mlp, mlp_apply, polyak)

LogMu = Callable[..., jax.Array]  # (states, actions) -> log mu(a|s)


class Batch(NamedTuple):
    s: jax.Array
    a: jax.Array
    r: jax.Array
    sp: jax.Array
    done: jax.Array


@dataclass(frozen=True)
class CriticConfig:
    lam: float = 0.1
    gamma: float = 0.99
    tau: float = 0.005
    reward_bonus: float = 0.0
    use_offset: bool = True
    penalty_source: str = "policy"  # "dataset", or "uniform" on [-1, 1]^d
    penalty_reduce: str = "sum"  # over twins: "sum" or "mean"
    penalty_samples: int = 1
    soft_targets: bool = False
    lr: float = 3e-4
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.penalty_source not in ("policy", "dataset", "uniform"):
            raise ValueError(f"unknown penalty_source {self.penalty_source!r}")
        if self.penalty_reduce not in ("sum", "mean"):
            raise ValueError(f"unknown penalty_reduce {self.penalty_reduce!r}")


def init_critic_params(key, state_dim: int, action_dim: int, hidden=(64, 64)) -> ParameterSet:
    """Twin networks with zeroed output layers, so offsets start at exactly 0."""
    k1, k2 = jax.random.split(key)
    sizes = [state_dim + action_dim, *hidden, 1]
    return {"q1": init_mlp(k1, sizes, zero_final=True), "q2": init_mlp(k2, sizes, zero_final=True)}


def net_apply(net: ParameterSet, s, a):
    return mlp_apply(net, jnp.concatenate([s, a], axis=-1))[..., 0]


def twin_values(params: ParameterSet, s, a, log_mu: LogMu | None, use_offset: bool,
                log_mu_sa=None):
    q1, q2 = net_apply(params["q1"], s, a), net_apply(params["q2"], s, a)
    if use_offset:
        lm = log_mu(s, a) if log_mu_sa is None else log_mu_sa
        q1, q2 = q1 + lm, q2 + lm
    return q1, q2


@dataclass
class CriticPair:
    online: ParameterSet
    target: ParameterSet
    behavior: object | None  # BehaviorModel, or anything with .log_prob(s, a)
    config: CriticConfig

    @property
    def log_mu(self) -> LogMu | None:
        return None if self.behavior is None else self.behavior.log_prob


def init_critic(key, state_dim: int, action_dim: int, behavior, config: CriticConfig = CriticConfig()) -> CriticPair:
    if config.use_offset and behavior is None:
        raise ValueError("offset critic needs a behavior model")
    params = init_critic_params(key, state_dim, action_dim, config.hidden)
    return CriticPair(params, jax.tree_util.tree_map(jnp.copy, params), behavior, config)


def q_value(critic: CriticPair, s, a, which: str = "online-min"):
    """Critic value; ``which`` is online-min, target-min, online-1 or online-2."""
    params = critic.target if which == "target-min" else critic.online
    q1, q2 = twin_values(params, s, a, critic.log_mu, critic.config.use_offset)
    if which in ("online-min", "target-min"):
        return jnp.minimum(q1, q2)
    if which == "online-1":
        return q1
    if which == "online-2":
        return q2
    raise ValueError(f"unknown critic selector {which!r}")


def frozen_q_fn(critic: CriticPair):
    """min-twin Q with critic parameters gradient-blocked (actions stay live)."""
    params = jax.lax.stop_gradient(critic.online)

    def q(s, a):
        return jnp.minimum(*twin_values(params, s, a, critic.log_mu, critic.config.use_offset))

    return q


# -- pure losses ------------------------------------------------------------

def td_loss_fn(online, target, batch: Batch, policy_trunk, alpha, key, config: CriticConfig,
               log_mu: LogMu | None, log_mu_sa=None):
    """Mean squared TD error over the batch and both twins.

    ``log_mu_sa`` optionally supplies precomputed ``log mu(a|s)`` for the
    batch pairs. Returns ``(loss, target_values)``.
    """
    a_next, logp_next = sample_with_log_prob(policy_trunk, batch.sp, key)
    tq = jnp.minimum(*twin_values(target, batch.sp, a_next, log_mu, config.use_offset))
    if config.soft_targets:
        tq = tq - alpha * logp_next
    y = batch.r + config.reward_bonus + config.gamma * (1.0 - batch.done) * tq
    y = jax.lax.stop_gradient(y)
    q1, q2 = twin_values(online, batch.s, batch.a, log_mu, config.use_offset, log_mu_sa)
    return 0.5 * jnp.mean((q1 - y) ** 2 + (q2 - y) ** 2), y


def action_grad_sq_norms(online, s, a):
    """Per-state ``||d net_i / da||^2`` for both twins, shape ``(2, N)``."""
    a = jax.lax.stop_gradient(a)
    g1 = jax.grad(lambda x: jnp.sum(net_apply(online["q1"], s, x)))(a)
    g2 = jax.grad(lambda x: jnp.sum(net_apply(online["q2"], s, x)))(a)
    return jnp.stack([jnp.sum(g1 ** 2, axis=-1), jnp.sum(g2 ** 2, axis=-1)])


def penalty_fn(online, s, a, config: CriticConfig):
    """Gradient penalty at fixed actions: mean over states, summed (or averaged) over twins.

    In offset mode the networks are the offsets, so this is ``||grad_a O||^2``;
    otherwise it penalizes the plain critic's action gradient.
    """
    per_twin = jnp.mean(action_grad_sq_norms(online, s, a), axis=-1)
    total = per_twin[0] + per_twin[1]
    return total if config.penalty_reduce == "sum" else 0.5 * total


def linear_term_loss(q, y, c):
    """Squared error plus a linear value term, ``-2c Q + (y - Q)^2``, averaged.

    With the full-square TD loss used here, a constant reward bonus ``c`` has
    the same parameter gradient as this linear term (see
    ``shifted_reward_loss``); the factor 2 comes from differentiating the
    square.
    """
    return jnp.mean(-2.0 * c * q + (y - q) ** 2)


def shifted_reward_loss(q, y, c):
    """Squared error to the bonus-shifted target ``y + c``, averaged."""
    return jnp.mean((y + c - q) ** 2)


def penalty_actions(policy_trunk, batch: Batch, key, config: CriticConfig):
    """States and actions at which the penalty is evaluated."""
    if config.penalty_source == "dataset":
        return batch.s, batch.a
    s = batch.s
    if config.penalty_source == "uniform":
        shape = s.shape[:-1] + batch.a.shape[-1:]
        return s, jax.random.uniform(key, shape, s.dtype, -1.0, 1.0)
    if config.penalty_samples > 1:
        s = jnp.tile(s, (config.penalty_samples, 1))
    a, _ = sample_with_log_prob(jax.lax.stop_gradient(policy_trunk), s, key)
    return s, jax.lax.stop_gradient(a)


def critic_loss_fn(online, target, batch: Batch, policy_trunk, alpha, key, config: CriticConfig,
                   log_mu: LogMu | None, log_mu_sa=None, extra=None):
    """TD + lam * penalty. ``extra(online) -> scalar`` adds a further term (CQL)."""
    k_td, k_gp = jax.random.split(key)
    td, _ = td_loss_fn(online, target, batch, policy_trunk, alpha, k_td, config, log_mu, log_mu_sa)
    if config.lam > 0:
        ps, pa = penalty_actions(policy_trunk, batch, k_gp, config)
        gp = penalty_fn(online, ps, pa, config)
    else:
        gp = jnp.zeros((), td.dtype)
    total = td + config.lam * gp
    ex = jnp.zeros((), td.dtype)
    if extra is not None:
        ex = extra(online)
        total = total + ex
    return total, (td, gp, ex)


def critic_step(online, target, opt_state, batch: Batch, policy_trunk, alpha, key,
                config: CriticConfig, log_mu: LogMu | None, log_mu_sa=None, extra=None):
    """One Adam step on the critic loss followed by a Polyak target update."""
    (total, (td, gp, ex)), g = jax.value_and_grad(critic_loss_fn, has_aux=True)(
        online, target, batch, policy_trunk, alpha, key, config, log_mu, log_mu_sa, extra)
    online, opt_state = adam_update(online, g, opt_state, config.lr)
    target = polyak(target, online, config.tau)
    return online, target, opt_state, {"total": total, "td": td, "penalty": gp, "extra": ex}


# -- eager API ----------------------------------------------------------------

def td_loss(critic: CriticPair, batch: Batch, policy: PolicyModel, key):
    loss, y = td_loss_fn(critic.online, critic.target, batch, policy.trunk, policy.temperature,
                         key, critic.config, critic.log_mu)
    if not np.all(np.isfinite(np.asarray(y))):
        raise NonFiniteError("non-finite TD target")
    return loss


def gradient_penalty(critic: CriticPair, states, policy: PolicyModel | None, key, actions=None):
    """Penalty at the configured action source, or at ``actions`` when given."""
    if actions is None:
        adim = critic.online["q1"]["w0"].shape[0] - states.shape[-1]
        batch = Batch(states, jnp.zeros(states.shape[:-1] + (adim,), states.dtype), None, None, None)
        states, actions = penalty_actions(policy.trunk, batch, key, critic.config)
    return penalty_fn(critic.online, states, actions, critic.config)


def critic_update(critic: CriticPair, batch: Batch, policy: PolicyModel, opt_state, key):
    """Eager critic step; returns ``(critic, opt_state, diagnostics)``.

    Raises :class:`NonFiniteError` if either loss term is not finite.
    """
    if opt_state is None:
        opt_state = adam_init(critic.online)
    online, target, opt_state, diag = critic_step(
        critic.online, critic.target, opt_state, batch, policy.trunk, policy.temperature, key,
        critic.config, critic.log_mu)
    diag = {k: float(v) for k, v in diag.items()}
    if not (np.isfinite(diag["td"]) and np.isfinite(diag["penalty"])):
        raise NonFiniteError(f"critic collapse: td={diag['td']} penalty={diag['penalty']}")
    return CriticPair(online, target, critic.behavior, critic.config), opt_state, diag
