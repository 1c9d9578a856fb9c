"""Tanh-Gaussian actor and its losses: Fisher-BRC, BRAC (KL to behavior) and SAC."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp

from . import distributions as D
from .autodiff import ParameterSet, adam_update, init_mlp, mlp_apply


class PolicyModel(NamedTuple):
    trunk: ParameterSet
    log_alpha: jax.Array
    target_entropy: float

    @property
    def temperature(self):
        return jnp.exp(self.log_alpha)


@dataclass(frozen=True)
class ActorConfig:
    lr: float = 3e-4
    temperature_lr: float = 3e-4
    init_temperature: float = 1.0
    auto_temperature: bool = True
    target_entropy: float | None = None  # None -> -action_dim
    hidden: tuple[int, ...] = (64, 64)
    brac_alpha: float = 1.0


def init_policy(key, state_dim: int, action_dim: int, config: ActorConfig = ActorConfig()) -> PolicyModel:
    trunk = init_mlp(key, [state_dim, *config.hidden, 2 * action_dim])
    target = -float(action_dim) if config.target_entropy is None else float(config.target_entropy)
    return PolicyModel(trunk, jnp.log(jnp.asarray(config.init_temperature, jnp.float64)), target)


def action_dim(policy: PolicyModel) -> int:
    n = sum(1 for k in policy.trunk if k.startswith("w"))
    return policy.trunk[f"w{n - 1}"].shape[1] // 2


def policy_dist(trunk: ParameterSet, states) -> D.SquashedGaussianParams:
    raw = mlp_apply(trunk, states)
    return D.squashed_gaussian(raw, raw.shape[-1] // 2)


def sample_with_log_prob(trunk: ParameterSet, states, key):
    dist = policy_dist(trunk, states)
    a = D.sample_reparameterized(dist, jax.random.normal(key, dist.mean.shape, dist.mean.dtype))
    return a, D.log_prob(dist, a)


def act_deterministic(trunk: ParameterSet, states):
    return D.mode(policy_dist(trunk, states))


# -- losses -------------------------------------------------------------------

QFn = Callable[..., jax.Array]  # (states, actions) -> min-twin Q values


def actor_loss_sac(trunk: ParameterSet, alpha, q_fn: QFn, states, key):
    """``-mean[Q(s, a) - alpha log pi(a|s)]`` with reparameterized ``a``.

    ``q_fn`` must already block gradients into the critic parameters.
    """
    a, logp = sample_with_log_prob(trunk, states, key)
    loss = -jnp.mean(q_fn(states, a) - alpha * logp)
    return loss, -jnp.mean(logp)


def actor_loss_fbrc(policy: PolicyModel, critic, states, key):
    """Fisher-BRC actor objective on a :class:`~fisherbrc.critics.CriticPair`.

    The critic is the offset composition ``min(O1, O2) + log mu``; the
    gradient reaches the policy through both terms.
    """
    from .critics import frozen_q_fn

    if not critic.config.use_offset:
        raise ValueError("Fisher-BRC actor needs an offset critic")
    loss, _ = actor_loss_sac(policy.trunk, policy.temperature, frozen_q_fn(critic), states, key)
    return loss


def actor_loss_brac(trunk: ParameterSet, q_fn: QFn, log_mu: Callable, states, key, alpha_kl):
    """``-mean[Q(s,a) - alpha_kl (log pi(a|s) - log mu(a|s))]``, single-sample KL."""
    a, logp = sample_with_log_prob(trunk, states, key)
    kl = logp - log_mu(states, a)
    return -jnp.mean(q_fn(states, a) - alpha_kl * kl), -jnp.mean(logp)


def temperature_loss(log_alpha, entropy, target_entropy):
    """Dual objective ``alpha * (H - H_target)`` with the entropy held fixed."""
    return jnp.exp(log_alpha) * (jax.lax.stop_gradient(entropy) - target_entropy)


def temperature_update(policy: PolicyModel, entropy, opt_state, lr: float = 3e-4):
    """One Adam step on the temperature; returns ``(policy, opt_state)``."""
    g = jax.grad(temperature_loss)(policy.log_alpha, entropy, policy.target_entropy)
    log_alpha, opt_state = adam_update(policy.log_alpha, g, opt_state, lr)
    return policy._replace(log_alpha=log_alpha), opt_state
