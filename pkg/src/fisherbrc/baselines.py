"""Comparison methods: the CQL critic penalty and its KL reading on a grid.

BRAC, offline SAC and behavioral cloning need no extra machinery beyond the
actor and critic modules; :func:`fisherbrc.trainer.train` runs all of them.
"""
from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from .actors import sample_with_log_prob
from .critics import Batch, net_apply


@dataclass(frozen=True)
class CQLConfig:
    weight: float = 5.0
    n_samples: int = 16
    proposal: str = "mixed"  # "uniform", "policy" or "mixed"

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.proposal not in ("uniform", "policy", "mixed"):
            raise ValueError(f"unknown proposal {self.proposal!r}")
        if self.proposal == "mixed" and self.n_samples < 2:
            raise ValueError("mixed proposal needs n_samples >= 2")


def proposal_samples(policy_trunk, states, key, config: CQLConfig, action_dim: int):
    """Actions ``(n, B, d)`` and their proposal log-densities ``(n, B)``.

    The mixed proposal draws half the samples from each source; with the
    common ``1/n`` weight each half-estimate carries weight one half.
    """
    n_batch = states.shape[0]
    dt = states.dtype
    n_pol = {"uniform": 0, "policy": config.n_samples, "mixed": config.n_samples // 2}[config.proposal]
    n_uni = config.n_samples - n_pol
    ku, kp = jax.random.split(key)
    acts, logq = [], []
    if n_uni:
        acts.append(jax.random.uniform(ku, (n_uni, n_batch, action_dim), dt, -1.0, 1.0))
        logq.append(jnp.full((n_uni, n_batch), -action_dim * np.log(2.0), dt))
    if n_pol:
        s = jnp.broadcast_to(states, (n_pol,) + states.shape)
        a, lp = sample_with_log_prob(jax.lax.stop_gradient(policy_trunk), s, kp)
        acts.append(jax.lax.stop_gradient(a))
        logq.append(jax.lax.stop_gradient(lp))
    return jnp.concatenate(acts), jnp.concatenate(logq)


def log_integral_estimate(q_values, log_q):
    """Importance-sampled ``log int exp Q(a) da`` from ``(n, B)`` samples."""
    n = q_values.shape[0]
    return jax.nn.logsumexp(q_values - log_q, axis=0) - jnp.log(n)


def cql_penalty_fn(online, batch: Batch, policy_trunk, key, config: CQLConfig):
    """Mean over states of ``logIS(Q) - Q(s, a_data)``, summed over the twin critics."""
    acts, logq = proposal_samples(policy_trunk, batch.s, key, config, batch.a.shape[-1])
    s_rep = jnp.broadcast_to(batch.s, acts.shape[:2] + batch.s.shape[-1:])
    total = 0.0
    for name in ("q1", "q2"):
        lse = log_integral_estimate(net_apply(online[name], s_rep, acts), logq)
        total = total + jnp.mean(lse - net_apply(online[name], batch.s, batch.a))
    return total


def cql_penalty(q_fn, states, data_actions, policy_trunk, key, config: CQLConfig):
    """Single-critic penalty for an arbitrary ``q_fn(states, actions)``.

    Eager helper for inspection and tests. Raises ``ValueError`` when a
    proposal density is zero at a drawn sample.
    """
    states = jnp.asarray(states)
    acts, logq = proposal_samples(policy_trunk, states, key, config, data_actions.shape[-1])
    if not bool(jnp.all(jnp.isfinite(logq))):
        raise ValueError("proposal density is zero at a sampled action")
    s_rep = jnp.broadcast_to(states, acts.shape[:2] + states.shape[-1:])
    lse = log_integral_estimate(q_fn(s_rep, acts), logq)
    return jnp.mean(lse - q_fn(states, data_actions))


# -- discrete-grid reading ----------------------------------------------------

def grid_cql_penalty(q, data_index: int, spacing: float | None = None):
    """Exact penalty on a tabular action grid.

    With ``spacing`` the sum becomes a Riemann sum for the continuous integral.
    """
    q = jnp.asarray(q)
    lse = jax.nn.logsumexp(q)
    if spacing is not None:
        lse = lse + jnp.log(spacing)
    return lse - q[data_index]


def kl_to_boltzmann(q, mu):
    """``KL(mu || softmax(q))`` on a grid, computed from its definition."""
    q, mu = jnp.asarray(q), jnp.asarray(mu)
    log_p = jax.nn.log_softmax(q)
    return jnp.sum(jnp.where(mu > 0, mu * (jnp.log(mu) - log_p), 0.0))


def kl_expansion(q, mu):
    """``logsumexp(q) - E_mu[q] + E_mu[log mu]``."""
    q, mu = jnp.asarray(q), jnp.asarray(mu)
    ent = jnp.sum(jnp.where(mu > 0, mu * jnp.log(mu), 0.0))
    return jax.nn.logsumexp(q) - jnp.sum(mu * q) + ent


def cql_kl_identity_check(q, mu) -> float:
    """Value residual ``|KL(mu || softmax q) - expansion|``."""
    mu = np.asarray(mu, np.float64)
    if not np.isclose(mu.sum(), 1.0, atol=1e-12):
        raise ValueError("mu must be normalized on the grid")
    return float(abs(kl_to_boltzmann(q, mu) - kl_expansion(q, mu)))


def cql_kl_gradient_residual(q, mu) -> float:
    """Max abs difference between the Q-gradients of the KL and of the CQL form.

    The CQL form is ``logsumexp(q) - E_mu[q]``; ``E_mu[log mu]`` does not depend on q.
    """
    mu = jnp.asarray(mu, jnp.float64)
    g_kl = jax.grad(kl_to_boltzmann)(jnp.asarray(q, jnp.float64), mu)
    g_cql = jax.grad(lambda x: jax.nn.logsumexp(x) - jnp.sum(mu * x))(jnp.asarray(q, jnp.float64))
    return float(jnp.max(jnp.abs(g_kl - g_cql)))
