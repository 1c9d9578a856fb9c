"""Tanh-squashed Gaussians, squashed Gaussian mixtures and truncated Laplace.

All functions are written for a trailing action axis and broadcast over any
leading batch axes. Log-densities include the tanh change-of-variables term.
"""
from __future__ import annotations

from typing import NamedTuple, Union

import jax
import jax.numpy as jnp

from .autodiff import ShapeError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
BOUNDARY_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * jnp.log(2.0 * jnp.pi)


class SquashedGaussianParams(NamedTuple):
    mean: jax.Array  # (..., d) pre-squash
    log_std: jax.Array  # (..., d) pre-squash


class MixtureParams(NamedTuple):
    logits: jax.Array  # (..., K)
    means: jax.Array  # (..., K, d)
    log_stds: jax.Array  # (..., K, d)


class LaplaceParams(NamedTuple):
    """Laplace(loc, scale) on one dimension, optionally truncated to [low, high]."""
    loc: jax.Array
    scale: jax.Array
    low: float = -jnp.inf
    high: float = jnp.inf


Params = Union[SquashedGaussianParams, MixtureParams, LaplaceParams]


def clamp_log_std(log_std):
    return jnp.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)


def squashed_gaussian(raw, action_dim: int) -> SquashedGaussianParams:
    """Split a network head ``(..., 2d)`` into clamped squashed-Gaussian params."""
    mean, log_std = raw[..., :action_dim], raw[..., action_dim:]
    return SquashedGaussianParams(mean, clamp_log_std(log_std))


def mixture(raw, action_dim: int, n_components: int) -> MixtureParams:
    """Split a network head ``(..., K + 2Kd)`` into mixture params."""
    k, d = n_components, action_dim
    logits = raw[..., :k]
    means = raw[..., k:k + k * d].reshape(raw.shape[:-1] + (k, d))
    log_stds = raw[..., k + k * d:].reshape(raw.shape[:-1] + (k, d))
    return MixtureParams(logits, means, clamp_log_std(log_stds))


def mixture_head_size(action_dim: int, n_components: int) -> int:
    return n_components * (1 + 2 * action_dim)


def _gauss_logpdf(u, mean, log_std):
    z = (u - mean) * jnp.exp(-log_std)
    return -0.5 * z * z - log_std - _HALF_LOG_2PI


def _squash_correction(a):
    # log |d tanh(u) / du| = log(1 - a^2)
    return jnp.sum(jnp.log1p(-a * a), axis=-1)


def _clip_action(a):
    return jnp.clip(a, -1.0 + BOUNDARY_EPS, 1.0 - BOUNDARY_EPS)


# -- sampling ---------------------------------------------------------------

def sample_reparameterized(params: SquashedGaussianParams, noise):
    """``tanh(mean + exp(log_std) * noise)``, differentiable in the params."""
    noise = jnp.asarray(noise)
    if noise.shape[-1] != params.mean.shape[-1]:
        raise ShapeError(f"noise dim {noise.shape[-1]} != action dim {params.mean.shape[-1]}")
    return jnp.tanh(params.mean + jnp.exp(params.log_std) * noise)


def sample(params: Params, key: jax.Array, n: int | None = None):
    """Draw actions; ``n`` adds a leading sample axis."""
    if isinstance(params, SquashedGaussianParams):
        shape = params.mean.shape if n is None else (n,) + params.mean.shape
        return sample_reparameterized(params, jax.random.normal(key, shape))
    if isinstance(params, MixtureParams):
        batch = params.logits.shape[:-1] if n is None else (n,) + params.logits.shape[:-1]
        kc, kn = jax.random.split(key)
        comp = jax.random.categorical(kc, params.logits, shape=batch)
        means = jnp.broadcast_to(params.means, batch + params.means.shape[-2:])
        log_stds = jnp.broadcast_to(params.log_stds, batch + params.log_stds.shape[-2:])
        idx = comp[..., None, None]
        m = jnp.take_along_axis(means, idx, axis=-2)[..., 0, :]
        s = jnp.take_along_axis(log_stds, idx, axis=-2)[..., 0, :]
        return jnp.tanh(m + jnp.exp(s) * jax.random.normal(kn, m.shape))
    if isinstance(params, LaplaceParams):
        shape = jnp.shape(params.loc) if n is None else (n,) + jnp.shape(params.loc)
        # inverse CDF restricted to the truncation interval
        lo, hi = _laplace_cdf(params, params.low), _laplace_cdf(params, params.high)
        p = lo + (hi - lo) * jax.random.uniform(key, shape, jnp.float64, 1e-12, 1 - 1e-12)
        return params.loc - params.scale * jnp.sign(p - 0.5) * jnp.log1p(-2 * jnp.abs(p - 0.5))
    raise TypeError(type(params))


def mode(params: Params):
    """Deterministic action used for greedy evaluation.

    For a mixture this is the squashed mean of the most probable component.
    """
    if isinstance(params, SquashedGaussianParams):
        return jnp.tanh(params.mean)
    if isinstance(params, MixtureParams):
        idx = jnp.argmax(params.logits, axis=-1)[..., None, None]
        return jnp.tanh(jnp.take_along_axis(params.means, idx, axis=-2)[..., 0, :])
    if isinstance(params, LaplaceParams):
        return jnp.clip(params.loc, params.low, params.high)
    raise TypeError(type(params))


# -- densities --------------------------------------------------------------

def _laplace_cdf(params: LaplaceParams, x):
    z = (x - params.loc) / params.scale
    return jnp.where(z < 0, 0.5 * jnp.exp(jnp.minimum(z, 0.0)),
                     1.0 - 0.5 * jnp.exp(-jnp.maximum(z, 0.0)))


def laplace_log_normalizer(params: LaplaceParams):
    """log of the Laplace mass inside ``[low, high]`` (0 when untruncated)."""
    return jnp.log(_laplace_cdf(params, params.high) - _laplace_cdf(params, params.low))


def log_prob(params: Params, action):
    """Exact log-density at ``action``.

    Squashed families clamp actions to ``[-1 + 1e-6, 1 - 1e-6]`` first, so
    boundary actions give a large negative but finite value. The Laplace
    density takes scalar actions (no trailing axis) and is ``-inf`` outside
    its truncation interval.
    """
    if isinstance(params, LaplaceParams):
        a = jnp.asarray(action)
        lp = (-jnp.abs(a - params.loc) / params.scale - jnp.log(2.0 * params.scale)
              - laplace_log_normalizer(params))
        return jnp.where((a >= params.low) & (a <= params.high), lp, -jnp.inf)
    a = _clip_action(jnp.asarray(action))
    u = jnp.arctanh(a)
    if isinstance(params, SquashedGaussianParams):
        base = jnp.sum(_gauss_logpdf(u, params.mean, params.log_std), axis=-1)
    elif isinstance(params, MixtureParams):
        comp = jnp.sum(_gauss_logpdf(u[..., None, :], params.means, params.log_stds), axis=-1)
        base = jax.nn.logsumexp(jax.nn.log_softmax(params.logits, axis=-1) + comp, axis=-1)
    else:
        raise TypeError(type(params))
    return base - _squash_correction(a)


def log_prob_action_grad(params: Params, action):
    """Score ``d/da log p(a)``, same shape as ``action``.

    Rows of a batch are independent, so the gradient of the summed log-density
    gives every row's score at once.
    """
    return jax.grad(lambda a: jnp.sum(log_prob(params, a)))(jnp.asarray(action, jnp.float64))


def entropy_estimate(params: SquashedGaussianParams, key: jax.Array, n_samples: int = 1):
    """Monte-Carlo entropy, ``-mean log pi(a)`` over ``n_samples`` draws per state."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    a = sample(params, key, n_samples)
    return -jnp.mean(log_prob(params, a))
