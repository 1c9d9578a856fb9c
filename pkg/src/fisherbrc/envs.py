"""Toy continuous bandit and a 2-D point-mass MDP, both as pure JAX functions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

# Reward reported for bandit actions outside the data support. The true value
# is -inf; this finite stand-in exists only so landscapes can be plotted.
SYNTHETIC_OUT_OF_SUPPORT = -1e6


@dataclass(frozen=True)
class ToyBanditSpec:
    spec_id: str = "bandit"
    support: float = 0.25
    offset: float = 0.125
    n_samples: int = 1000
    state_dim: int = 1
    action_dim: int = 1
    horizon: int = 1
    gamma: float = 0.0
    # uniform-on-support policy and the optimal |a| = 0.25 policy
    random_score: float = 0.0
    expert_score: float = 0.125

    def reward(self, a):
        """``|a| - 0.125`` on the support, the synthetic stand-in elsewhere."""
        a = jnp.asarray(a)
        inside = jnp.abs(a) <= self.support
        return jnp.where(inside, jnp.abs(a) - self.offset, SYNTHETIC_OUT_OF_SUPPORT)


@dataclass(frozen=True)
class PointMassSpec:
    """Double integrator with drag on ``[-1, 1]^2``; reach and hold the goal.

    state = (x, y, vx, vy); action = acceleration in ``[-1, 1]^2``.
    Hitting a wall clips the position and zeroes that velocity component.

    The data-collecting controllers are rated for ``|a_i| <= rated_accel``.
    Larger commands still accelerate harder, but each unit above the rating
    costs ``overload_cost``. Logged data never contains such actions, so a
    learner that trusts its critic outside the data pays for it.
    """
    spec_id: str = "pointmass"
    dt: float = 0.1
    drag: float = 0.5
    accel: float = 1.0
    action_cost: float = 0.01
    horizon: int = 200
    gamma: float = 0.99
    goal: tuple[float, float] = (0.0, 0.0)
    rated_accel: float = 0.5
    overload_cost: float = 1.0
    state_dim: int = 4
    action_dim: int = 2
    # reference scores for normalization (how they were measured is in the README)
    random_score: float = -158.683
    expert_score: float = -9.948
    expert_threshold: float = -40.0

    def reset(self, key):
        pos = jax.random.uniform(key, (2,), jnp.float64, -1.0, 1.0)
        return jnp.concatenate([pos, jnp.zeros(2)])

    def step(self, s, a):
        a = jnp.clip(a, -1.0, 1.0)
        pos, vel = s[..., :2], s[..., 2:]
        vel = vel + self.dt * (self.accel * a - self.drag * vel)
        pos = pos + self.dt * vel
        hit = jnp.abs(pos) > 1.0
        pos = jnp.clip(pos, -1.0, 1.0)
        vel = jnp.where(hit, 0.0, vel)
        s2 = jnp.concatenate([pos, vel], axis=-1)
        dist = jnp.linalg.norm(pos - jnp.asarray(self.goal, pos.dtype), axis=-1)
        overload = jnp.sum(jnp.maximum(jnp.abs(a) - self.rated_accel, 0.0), axis=-1)
        r = -dist - self.action_cost * jnp.sum(a * a, axis=-1) - self.overload_cost * overload
        return s2, r


EnvSpec = ToyBanditSpec | PointMassSpec
PolicyFn = Callable[[jax.Array, jax.Array], jax.Array]  # (states, key) -> actions


def normalize_score(spec: EnvSpec, score: float) -> float:
    return 100.0 * (score - spec.random_score) / (spec.expert_score - spec.random_score)


def pointmass_rollouts(spec: PointMassSpec, policy_fn: PolicyFn, key, n_episodes: int):
    """Run ``n_episodes`` full episodes in parallel.

    Returns arrays shaped ``(n_episodes, horizon, ...)``: states, actions,
    rewards, next states and done flags (set only at the last step).
    """
    k_reset, k_act = jax.random.split(key)
    s0 = jax.vmap(spec.reset)(jax.random.split(k_reset, n_episodes))

    def step(s, k):
        a = policy_fn(s, k)
        s2, r = spec.step(s, a)
        return s2, (s, a, r, s2)

    _, (S, A, R, S2) = jax.lax.scan(step, s0, jax.random.split(k_act, spec.horizon))
    S, A, R, S2 = (jnp.swapaxes(x, 0, 1) for x in (S, A, R, S2))
    done = jnp.zeros(R.shape).at[:, -1].set(1.0)
    return S, A, R, S2, done


def evaluate_policy(policy_fn: PolicyFn, spec: EnvSpec, n_episodes: int = 10, seed: int = 0):
    """Mean undiscounted return and its normalized score.

    Deterministic given ``seed``: the start states and any action noise are
    drawn from ``PRNGKey(seed)``.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    key = jax.random.PRNGKey(seed)
    if isinstance(spec, ToyBanditSpec):
        s = jnp.zeros((n_episodes, 1))
        a = policy_fn(s, key)[:, 0]
        if bool(jnp.any(jnp.abs(a) > 1.0)):
            raise ValueError("bandit actions must lie in [-1, 1]")
        returns = np.asarray(spec.reward(a))
    else:
        _, _, R, _, _ = pointmass_rollouts(spec, policy_fn, key, n_episodes)
        returns = np.asarray(jnp.sum(R, axis=1))
    mean = float(np.mean(returns))
    return mean, normalize_score(spec, mean)


def rated_uniform_policy(spec: PointMassSpec) -> PolicyFn:
    """Uniform actions inside the controller rating: the random-data behavior."""
    return uniform_policy(spec.action_dim, -spec.rated_accel, spec.rated_accel)


def uniform_policy(action_dim: int, low: float = -1.0, high: float = 1.0) -> PolicyFn:
    def act(s, key):
        return jax.random.uniform(key, s.shape[:-1] + (action_dim,), jnp.float64, low, high)
    return act


def get_spec(spec_id: str) -> EnvSpec:
    if spec_id == "bandit":
        return ToyBanditSpec()
    if spec_id == "pointmass":
        return PointMassSpec()
    raise ValueError(f"unknown environment {spec_id!r}")
