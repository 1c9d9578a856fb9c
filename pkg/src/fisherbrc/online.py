"""Online SAC on the point-mass task, used only to manufacture behavior policies.

The learner's tanh actions are scaled by the controller rating, so every
behavior policy (and every logged action) stays inside it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache, partial

import jax
import jax.numpy as jnp
import numpy as np

from .actors import (ActorConfig, act_deterministic, actor_loss_sac, init_policy,
                     sample_with_log_prob, temperature_loss)
from .autodiff import adam_init, adam_update
from .critics import Batch, CriticConfig, critic_step, init_critic_params, twin_values
from .envs import PointMassSpec, evaluate_policy, normalize_score


@dataclass(frozen=True)
class OnlineSACConfig:
    steps: int = 100_000
    start_steps: int = 5_000
    batch_size: int = 256
    checkpoint_interval: int = 1_000
    eval_episodes: int = 10
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 3e-4
    tau: float = 0.005
    init_temperature: float = 0.1
    dtype: str = "float32"


@dataclass
class OnlineSACResult:
    final_trunk: dict
    checkpoint_steps: np.ndarray
    checkpoint_trunks: list = field(repr=False)
    checkpoint_returns: np.ndarray = None
    buffer: tuple = field(default=None, repr=False)  # (S, A, R, S2, done) numpy arrays
    final_return: float = 0.0


def _cast(tree, dtype):
    return jax.tree_util.tree_map(
        lambda x: x.astype(dtype) if jnp.issubdtype(x.dtype, jnp.floating) else x, tree)


@partial(jax.jit, static_argnames=("spec", "cfg", "n"))
def _chunk(carry, start, *, spec: PointMassSpec, cfg: OnlineSACConfig, n: int):
    dt = jnp.dtype(cfg.dtype)
    ccfg = CriticConfig(lam=0.0, gamma=spec.gamma, tau=cfg.tau, use_offset=False,
                        soft_targets=True, lr=cfg.lr, hidden=cfg.hidden)
    target_entropy = -float(spec.action_dim)

    def step(carry, t):
        (s, t_ep, buf, online, target, copt, trunk, popt, log_alpha, aopt, key) = carry
        key, k_rand, k_pol, k_reset, k_b, k_c, k_a = jax.random.split(key, 7)
        a_rand = jax.random.uniform(k_rand, (spec.action_dim,), dt, -1.0, 1.0)
        a_pol, _ = sample_with_log_prob(trunk, s[None], k_pol)
        a = jnp.where(t < cfg.start_steps, a_rand, a_pol[0])
        a = spec.rated_accel * a
        s2, r = spec.step(s, a)
        done = (t_ep == spec.horizon - 1).astype(dt)
        S, A, R, S2, Dn = buf
        buf = (S.at[t].set(s), A.at[t].set(a), R.at[t].set(r.astype(dt)), S2.at[t].set(s2),
               Dn.at[t].set(done))
        s_next = jnp.where(done > 0, spec.reset(k_reset).astype(dt), s2)
        t_ep = jnp.where(done > 0, 0, t_ep + 1)

        def update(args):
            online, target, copt, trunk, popt, log_alpha, aopt = args
            idx = jax.random.randint(k_b, (cfg.batch_size,), 0, t + 1)
            # time-limit ends are not terminal for the online learner
            # the learner works in unscaled action units
            b = Batch(buf[0][idx], buf[1][idx] / spec.rated_accel, buf[2][idx], buf[3][idx],
                      jnp.zeros_like(buf[4][idx]))
            alpha = jnp.exp(log_alpha)
            online, target, copt, _ = critic_step(online, target, copt, b, trunk, alpha, k_c,
                                                  ccfg, None)
            frozen = jax.lax.stop_gradient(online)

            def q_fn(ss, aa):
                return jnp.minimum(*twin_values(frozen, ss, aa, None, False))

            (_, ent), g = jax.value_and_grad(actor_loss_sac, has_aux=True)(trunk, alpha, q_fn, b.s, k_a)
            trunk, popt = adam_update(trunk, g, popt, cfg.lr)
            ga = jax.grad(temperature_loss)(log_alpha, ent, target_entropy)
            log_alpha, aopt = adam_update(log_alpha, ga, aopt, cfg.lr)
            return online, target, copt, trunk, popt, log_alpha, aopt

        params = (online, target, copt, trunk, popt, log_alpha, aopt)
        params = jax.lax.cond(t >= min(cfg.start_steps, 1_000), update, lambda p: p, params)
        return (s_next, t_ep, buf, *params, key), None

    carry, _ = jax.lax.scan(step, carry, start + jnp.arange(n))
    return carry


def train_online_sac(spec: PointMassSpec = PointMassSpec(), config: OnlineSACConfig = OnlineSACConfig(),
                     seed: int = 0) -> OnlineSACResult:
    dt = jnp.dtype(config.dtype)
    key = jax.random.PRNGKey(seed)
    k_c, k_p, k_env, k_loop = jax.random.split(key, 4)
    online = _cast(init_critic_params(k_c, spec.state_dim, spec.action_dim, config.hidden), dt)
    policy = init_policy(k_p, spec.state_dim, spec.action_dim,
                         ActorConfig(hidden=config.hidden, init_temperature=config.init_temperature))
    trunk = _cast(policy.trunk, dt)
    log_alpha = policy.log_alpha.astype(dt)
    n = config.steps
    buf = (jnp.zeros((n, spec.state_dim), dt), jnp.zeros((n, spec.action_dim), dt),
           jnp.zeros((n,), dt), jnp.zeros((n, spec.state_dim), dt), jnp.zeros((n,), dt))
    carry = (spec.reset(k_env).astype(dt), jnp.asarray(0), buf, online, online, adam_init(online),
             trunk, adam_init(trunk), log_alpha, adam_init(log_alpha), k_loop)

    steps, trunks, rets = [], [], []
    done_steps = 0
    while done_steps < n:
        m = min(config.checkpoint_interval, n - done_steps)
        carry = _chunk(carry, jnp.asarray(done_steps), spec=spec, cfg=config, n=m)
        done_steps += m
        trunk = carry[6]
        ret, _ = evaluate_policy(deterministic_policy(trunk, spec.rated_accel), spec, config.eval_episodes, seed=10_000 + seed)
        steps.append(done_steps)
        trunks.append(trunk)
        rets.append(ret)

    buf = tuple(np.asarray(x, np.float64) for x in carry[2])
    return OnlineSACResult(carry[6], np.asarray(steps), trunks, np.asarray(rets), buf, rets[-1])


@lru_cache(maxsize=8)
def cached_online_sac(spec: PointMassSpec, config: OnlineSACConfig, seed: int) -> OnlineSACResult:
    return train_online_sac(spec, config, seed)


def deterministic_policy(trunk, scale: float = 1.0):
    def act(s, key):
        return scale * act_deterministic(trunk, s.astype(trunk["w0"].dtype)).astype(s.dtype)
    return act


def stochastic_policy(trunk, scale: float = 1.0):
    def act(s, key):
        a, _ = sample_with_log_prob(trunk, s.astype(trunk["w0"].dtype), key)
        return scale * a.astype(s.dtype)
    return act


def select_expert(result: OnlineSACResult) -> int:
    """Index of the best checkpoint by evaluation return."""
    return int(np.argmax(result.checkpoint_returns))


def select_medium(result: OnlineSACResult, spec: PointMassSpec, fraction: float = 0.5) -> int:
    """Index of the first checkpoint whose normalized return reaches ``fraction``
    of the expert checkpoint's normalized return."""
    expert = result.checkpoint_returns[select_expert(result)]
    goal = fraction * normalize_score(spec, expert)
    for i, ret in enumerate(result.checkpoint_returns):
        if normalize_score(spec, ret) >= goal:
            return i
    return len(result.checkpoint_returns) - 1
