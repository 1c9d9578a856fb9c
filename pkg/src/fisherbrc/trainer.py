"""The offline training loop shared by Fisher-BRC and the baselines.

One jitted ``lax.scan`` runs ``eval_interval`` alternating critic and actor
updates; evaluation and bookkeeping happen in Python between chunks.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from . import distributions as D
from .actors import (ActorConfig, act_deterministic, actor_loss_brac, actor_loss_sac,
                     init_policy, sample_with_log_prob, temperature_loss)
from .autodiff import adam_init, adam_update
from .baselines import CQLConfig, cql_penalty_fn
from .behavior import BehaviorModel, behavior_dist
from .critics import Batch, CriticConfig, action_grad_sq_norms, critic_step, init_critic_params, twin_values
from .envs import PointMassSpec, ToyBanditSpec, normalize_score, pointmass_rollouts

ALGOS = ("fisher-brc", "brac", "cql", "sac", "bc")
METRIC_COLUMNS = ("step", "mean_return", "normalized_return", "td", "penalty", "actor_loss",
                  "temperature", "grad_norm_sq", "behavior_loglik")


@dataclass(frozen=True)
class TrainConfig:
    algo: str = "fisher-brc"
    steps: int = 50_000
    eval_interval: int = 1_000
    eval_episodes: int = 10
    batch_size: int = 256
    dtype: str = "float64"
    critic: CriticConfig = field(default_factory=CriticConfig)
    actor: ActorConfig = field(default_factory=ActorConfig)
    cql: CQLConfig = field(default_factory=CQLConfig)

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algo {self.algo!r}; choose from {ALGOS}")
        if self.steps < 0 or self.eval_interval < 1 or self.eval_episodes < 1:
            raise ValueError("steps >= 0, eval_interval >= 1 and eval_episodes >= 1 required")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.critic.use_offset and self.algo != "fisher-brc":
            raise ValueError(f"{self.algo} uses a plain critic; set critic.use_offset=False")

    @classmethod
    def for_algo(cls, algo: str, **kw) -> "TrainConfig":
        """Defaults for ``algo``: only Fisher-BRC gets the offset critic and a penalty."""
        critic = kw.pop("critic", None)
        if critic is None:
            critic = CriticConfig() if algo == "fisher-brc" else CriticConfig(lam=0.0, use_offset=False)
        return cls(algo=algo, critic=critic, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        tup = lambda x: {k: tuple(v) if isinstance(v, list) else v for k, v in x.items()}
        d["critic"] = CriticConfig(**tup(d["critic"]))
        d["actor"] = ActorConfig(**tup(d["actor"]))
        d["cql"] = CQLConfig(**d["cql"])
        return cls(**d)


def eval_seed(seed: int) -> int:
    """Seed for evaluation episodes of a run, fixed by the run seed."""
    return 20_000 + seed


# -- behavior densities as jit arguments ------------------------------------

class BehaviorShape(NamedTuple):
    """Static description of a behavior density; its arrays travel separately."""
    kind: str  # "mixture" or "laplace"
    action_dim: int
    n_components: int = 0


def behavior_parts(behavior):
    if isinstance(behavior, BehaviorModel):
        return BehaviorShape("mixture", behavior.action_dim, behavior.n_components), behavior.trunk
    if isinstance(behavior, D.LaplaceParams):
        return BehaviorShape("laplace", 1), behavior
    raise TypeError(f"unsupported behavior model {type(behavior).__name__}")


def make_log_mu(shape: BehaviorShape, arrays):
    if shape.kind == "mixture":
        return lambda s, a: D.log_prob(behavior_dist(arrays, s, shape.action_dim, shape.n_components), a)
    return lambda s, a: D.log_prob(arrays, a[..., 0])


def behavior_mode(shape: BehaviorShape, arrays, states):
    if shape.kind == "mixture":
        return D.mode(behavior_dist(arrays, states, shape.action_dim, shape.n_components))
    return jnp.broadcast_to(D.mode(arrays), states.shape[:-1] + (1,)).astype(states.dtype)


def _cast(tree, dtype):
    return jax.tree_util.tree_map(
        lambda x: jnp.asarray(x).astype(dtype) if jnp.issubdtype(jnp.asarray(x).dtype, jnp.floating)
        else x, tree)


# -- the update step ----------------------------------------------------------

class TrainState(NamedTuple):
    online: dict
    target: dict
    critic_opt: object
    trunk: dict
    actor_opt: object
    log_alpha: jax.Array
    alpha_opt: object


def _update(state: TrainState, key, data: Batch, log_mu_data, barrays, *, cfg: TrainConfig,
            bshape: BehaviorShape):
    ccfg, acfg = cfg.critic, cfg.actor
    log_mu = make_log_mu(bshape, barrays)
    kb, kc, kx, ka = jax.random.split(key, 4)
    idx = jax.random.randint(kb, (cfg.batch_size,), 0, data.r.shape[0])
    b = Batch(*(x[idx] for x in data))
    alpha = jnp.exp(state.log_alpha)

    extra = None
    if cfg.algo == "cql":
        extra = lambda on: cfg.cql.weight * cql_penalty_fn(on, b, state.trunk, kx, cfg.cql)
    lm = log_mu if ccfg.use_offset else None
    lm_sa = log_mu_data[idx] if ccfg.use_offset else None
    online, target, copt, diag = critic_step(state.online, state.target, state.critic_opt, b,
                                             state.trunk, alpha, kc, ccfg, lm, lm_sa, extra)

    frozen = jax.lax.stop_gradient(online)

    def q_fn(s, a):
        return jnp.minimum(*twin_values(frozen, s, a, lm, ccfg.use_offset))

    if cfg.algo == "brac":
        loss_fn = lambda tr: actor_loss_brac(tr, q_fn, log_mu, b.s, ka, acfg.brac_alpha)
    else:
        loss_fn = lambda tr: actor_loss_sac(tr, alpha, q_fn, b.s, ka)
    (aloss, ent), g = jax.value_and_grad(loss_fn, has_aux=True)(state.trunk)
    trunk, aopt = adam_update(state.trunk, g, state.actor_opt, acfg.lr)

    log_alpha, alpha_opt = state.log_alpha, state.alpha_opt
    if acfg.auto_temperature and cfg.algo != "brac":
        target_entropy = -float(bshape.action_dim) if acfg.target_entropy is None else acfg.target_entropy
        ga = jax.grad(temperature_loss)(log_alpha, ent, target_entropy)
        log_alpha, alpha_opt = adam_update(log_alpha, ga, alpha_opt, acfg.temperature_lr)

    temp = jnp.asarray(acfg.brac_alpha, alpha.dtype) if cfg.algo == "brac" else alpha
    stats = jnp.stack([diag["td"], diag["penalty"], aloss, temp]).astype(alpha.dtype)
    return TrainState(online, target, copt, trunk, aopt, log_alpha, alpha_opt), stats


@partial(jax.jit, static_argnames=("cfg", "bshape"))
def _chunk(state, keys, data, log_mu_data, barrays, *, cfg, bshape):
    step = lambda st, k: _update(st, k, data, log_mu_data, barrays, cfg=cfg, bshape=bshape)
    return jax.lax.scan(step, state, keys)


# -- evaluation ---------------------------------------------------------------

@partial(jax.jit, static_argnames=("spec", "n_episodes", "stochastic"))
def _pointmass_returns(trunk, key, *, spec: PointMassSpec, n_episodes: int, stochastic: bool = False):
    dt = trunk["w0"].dtype

    def act(s, k):
        s = s.astype(dt)
        a = sample_with_log_prob(trunk, s, k)[0] if stochastic else act_deterministic(trunk, s)
        return a.astype(jnp.float64)

    _, _, R, _, _ = pointmass_rollouts(spec, act, key, n_episodes)
    return jnp.sum(R, axis=1)


@partial(jax.jit, static_argnames=("spec", "n_episodes", "bshape"))
def _pointmass_returns_behavior(barrays, key, *, spec, n_episodes, bshape):
    act = lambda s, k: behavior_mode(bshape, barrays, s.astype(jnp.float64))
    _, _, R, _, _ = pointmass_rollouts(spec, act, key, n_episodes)
    return jnp.sum(R, axis=1)


def evaluate_trunk(trunk, spec, n_episodes: int, seed: int) -> tuple[float, float]:
    """Greedy (tanh of the mean) evaluation of an actor trunk."""
    if isinstance(spec, ToyBanditSpec):
        a = act_deterministic(trunk, jnp.zeros((1, spec.state_dim), trunk["w0"].dtype))
        ret = float(spec.reward(a.astype(jnp.float64)[0, 0]))
    else:
        ret = float(np.mean(np.asarray(_pointmass_returns(
            trunk, jax.random.PRNGKey(seed), spec=spec, n_episodes=n_episodes))))
    return ret, normalize_score(spec, ret)


def evaluate_behavior(behavior, spec, n_episodes: int, seed: int) -> tuple[float, float]:
    """Evaluate the behavior density's mode as a policy."""
    bshape, barrays = behavior_parts(behavior)
    if isinstance(spec, ToyBanditSpec):
        a = behavior_mode(bshape, barrays, jnp.zeros((1, spec.state_dim)))
        ret = float(spec.reward(a[0, 0]))
    else:
        ret = float(np.mean(np.asarray(_pointmass_returns_behavior(
            barrays, jax.random.PRNGKey(seed), spec=spec, n_episodes=n_episodes, bshape=bshape))))
    return ret, normalize_score(spec, ret)


@partial(jax.jit, static_argnames=("bshape", "use_offset"))
def _probe(online, trunk, barrays, states, key, *, bshape, use_offset):
    """Mean squared action-gradient of the critic nets and ``log mu`` of policy actions."""
    a, _ = sample_with_log_prob(trunk, states, key)
    gn = jnp.mean(action_grad_sq_norms(online, states, a))
    ll = jnp.mean(make_log_mu(bshape, barrays)(states.astype(jnp.float64), a.astype(jnp.float64)))
    return gn, ll


# -- driver -------------------------------------------------------------------

@dataclass
class TrainResult:
    config: TrainConfig
    seed: int
    rows: list[dict]
    state: TrainState | None
    behavior: object
    collapsed: bool = False
    collapse_step: int | None = None
    eval_seed: int = 0

    @property
    def final_normalized(self) -> float:
        return self.rows[-1]["normalized_return"] if self.rows else float("nan")

    def policy_mean_action(self, states) -> np.ndarray:
        return np.asarray(act_deterministic(self.state.trunk, jnp.asarray(states, self.state.trunk["w0"].dtype)))


def _empty_row(step: int) -> dict:
    return {c: None for c in METRIC_COLUMNS} | {"step": step}


def train(data: Batch, behavior, spec, config: TrainConfig, seed: int = 0,
          init_state: TrainState | None = None) -> TrainResult:
    """Run one offline training job.

    ``data`` holds the whole dataset; ``behavior`` is a fitted BehaviorModel
    (or LaplaceParams on the bandit). A non-finite loss stops the run and marks
    it collapsed at the first failing step; metrics up to the last finished
    evaluation are kept.
    """
    dt = jnp.dtype(config.dtype)
    ev_seed = eval_seed(seed)
    if config.algo == "bc":
        ret, norm = evaluate_behavior(behavior, spec, config.eval_episodes, ev_seed)
        row = _empty_row(0) | {"mean_return": ret, "normalized_return": norm}
        return TrainResult(config, seed, [row], None, behavior, eval_seed=ev_seed)

    state_dim, action_dim = data.s.shape[-1], data.a.shape[-1]
    bshape, barrays = behavior_parts(behavior)
    barrays = _cast(barrays, jnp.float64)
    data64 = Batch(*(jnp.asarray(x, jnp.float64) for x in data))
    log_mu_data = make_log_mu(bshape, barrays)(data64.s, data64.a)
    if not bool(jnp.all(jnp.isfinite(log_mu_data))):
        raise ValueError("behavior log-density is not finite on every dataset pair")
    data_c = _cast(data64, dt)
    log_mu_c = log_mu_data.astype(dt)
    barrays_c = _cast(barrays, dt)

    key = jax.random.PRNGKey(seed)
    k_c, k_p, k_loop, k_probe = jax.random.split(key, 4)
    if init_state is None:
        online = init_critic_params(k_c, state_dim, action_dim, config.critic.hidden)
        policy = init_policy(k_p, state_dim, action_dim, config.actor)
        init_state = TrainState(online, online, adam_init(online), policy.trunk,
                                adam_init(policy.trunk), policy.log_alpha, adam_init(policy.log_alpha))
    state = _cast(init_state, dt)

    probe_idx = np.random.default_rng(seed).choice(len(data.r), min(len(data.r), 1000), replace=False)
    probe_states = data_c.s[np.sort(probe_idx)]
    rows, collapsed, collapse_step = [], False, None
    done = 0
    while done < config.steps:
        n = min(config.eval_interval, config.steps - done)
        keys = jax.random.split(jax.random.fold_in(k_loop, done), n)
        new_state, stats = _chunk(state, keys, data_c, log_mu_c, barrays_c, cfg=config, bshape=bshape)
        stats = np.asarray(stats, np.float64)
        finite = np.all(np.isfinite(stats), axis=1)
        params_ok = all(bool(jnp.all(jnp.isfinite(x))) for x in jax.tree_util.tree_leaves(
            (new_state.online, new_state.trunk)))
        if not finite.all() or not params_ok:
            collapsed = True
            collapse_step = done + (int(np.argmin(finite)) if not finite.all() else n - 1) + 1
            break
        state = new_state
        done += n
        ret, norm = evaluate_trunk(state.trunk, spec, config.eval_episodes, ev_seed)
        gn, ll = _probe(state.online, state.trunk, barrays_c, probe_states, k_probe,
                        bshape=bshape, use_offset=config.critic.use_offset)
        mean = stats.mean(axis=0)
        rows.append({"step": done, "mean_return": ret, "normalized_return": norm,
                     "td": float(mean[0]), "penalty": float(mean[1]), "actor_loss": float(mean[2]),
                     "temperature": float(stats[-1, 3]), "grad_norm_sq": float(gn),
                     "behavior_loglik": float(ll)})
    return TrainResult(config, seed, rows, state, behavior, collapsed, collapse_step, ev_seed)


def with_overrides(config: TrainConfig, **critic_kw) -> TrainConfig:
    return replace(config, critic=replace(config.critic, **critic_kw))
