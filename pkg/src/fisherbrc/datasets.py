"""Offline datasets: generation, the ``OFRL`` binary format and CSV export.

Binary layout (little-endian)::

    b"OFRL" | u32 version | u32 state_dim | u32 action_dim | u64 count | u8 tier
    count records of f64: s[state_dim] a[action_dim] r s'[state_dim] done
    u32 n | n bytes of UTF-8 JSON metadata (spec id, seed, behavior description)

The metadata trailer is required; a file cut short anywhere is rejected.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .critics import Batch
from .envs import PointMassSpec, ToyBanditSpec, get_spec, pointmass_rollouts, rated_uniform_policy
from .online import (OnlineSACConfig, cached_online_sac, select_expert,
                     select_medium, stochastic_policy)

MAGIC = b"OFRL"
VERSION = 1
TIERS = ("random", "medium", "expert", "mixed")
_HEADER = struct.Struct("<4sIIIQB")


class DatasetFormatError(ValueError):
    pass


class Transition(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: float
    sp: np.ndarray
    done: bool


@dataclass
class Dataset:
    spec_id: str
    tier: str
    seed: int
    behavior: str
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_observations: np.ndarray
    dones: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ValueError(f"unknown tier {self.tier!r}")
        n = len(self.rewards)
        if n == 0:
            raise ValueError("dataset must be non-empty")
        for name in ("observations", "actions", "next_observations", "dones"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} rows, expected {n}")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def state_dim(self) -> int:
        return self.observations.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def transitions(self) -> Iterator[Transition]:
        for i in range(len(self)):
            yield Transition(self.observations[i], self.actions[i], float(self.rewards[i]),
                             self.next_observations[i], bool(self.dones[i]))

    def state_stats(self) -> tuple[np.ndarray, np.ndarray]:
        return self.observations.mean(axis=0), self.observations.std(axis=0)

    def as_batch(self, dtype=jnp.float64) -> Batch:
        return Batch(*(jnp.asarray(x, dtype) for x in (
            self.observations, self.actions, self.rewards, self.next_observations, self.dones)))

    def split(self, fraction: float, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Random train / held-out split."""
        perm = np.random.default_rng(seed).permutation(len(self))
        k = int(round(fraction * len(self)))
        return self._take(perm[:k]), self._take(perm[k:])

    def _take(self, idx) -> "Dataset":
        return Dataset(self.spec_id, self.tier, self.seed, self.behavior, self.observations[idx],
                       self.actions[idx], self.rewards[idx], self.next_observations[idx],
                       self.dones[idx], dict(self.metadata))

    def equals(self, other: "Dataset") -> bool:
        arrays = ("observations", "actions", "rewards", "next_observations", "dones")
        return (self.spec_id == other.spec_id and self.tier == other.tier and self.seed == other.seed
                and self.behavior == other.behavior and self.metadata == other.metadata
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays))


def _from_arrays(spec_id, tier, seed, behavior, S, A, R, S2, Dn, **metadata) -> Dataset:
    f = lambda x: np.ascontiguousarray(np.asarray(x, np.float64))
    return Dataset(spec_id, tier, seed, behavior, f(S), f(A), f(R), f(S2), f(Dn), metadata)


# -- generation -------------------------------------------------------------

def gen_bandit_dataset(seed: int = 0, spec: ToyBanditSpec = ToyBanditSpec()) -> Dataset:
    """1000 single-step transitions with actions uniform on ``[-0.25, 0.25]``."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-spec.support, spec.support, size=(spec.n_samples, 1))
    r = np.asarray(spec.reward(a[:, 0]), np.float64)
    s = np.zeros((spec.n_samples, spec.state_dim))
    return _from_arrays(spec.spec_id, "random", seed, f"uniform[-{spec.support},{spec.support}]",
                        s, a, r, s, np.ones(spec.n_samples))


def _flatten_episodes(S, A, R, S2, Dn):
    k = lambda x: np.asarray(x).reshape((-1,) + np.asarray(x).shape[2:])
    return k(S), k(A), k(R), k(S2), k(Dn)


def gen_pointmass_dataset(tier: str, size: int = 50_000, seed: int = 0,
                          spec: PointMassSpec = PointMassSpec(),
                          sac_config: OnlineSACConfig = OnlineSACConfig(),
                          check_expert: bool = True) -> Dataset:
    """Roll out a behavior policy of the requested quality tier.

    ``expert`` and ``medium`` reuse one online SAC run per seed: its best
    checkpoint and the first checkpoint reaching half of that normalized return.
    ``mixed`` is the first ``size`` transitions of that run's replay buffer.
    """
    if tier not in TIERS:
        raise ValueError(f"unknown tier {tier!r}")
    if size < spec.horizon and tier != "mixed":
        raise ValueError(f"size must cover at least one episode ({spec.horizon} steps)")
    key = jax.random.PRNGKey(seed)
    n_episodes = max(1, size // spec.horizon)
    if tier == "random":
        rolled = pointmass_rollouts(spec, rated_uniform_policy(spec), key, n_episodes)
        return _from_arrays(spec.spec_id, tier, seed, "uniform random actions within the rating",
                            *_flatten_episodes(*rolled))

    run = cached_online_sac(spec, sac_config, seed)
    expert_idx = select_expert(run)
    expert_return = float(run.checkpoint_returns[expert_idx])
    if check_expert and expert_return < spec.expert_threshold:
        raise RuntimeError(f"expert training failed: return {expert_return:.1f} "
                           f"below threshold {spec.expert_threshold}")
    medium_idx = select_medium(run, spec)
    meta = {"sac_steps": sac_config.steps, "expert_step": int(run.checkpoint_steps[expert_idx]),
            "expert_return": expert_return,
            "medium_step": int(run.checkpoint_steps[medium_idx]),
            "medium_return": float(run.checkpoint_returns[medium_idx])}
    if tier == "mixed":
        stop = min(size, len(run.buffer[2]))
        arrays = [x[:stop] for x in run.buffer]
        return _from_arrays(spec.spec_id, tier, seed, f"online SAC replay, steps 0-{stop}",
                            *arrays, **meta)
    idx = expert_idx if tier == "expert" else medium_idx
    trunk = run.checkpoint_trunks[idx]
    step = int(run.checkpoint_steps[idx])
    rolled = pointmass_rollouts(spec, stochastic_policy(trunk, spec.rated_accel), jax.random.fold_in(key, 1), n_episodes)
    return _from_arrays(spec.spec_id, tier, seed, f"online SAC policy at step {step}, sampled",
                        *_flatten_episodes(*rolled), **meta)


# -- persistence --------------------------------------------------------------

def write_dataset(ds: Dataset, path) -> None:
    records = np.concatenate([ds.observations, ds.actions, ds.rewards[:, None],
                              ds.next_observations, ds.dones[:, None]], axis=1)
    meta = json.dumps({"spec_id": ds.spec_id, "seed": ds.seed, "behavior": ds.behavior,
                       "metadata": ds.metadata}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, ds.state_dim, ds.action_dim, len(ds),
                             TIERS.index(ds.tier)))
        f.write(records.astype("<f8").tobytes())
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)


def read_dataset(path, expected_dims: tuple[int, int] | None = None) -> Dataset:
    """Read an ``OFRL`` file; any mismatch or truncation raises :class:`DatasetFormatError`."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DatasetFormatError(f"{path}: file too short for header")
    magic, version, sdim, adim, count, tier = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version} (expected {VERSION})")
    if expected_dims is not None and (sdim, adim) != tuple(expected_dims):
        raise DatasetFormatError(f"{path}: dims ({sdim}, {adim}) != expected {tuple(expected_dims)}")
    if tier >= len(TIERS):
        raise DatasetFormatError(f"{path}: unknown tier code {tier}")
    width = 2 * sdim + adim + 2
    body_end = _HEADER.size + 8 * width * count
    if len(data) < body_end + 4:
        raise DatasetFormatError(f"{path}: truncated, header promises {count} records")
    (meta_len,) = struct.unpack_from("<I", data, body_end)
    if len(data) != body_end + 4 + meta_len:
        raise DatasetFormatError(f"{path}: truncated or trailing bytes in metadata block")
    meta = json.loads(data[body_end + 4:].decode())
    rec = np.frombuffer(data, "<f8", count * width, _HEADER.size).reshape(count, width).astype(np.float64)
    s, a = rec[:, :sdim], rec[:, sdim:sdim + adim]
    r, sp, done = rec[:, sdim + adim], rec[:, sdim + adim + 1:2 * sdim + adim + 1], rec[:, -1]
    return Dataset(meta["spec_id"], TIERS[tier], meta["seed"], meta["behavior"],
                   *(np.ascontiguousarray(x) for x in (s, a, r, sp, done)), meta["metadata"])


def export_csv(ds: Dataset, path) -> None:
    """Columns ``s0..``, ``a0..``, ``r``, ``sp0..``, ``done``; one row per transition."""
    header = ([f"s{i}" for i in range(ds.state_dim)] + [f"a{i}" for i in range(ds.action_dim)]
              + ["r"] + [f"sp{i}" for i in range(ds.state_dim)] + ["done"])
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for t in ds.transitions():
            w.writerow([repr(float(x)) for x in t.s] + [repr(float(x)) for x in t.a] + [repr(t.r)]
                       + [repr(float(x)) for x in t.sp] + [int(t.done)])


def spec_for(ds: Dataset):
    return get_spec(ds.spec_id)
