import struct

import jax
import jax.numpy as jnp
import numpy as np
import pytest

from fisherbrc.checkpoint import (CheckpointError, load_behavior, read_checkpoint, save_behavior,
                                  write_checkpoint)
from fisherbrc.datasets import (DatasetFormatError, export_csv, gen_bandit_dataset, gen_pointmass_dataset,
                                read_dataset, write_dataset)
from fisherbrc.distributions import LaplaceParams
from fisherbrc.envs import (SYNTHETIC_OUT_OF_SUPPORT, PointMassSpec, ToyBanditSpec, evaluate_policy, get_spec,
                            normalize_score, pointmass_rollouts, rated_uniform_policy, uniform_policy)
from fisherbrc.online import OnlineSACConfig


def test_bandit_reward():
    spec = ToyBanditSpec()
    np.testing.assert_allclose(spec.reward(jnp.array([0.0, 0.25, -0.25, 0.1])), [-0.125, 0.125, 0.125, -0.025])
    assert float(spec.reward(0.3)) == SYNTHETIC_OUT_OF_SUPPORT


def test_bandit_dataset():
    ds = gen_bandit_dataset(3)
    assert len(ds) == 1000 and ds.action_dim == 1
    assert np.all(np.abs(ds.actions) <= 0.25)
    np.testing.assert_allclose(ds.rewards, np.abs(ds.actions[:, 0]) - 0.125)
    assert gen_bandit_dataset(3).equals(ds)
    assert not gen_bandit_dataset(4).equals(ds)


def test_pointmass_dynamics_by_hand():
    spec = PointMassSpec()
    s = jnp.array([0.5, -0.2, 0.1, 0.0])
    s2, r = spec.step(s, jnp.array([0.4, -0.8]))
    vel = np.array([0.1, 0.0]) + 0.1 * (np.array([0.4, -0.8]) - 0.5 * np.array([0.1, 0.0]))
    pos = np.array([0.5, -0.2]) + 0.1 * vel
    np.testing.assert_allclose(s2, np.concatenate([pos, vel]), atol=1e-15)
    expected_r = -np.linalg.norm(pos) - 0.01 * (0.16 + 0.64) - 1.0 * 0.3
    assert float(r) == pytest.approx(expected_r, abs=1e-14)


def test_wall_clips_and_stops():
    spec = PointMassSpec()
    s2, _ = spec.step(jnp.array([0.999, 0.0, 1.0, 0.0]), jnp.array([1.0, 0.0]))
    assert float(s2[0]) == 1.0 and float(s2[2]) == 0.0


def test_rollouts_and_evaluation_are_deterministic():
    spec = PointMassSpec()
    S, A, R, S2, D = pointmass_rollouts(spec, rated_uniform_policy(spec), jax.random.PRNGKey(0), 3)
    assert S.shape == (3, 200, 4) and A.shape == (3, 200, 2)
    assert np.all(np.abs(A) <= spec.rated_accel)
    np.testing.assert_array_equal(D[:, -1], 1.0)
    assert float(D[:, :-1].sum()) == 0.0
    np.testing.assert_array_equal(S[:, 1:], S2[:, :-1])
    pol = uniform_policy(2)
    assert evaluate_policy(pol, spec, 4, seed=7) == evaluate_policy(pol, spec, 4, seed=7)
    with pytest.raises(ValueError):
        evaluate_policy(pol, spec, 0)


def test_normalization_references():
    spec = PointMassSpec()
    assert normalize_score(spec, spec.random_score) == 0.0
    assert normalize_score(spec, spec.expert_score) == pytest.approx(100.0)
    assert normalize_score(ToyBanditSpec(), 0.125) == 100.0
    with pytest.raises(ValueError):
        get_spec("hopper")


def test_random_tier_reproduces_reference_scale():
    spec = PointMassSpec()
    ret, _ = evaluate_policy(rated_uniform_policy(spec), spec, 1000, seed=0)
    assert ret == pytest.approx(spec.random_score, abs=1e-3)


def test_random_tier_dataset():
    ds = gen_pointmass_dataset("random", size=2000, seed=1)
    assert len(ds) == 2000 and ds.state_dim == 4 and ds.tier == "random"
    assert float(ds.dones.sum()) == 10
    with pytest.raises(ValueError):
        gen_pointmass_dataset("great")
    with pytest.raises(ValueError):
        gen_pointmass_dataset("random", size=50)


def test_sac_tiers_small_run():
    cfg = OnlineSACConfig(steps=3000, start_steps=1000, checkpoint_interval=1000, eval_episodes=2)
    med = gen_pointmass_dataset("medium", size=1000, seed=0, sac_config=cfg, check_expert=False)
    mixed = gen_pointmass_dataset("mixed", size=1000, seed=0, sac_config=cfg, check_expert=False)
    assert len(med) == 1000 and len(mixed) == 1000
    assert med.metadata["medium_step"] <= 3000
    assert np.all(np.abs(med.actions) <= PointMassSpec().rated_accel)


def test_dataset_roundtrip_bit_exact(tmp_path):
    ds = gen_pointmass_dataset("random", size=1000, seed=2)
    p1, p2 = tmp_path / "a.ofrl", tmp_path / "b.ofrl"
    write_dataset(ds, p1)
    back = read_dataset(p1, expected_dims=(4, 2))
    assert back.equals(ds)
    write_dataset(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_dataset_format_errors(tmp_path):
    ds = gen_bandit_dataset(0)
    p = tmp_path / "d.ofrl"
    write_dataset(ds, p)
    raw = p.read_bytes()
    cases = {"magic": b"XXXX" + raw[4:], "version": raw[:4] + struct.pack("<I", 9) + raw[8:],
             "truncated": raw[:100], "trailing": raw + b"\0", "short": raw[:5]}
    for name, blob in cases.items():
        (tmp_path / name).write_bytes(blob)
        with pytest.raises(DatasetFormatError):
            read_dataset(tmp_path / name)
    with pytest.raises(DatasetFormatError):
        read_dataset(p, expected_dims=(4, 2))


def test_dataset_validation():
    ds = gen_bandit_dataset(0)
    with pytest.raises(ValueError):
        type(ds)("bandit", "random", 0, "x", ds.observations, ds.actions, ds.rewards[:-1],
                 ds.next_observations, ds.dones)
    bad = ds.rewards.copy()
    bad[0] = np.inf
    with pytest.raises(ValueError):
        type(ds)("bandit", "random", 0, "x", ds.observations, ds.actions, bad, ds.next_observations, ds.dones)


def test_split_and_csv(tmp_path):
    ds = gen_bandit_dataset(0)
    a, b = ds.split(0.8, seed=1)
    assert len(a) == 800 and len(b) == 200
    assert sorted(np.concatenate([a.actions, b.actions])[:, 0]) == sorted(ds.actions[:, 0])
    export_csv(ds, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "s0,a0,r,sp0,done" and len(lines) == 1001
    assert float(lines[1].split(",")[1]) == ds.actions[0, 0]


def test_checkpoint_roundtrip_and_errors(tmp_path):
    arrays = {"w": np.arange(6, dtype=np.float32).reshape(2, 3) / 7, "nested": {"b": np.array([np.pi])}}
    p = tmp_path / "c.ckpt"
    write_checkpoint(p, {"TEST": ({"k": 1}, arrays)})
    sec = read_checkpoint(p)
    meta, back = sec["TEST"]
    assert meta == {"k": 1}
    assert back["w"].dtype == np.float32 and np.array_equal(back["w"], arrays["w"])
    assert np.array_equal(back["nested"]["b"], arrays["nested"]["b"])
    raw = p.read_bytes()
    for blob in (b"NOPE" + raw[4:], raw[:-3], raw + b"x", raw[:4] + struct.pack("<I", 99) + raw[8:]):
        (tmp_path / "bad").write_bytes(blob)
        with pytest.raises(CheckpointError):
            read_checkpoint(tmp_path / "bad")


def test_laplace_behavior_checkpoint(tmp_path):
    lap = LaplaceParams(jnp.asarray(0.01), jnp.asarray(0.12), -1.0, 1.0)
    save_behavior(tmp_path / "b.ckpt", lap)
    back = load_behavior(tmp_path / "b.ckpt")
    assert float(back.loc) == 0.01 and float(back.scale) == 0.12 and back.low == -1.0
