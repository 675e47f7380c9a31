import numpy as np
import pytest

from mixtrain.replay import PrioritizedReplay


def _push_n(buf, n, dim=3):
    for k in range(n):
        obs = np.full(dim, float(k), dtype=np.float32)
        buf.push(obs, k % 2, float(k), obs + 1, k % 5 == 0)


def test_len_and_wraparound():
    buf = PrioritizedReplay(capacity=4, obs_dim=1)
    assert len(buf) == 0
    for k in range(6):
        buf.push(np.array([float(k)], np.float32), 0, 0.0,
                 np.zeros(1, np.float32), False)
    assert len(buf) == 4  # capped at capacity
    stored = {float(buf._obs[i, 0]) for i in range(4)}
    assert stored == {2.0, 3.0, 4.0, 5.0}  # oldest two overwritten


def test_capacity_validation():
    with pytest.raises(ValueError):
        PrioritizedReplay(capacity=0, obs_dim=3)


def test_sample_empty_raises():
    buf = PrioritizedReplay(capacity=4, obs_dim=3)
    with pytest.raises(ValueError):
        buf.sample(2, np.random.default_rng(0))


def test_sample_shapes_and_weights():
    buf = PrioritizedReplay(capacity=16, obs_dim=3)
    _push_n(buf, 10)
    idx, batch = buf.sample(8, np.random.default_rng(1))
    assert idx.shape == (8,)
    assert batch["obs"].shape == (8, 3)
    assert batch["next_obs"].shape == (8, 3)
    assert batch["action"].dtype == np.int64
    assert batch["done"].dtype == np.float32
    w = batch["weights"]
    assert w.dtype == np.float32
    assert np.all(w > 0) and np.all(w <= 1.0)
    assert w.max() == pytest.approx(1.0)


def test_new_entries_get_max_priority():
    buf = PrioritizedReplay(capacity=8, obs_dim=1)
    buf.push(np.zeros(1, np.float32), 0, 0.0, np.zeros(1, np.float32), False)
    buf.update_priorities(np.array([0]), np.array([9.0]))
    buf.push(np.ones(1, np.float32), 1, 1.0, np.ones(1, np.float32), False)
    assert buf._prio[1] == pytest.approx(buf._prio[0])


def test_priorities_steer_sampling():
    buf = PrioritizedReplay(capacity=4, obs_dim=1, alpha=1.0)
    _push_n(buf, 4, dim=1)
    buf.update_priorities(np.arange(4), np.array([0.0, 0.0, 0.0, 100.0]))
    rng = np.random.default_rng(2)
    idx, _ = buf.sample(500, rng)
    # entry 3 dominates: |td|+eps ratio is about 1e5
    assert np.mean(idx == 3) > 0.95


def test_update_priorities_uses_abs():
    buf = PrioritizedReplay(capacity=2, obs_dim=1, eps=0.0)
    _push_n(buf, 2, dim=1)
    buf.update_priorities(np.array([0, 1]), np.array([-3.0, 3.0]))
    assert buf._prio[0] == pytest.approx(3.0)
    assert buf._prio[1] == pytest.approx(3.0)


def test_sampling_deterministic_for_seed():
    buf = PrioritizedReplay(capacity=16, obs_dim=2)
    _push_n(buf, 12, dim=2)
    idx1, _ = buf.sample(6, np.random.default_rng(42))
    idx2, _ = buf.sample(6, np.random.default_rng(42))
    assert np.array_equal(idx1, idx2)
