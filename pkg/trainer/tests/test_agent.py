import numpy as np
import torch
import pytest

from mixtrain.agent import Agent, GO, STOP, TOKENS
from mixtrain.replay import PrioritizedReplay


def _agent(obs_dim=4, lr=0.01, gamma=0.9, seed=0):
    return Agent(obs_dim, hidden=(16, 16), lr=lr, gamma=gamma, seed=seed)


def test_tokens_match_action_indices():
    assert TOKENS[STOP] == "Stop"
    assert TOKENS[GO] == "Go"


def test_greedy_act_matches_argmax():
    agent = _agent()
    obs = np.random.default_rng(1).normal(size=4).astype(np.float32)
    with torch.no_grad():
        expect = int(agent.online(torch.from_numpy(obs).unsqueeze(0)).argmax())
    rng = np.random.default_rng(2)
    assert all(agent.act(obs, 0.0, rng) == expect for _ in range(5))


def test_exploration_hits_both_actions():
    agent = _agent()
    obs = np.zeros(4, dtype=np.float32)
    rng = np.random.default_rng(3)
    picks = {agent.act(obs, 1.0, rng) for _ in range(50)}
    assert picks == {0, 1}


def test_greedy_batch_agrees_with_single():
    agent = _agent()
    rng = np.random.default_rng(4)
    obs = rng.normal(size=(6, 4)).astype(np.float32)
    batch = agent.greedy_batch(obs)
    singles = [agent.act(obs[i], 0.0, rng) for i in range(6)]
    assert list(batch) == singles


def test_target_starts_synced_and_resyncs():
    agent = _agent()
    x = torch.zeros(1, 4)
    with torch.no_grad():
        assert torch.equal(agent.online(x), agent.target(x))
    # drift the online net, then resync
    buf = _terminal_buffer(agent.obs_dim, reward=1.0)
    for _ in range(3):
        agent.update(buf, batch_size=8, rng=np.random.default_rng(0))
    with torch.no_grad():
        assert not torch.equal(agent.online(x), agent.target(x))
    agent.sync_target()
    with torch.no_grad():
        assert torch.equal(agent.online(x), agent.target(x))


def _terminal_buffer(obs_dim, reward):
    buf = PrioritizedReplay(capacity=32, obs_dim=obs_dim)
    rng = np.random.default_rng(7)
    for _ in range(16):
        obs = rng.normal(size=obs_dim).astype(np.float32)
        buf.push(obs, GO, reward, np.zeros(obs_dim, np.float32), True)
    return buf


def test_update_regresses_terminal_reward():
    # all transitions terminal with reward 1: Q(s, Go) should approach 1
    agent = _agent(lr=0.02)
    buf = _terminal_buffer(agent.obs_dim, reward=1.0)
    rng = np.random.default_rng(5)
    losses = [agent.update(buf, batch_size=16, rng=rng) for _ in range(200)]
    assert losses[-1] < losses[0]
    obs = np.random.default_rng(7).normal(size=agent.obs_dim).astype(np.float32)
    with torch.no_grad():
        q_go = agent.online(torch.from_numpy(obs).unsqueeze(0))[0, GO].item()
    assert q_go == pytest.approx(1.0, abs=0.15)


def test_update_refreshes_priorities():
    agent = _agent()
    buf = _terminal_buffer(agent.obs_dim, reward=1.0)
    before = buf._prio[: len(buf)].copy()
    agent.update(buf, batch_size=16, rng=np.random.default_rng(6))
    after = buf._prio[: len(buf)]
    assert not np.array_equal(before, after)
