import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _util import random_buffer, random_episode
from leadq.errors import BudgetError, ConfigurationError
from leadq.fl import GlobalModel
from leadq.marl import (AgentNet, Episode, EpisodeBatch, Learner, MarlConfig, MixerNet, ReplayBuffer,
                        Transition, compute_observation, compute_reward, compute_state, select_action,
                        td_loss, top_k, train_policies)
from leadq.data import make_synthetic_dataset
from leadq.nn import MlpSpec, ParamVector, init_mlp, softmax
from leadq.policies import QueryDecision


def _model(W, b):
    spec = MlpSpec((W.shape[0], W.shape[1]))
    return GlobalModel(spec, ParamVector.from_segments({"W0": W, "b0": b}))


# -- environment quantities ----------------------------------------------


def test_state_examples():
    held = make_synthetic_dataset(4, 3, 5, 1.0, seed=0)
    uniform = _model(np.zeros((3, 4)), np.zeros(4))
    np.testing.assert_allclose(compute_state(uniform, held), 0.25)
    sure = _model(np.zeros((3, 4)), np.array([800.0, 0, 0, 0]))
    np.testing.assert_array_equal(compute_state(sure, held), 1.0)
    m = _model(np.random.default_rng(1).normal(size=(3, 4)), np.array([0.1, 0.2, -0.3, 0.0]))
    want = [max(softmax(x @ m.params["W0"] + m.params["b0"])) for x in held.features]
    np.testing.assert_allclose(compute_state(m, held), want, rtol=1e-14)
    with pytest.raises(ConfigurationError):
        compute_state(m, held.subset(np.arange(0)))


def test_observation_examples():
    m = _model(np.random.default_rng(2).normal(size=(3, 4)), np.zeros(4))
    X = np.random.default_rng(3).normal(size=(5, 3))
    o = compute_observation(m, X, 5)
    assert o.shape == (20,)
    np.testing.assert_allclose(o.reshape(5, 4).sum(axis=1), 1.0, atol=1e-12)
    perm = [3, 1, 4, 0, 2]
    np.testing.assert_array_equal(compute_observation(m, X[perm], 5).reshape(5, 4), o.reshape(5, 4)[perm])
    uniform = _model(np.zeros((3, 4)), np.zeros(4))
    np.testing.assert_allclose(compute_observation(uniform, X, 5), 0.25)
    with pytest.raises(ConfigurationError):
        compute_observation(m, X, 6)


def test_reward_examples():
    held = make_synthetic_dataset(4, 3, 25, 1.0, seed=0)
    m = _model(np.random.default_rng(1).normal(size=(3, 4)), np.zeros(4))
    assert compute_reward(m, m, held) == 0.0

    class Fixed:
        def __init__(self, acc):
            self.acc = acc

    from leadq.marl import learner
    orig = learner.accuracy
    learner.accuracy = lambda model, data: model.acc
    try:
        assert math.isclose(compute_reward(Fixed(0.6), Fixed(0.5), held), 0.1, rel_tol=1e-12)
    finally:
        learner.accuracy = orig


# -- agent -----------------------------------------------------------------


def test_zero_agent_gives_zero_q():
    agent = AgentNet(4, 3, 5)
    phi = ParamVector.zeros(agent.layout())
    x = agent.inputs(np.random.default_rng(0).random(12), np.zeros(4))[None, :]
    q, h, _ = agent.step(phi, x, np.zeros((1, 5)))
    assert not q.any() and not h.any()


def test_shared_parameters_identical_q():
    agent = AgentNet(4, 3, 5)
    phi = agent.init(np.random.default_rng(0))
    o = np.random.default_rng(1).random(12)
    x = np.stack([agent.inputs(o, np.zeros(4))] * 2)
    q, _, _ = agent.step(phi, x, np.zeros((2, 5)))
    assert np.array_equal(q[0], q[1])


def test_agent_shape_error():
    agent = AgentNet(4, 3, 5)
    with pytest.raises(ConfigurationError):
        agent.inputs(np.zeros(11), np.zeros(4))


# -- action selection --------------------------------------------------------


def test_select_action_examples():
    rng = np.random.default_rng(0)
    assert select_action([0.1, 0.9, 0.3], 1, 0.0, rng).indices.tolist() == [1]
    assert select_action([3, 1, 2], 2, 0.0, rng).indices.tolist() == [0, 2]
    assert select_action([1, 1, 1], 1, 0.0, rng).indices.tolist() == [0]
    with pytest.raises(BudgetError):
        select_action([1, 2], 3, 0.0, rng)


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=10), st.floats(-1e3, 1e3))
def test_greedy_shift_invariant(q, c):
    q = np.array(q)
    a = select_action(q, 1, 0.0, np.random.default_rng(0))
    b = select_action(q + c, 1, 0.0, np.random.default_rng(0))
    assert a.indices[0] == int(np.argmax(q)) or q[a.indices[0]] == q.max()
    if np.all(np.diff(np.sort(q)) > 1e-9 * (1 + abs(c))):
        assert a == b


def test_epsilon_one_uniform_subsets():
    rng = np.random.default_rng(42)
    n = 10_000
    counts = {}
    for _ in range(n):
        key = tuple(select_action(np.arange(5.0), 2, 1.0, rng).indices.tolist())
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 10
    p = 0.1
    sigma = math.sqrt(n * p * (1 - p))
    assert all(abs(c - n * p) < 3 * sigma for c in counts.values())


def test_epsilon_schedule():
    cfg = MarlConfig()
    assert cfg.epsilon(1, 100) == 1.0
    assert math.isclose(cfg.epsilon(21, 100), 0.05)
    assert cfg.epsilon(99, 100) == 0.05
    assert math.isclose(cfg.epsilon(11, 100), 0.525)


def test_top_k_ties_lowest():
    assert np.flatnonzero(top_k(np.array([2.0, 5.0, 5.0, 1.0]), 1)).tolist() == [1]


# -- mixer ---------------------------------------------------------------


def test_mixer_linear_construction():
    mixer = MixerNet(3, 2, 4)
    psi = ParamVector.zeros(mixer.layout())
    psi["w1.b"][...] = np.tile(np.eye(1, 4, 0)[0], 3)  # unit weight into hidden unit 0
    psi["w2.b"][0] = 1.0
    psi["b2.b"][0] = 0.25
    q = np.array([[0.5, 1.5, 2.0]])
    # elu is the identity on positive input
    assert math.isclose(mixer(psi, q, np.zeros((1, 2)))[0], 4.0 + 0.25)


def test_mixer_single_agent_strictly_increasing():
    mixer = MixerNet(1, 3, 4)
    psi = mixer.init(np.random.default_rng(0))
    s = np.random.default_rng(1).random((1, 3))
    qs = np.linspace(-5, 5, 50)[:, None]
    out = mixer(psi, qs, np.repeat(s, 50, axis=0))
    assert np.all(np.diff(out) > 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_mixer_monotone_property(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 6))
    mixer = MixerNet(K, 4, 5)
    psi = mixer.init(rng)
    psi = psi.with_values(psi.values * rng.uniform(0.5, 20))
    q = rng.normal(size=(1, K)) * 5
    s = rng.random((1, 4))
    k = rng.integers(K)
    q2 = q.copy()
    q2[0, k] += rng.uniform(1e-6, 3)
    assert mixer(psi, q2, s)[0] >= mixer(psi, q, s)[0] - 1e-12


# -- td loss -------------------------------------------------------------


def _batch(seed, B=2, K=3, Nu=4, C=3, S=5, J=3):
    rng = np.random.default_rng(seed)
    return EpisodeBatch.stack([random_episode(rng, K, Nu, C, S, J) for _ in range(B)])


def _nets(seed, K=3, Nu=4, C=3, S=5):
    rng = np.random.default_rng(seed)
    agent, mixer = AgentNet(Nu, C, 6), MixerNet(K, S, 4)
    return agent, mixer, agent.init(rng), mixer.init(rng), agent.init(rng), mixer.init(rng)


def _fd(f, p, h=1e-6):
    out = np.zeros(len(p))
    for i in range(len(p)):
        v = p.values.copy()
        v[i] += h
        up = f(p.with_values(v))
        v[i] -= 2 * h
        out[i] = (up - f(p.with_values(v))) / (2 * h)
    return out


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_td_gradients_match_finite_differences(seed):
    batch = _batch(seed)
    agent, mixer, phi, psi, phit, psit = _nets(seed + 10)
    psi = psi.with_values(psi.values * 5)
    res = td_loss(batch, agent, mixer, phi, psi, phit, psit, 0.9, 1)
    na = _fd(lambda p: td_loss(batch, agent, mixer, p, psi, phit, psit, 0.9, 1).loss, phi)
    nm = _fd(lambda p: td_loss(batch, agent, mixer, phi, p, phit, psit, 0.9, 1).loss, psi)
    for ana, num in ((res.agent_grad.values, na), (res.mixer_grad.values, nm)):
        denom = np.maximum(np.abs(ana) + np.abs(num), 1e-6)
        assert np.max(np.abs(ana - num) / denom) < 1e-3


def test_td_gamma_zero_targets_are_rewards():
    batch = _batch(3)
    agent, mixer, phi, psi, phit, psit = _nets(4)
    res = td_loss(batch, agent, mixer, phi, psi, phit, psit, 0.0, 1)
    np.testing.assert_array_equal(res.targets, batch.rewards)


def test_td_fixed_point_zero_loss():
    agent, mixer = AgentNet(2, 2, 3), MixerNet(1, 2, 2)
    phi = ParamVector.zeros(agent.layout())
    psi = ParamVector.zeros(mixer.layout())
    psi["b2.b"][0] = 0.3
    t = Transition(np.ones(2), np.full((1, 4), 0.5), np.array([[1.0, 0.0]]), 0.3, np.ones(2),
                   np.zeros((1, 4)), True, 0)
    batch = EpisodeBatch.stack([Episode.from_transitions([t])])
    assert td_loss(batch, agent, mixer, phi, psi, phi, psi, 0.99, 1).loss == 0.0


def test_td_single_transition_hand_computed():
    agent, mixer = AgentNet(1, 1, 1), MixerNet(1, 1, 1)
    phi = ParamVector.zeros(agent.layout())
    phi["head.b"][0] = 0.7                                  # Q_1 = 0.7
    psi = ParamVector.zeros(mixer.layout())
    psi["w1.b"][0] = -2.0                                   # |w1| = 2
    psi["b1.b"][0] = 0.1
    psi["w2.b"][0] = 1.5
    psi["b2.b"][0] = -0.2
    t = Transition(np.array([0.5]), np.ones((1, 1)), np.ones((1, 1)), 1.0, np.array([0.5]),
                   np.zeros((1, 1)), True, 0)
    batch = EpisodeBatch.stack([Episode.from_transitions([t])])
    q_tot = 1.5 * (0.7 * 2.0 + 0.1) - 0.2
    res = td_loss(batch, agent, mixer, phi, psi, phi, psi, 0.99, 1)
    assert math.isclose(res.loss, (1.0 - q_tot) ** 2, rel_tol=1e-14)


def test_episode_requires_terminal_end():
    rng = np.random.default_rng(0)
    ep = random_episode(rng, 2, 3, 2, 4, 3)
    assert ep.terminals.tolist() == [False, False, True]
    t = Transition(np.zeros(4), np.zeros((2, 6)), np.zeros((2, 3)), 0.0, np.zeros(4), np.zeros((2, 6)), False, 0)
    with pytest.raises(ConfigurationError):
        Episode.from_transitions([t])


def test_buffer_ring_and_complete_episodes():
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(3)
    eps = [random_episode(rng, 2, 3, 2, 4, 5) for _ in range(5)]
    for e in eps:
        buf.add(e)
    assert len(buf) == 3 and buf.n_transitions == 15
    assert buf.episodes[0] is eps[3] and buf.episodes[1] is eps[4]
    b = buf.sample(10, rng)
    assert b.rewards.shape == (3, 5) and b.terminals[:, -1].all()


def test_train_policies_noop_below_threshold():
    rng = np.random.default_rng(0)
    cfg = MarlConfig(batch_size=32, episode_length=10)
    buf = random_buffer(rng, 3, 2, 3, 2, 4, 10)
    learner = Learner(AgentNet(3, 2, 4), MixerNet(2, 4, 3), cfg, rng)
    phi = learner.phi.copy()
    assert train_policies(buf, learner, cfg, 1, rng) == []
    assert learner.phi == phi
    buf.add(random_episode(rng, 2, 3, 2, 4, 10))
    assert len(train_policies(buf, learner, MarlConfig(batch_size=32, max_update_steps=3), 1, rng)) == 3


def test_target_sync_period():
    rng = np.random.default_rng(0)
    cfg = MarlConfig(target_update_period=5, max_update_steps=4, batch_size=2)
    buf = random_buffer(rng, 4, 2, 3, 2, 4, 3)
    learner = Learner(AgentNet(3, 2, 4), MixerNet(2, 4, 3), cfg, rng)
    phi0 = learner.phi_target.copy()
    train_policies(buf, learner, cfg, 1, rng)
    assert learner.phi_target == phi0
    train_policies(buf, learner, cfg, 1, rng)
    assert learner.updates == 8 and learner.phi_target != phi0
