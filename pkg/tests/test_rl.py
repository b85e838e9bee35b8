import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emslab.errors import CheckpointError, ShapeError, TrainingDivergence, UsageError
from emslab.rl import (Adam, AgentConfig, DdpgAgent, Mlp, PerBuffer, SumTree, Transition, backward,
                       forward, load_checkpoint, save_checkpoint, soft_update)


def numeric_grads(net, x, g_out, eps=1e-6):
    out = []
    for p in net.params:
        num = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + eps
            hi = np.sum(net.forward(x) * g_out)
            p[i] = old - eps
            lo = np.sum(net.forward(x) * g_out)
            p[i] = old
            num[i] = (hi - lo) / (2 * eps)
        out.append(num)
    return out


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-7, np.abs(a) + np.abs(b)))


@pytest.mark.parametrize("sizes, act", [([4, 8, 8, 1], "tanh"), ([5, 8, 6, 4, 1], "linear")])
def test_backward_matches_finite_differences(sizes, act):
    rng = np.random.default_rng(1)
    net = Mlp.init(sizes, rng, out_activation=act, final_scale=0.5)
    x = rng.normal(size=(3, sizes[0]))
    g_out = rng.normal(size=(3, 1))
    net.forward(x)
    grads, _ = net.backward(g_out)
    for a, n in zip(grads, numeric_grads(net, x, g_out)):
        assert rel_err(a, n) < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    net = Mlp.init([5, 7, 1], rng, final_scale=0.5)
    x = rng.normal(size=(2, 5))
    net.forward(x)
    _, g_in = net.backward(np.ones((2, 1)))
    eps = 1e-6
    num = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        num[i] = (net.forward(xp).sum() - net.forward(xm).sum()) / (2 * eps)
    assert rel_err(g_in, num) < 1e-4


def test_preactivation_gradient_term():
    rng = np.random.default_rng(3)
    net = Mlp.init([3, 6, 1], rng, out_activation="tanh", final_scale=0.5)
    x = rng.normal(size=(4, 3))
    net.forward(x)
    c = rng.normal(size=(4, 1))
    grads, _ = net.backward(np.zeros((4, 1)), c)

    def loss():
        net.forward(x)
        return float(np.sum(c * net.last_preactivation))

    eps = 1e-6
    for p, g in zip(net.params, grads):
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + eps
            hi = loss()
            p[i] = old - eps
            lo = loss()
            p[i] = old
            assert abs((hi - lo) / (2 * eps) - g[i]) < 1e-6 * max(1.0, abs(g[i]))


def test_dropout_masks_are_reused_by_backward():
    rng = np.random.default_rng(4)
    net = Mlp.init([4, 16, 1], rng, dropout_rate=0.5, final_scale=0.5)
    x = rng.normal(size=(2, 4))
    g1 = backward(net, x, np.ones((2, 1)), dropout_on=True, rng_seed=7)
    g2 = backward(net, x, np.ones((2, 1)), dropout_on=True, rng_seed=7)
    g3 = backward(net, x, np.ones((2, 1)), dropout_on=False)
    assert all(np.array_equal(a, b) for a, b in zip(g1, g2))
    assert not all(np.array_equal(a, b) for a, b in zip(g1, g3))


def test_dropout_is_unbiased_in_expectation():
    rng = np.random.default_rng(5)
    net = Mlp.init([3, 50, 1], rng, out_activation="linear", dropout_rate=0.2, final_scale=0.3)
    x = np.ones((1, 3)) * 0.1
    plain = net.forward(x)[0, 0]
    avg = np.mean([net.forward(x, dropout=True, rng=rng)[0, 0] for _ in range(4000)])
    assert avg == pytest.approx(plain, abs=0.02)


def test_shape_and_usage_errors():
    rng = np.random.default_rng(0)
    net = Mlp.init([3, 4, 1], rng, dropout_rate=0.1)
    with pytest.raises(ShapeError):
        net.forward(np.zeros(5))
    with pytest.raises(UsageError):
        net.forward(np.zeros(3), dropout=True)
    with pytest.raises(UsageError):
        Mlp.init([3, 1], rng).backward(np.ones(1))
    with pytest.raises(ShapeError):
        Mlp([3, 1], [np.zeros((2, 1))], [np.zeros(1)])


def test_single_vector_and_batch_agree():
    net = Mlp.init([4, 5, 1], np.random.default_rng(0), final_scale=0.5)
    x = np.arange(4.0)
    assert forward(net, x)[0] == pytest.approx(forward(net, x[None, :])[0, 0])


def test_adam_first_step_moves_by_learning_rate():
    p = [np.array([1.0, -2.0])]
    opt = Adam(p, lr=0.1)
    opt.step(p, [np.array([3.0, -0.5])])
    assert np.allclose(p[0], [0.9, -1.9], atol=1e-6)


def test_adam_minimises_quadratic():
    p = [np.array([5.0])]
    opt = Adam(p, lr=0.1)
    for _ in range(500):
        opt.step(p, [2 * p[0]])
    assert abs(p[0][0]) < 1e-2


# -- prioritized replay ---------------------------------------------------


def test_sum_tree_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        SumTree(6)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 15), st.floats(0, 100)), min_size=1, max_size=200))
def test_sum_tree_internal_nodes_are_child_sums(ops):
    tree = SumTree(16)
    for i, v in ops:
        tree.set(i, v)
    nodes = tree.nodes
    for i in range(1, 16):
        assert nodes[i] == pytest.approx(nodes[2 * i] + nodes[2 * i + 1], rel=1e-12, abs=1e-12)


def test_sum_tree_find_oracle():
    tree = SumTree(4)
    tree.set(np.arange(4), np.array([1.0, 2.0, 3.0, 4.0]))
    assert list(tree.find(np.array([0.0, 0.99, 1.0, 2.99, 3.0, 5.99, 6.0, 9.99]))) == [0, 0, 1, 1, 2, 2, 3, 3]


def transition(i):
    return Transition(np.full(4, float(i)), 0.0, 0.0, np.zeros(4), False)


def test_per_sampling_frequencies_match_priorities():
    buf = PerBuffer(8, alpha=0.6)
    for i in range(5):
        buf.insert(transition(i))
    buf.update(np.arange(5), np.array([1.0, 2.0, 0.5, 4.0, 0.0]) - buf.epsilon)
    rng = np.random.default_rng(0)
    counts = np.zeros(5)
    for _ in range(20000):
        idx, _, _ = buf.sample(5, rng)
        np.add.at(counts, idx, 1)
    p = np.maximum(np.array([1.0, 2.0, 0.5, 4.0, 0.0]), buf.epsilon) ** 0.6
    assert np.allclose(counts / counts.sum(), p / p.sum(), atol=0.02)


def test_per_importance_weights_oracle():
    buf = PerBuffer(4, alpha=1.0, beta=1.0)
    for i in range(2):
        buf.insert(transition(i))
    buf.update([0, 1], np.array([1.0, 3.0]) - buf.epsilon)
    idx, _, w = buf.sample(2, np.random.default_rng(0))
    # P = (0.25, 0.75); w = (N P)^-1 normalised by the max
    raw = np.where(idx == 0, 2.0, 2.0 / 3.0)
    assert np.allclose(w, raw / raw.max())


def test_per_new_transitions_get_max_priority():
    buf = PerBuffer(4)
    buf.insert(transition(0))
    buf.update([0], [5.0])
    buf.insert(transition(1))
    leaves = buf.tree.leaves()
    assert leaves[1] == pytest.approx(leaves[0])


def test_per_ring_buffer_overwrites_oldest():
    buf = PerBuffer(2)
    for i in range(3):
        buf.insert(transition(i))
    assert len(buf) == 2
    assert buf.data[0].state[0] == 2.0


def test_per_errors():
    buf = PerBuffer(4)
    with pytest.raises(UsageError):
        buf.sample(1, np.random.default_rng(0))
    buf.insert(transition(0))
    with pytest.raises(UsageError):
        buf.sample(2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        buf.update([0], [np.nan])


# -- DDPG -------------------------------------------------------------------

SMALL = AgentConfig(actor_hidden=(8,), critic_hidden=(8, 8), batch_size=4)


def random_batch(rng, n=8):
    return [Transition(rng.normal(size=4), float(rng.random()), float(rng.normal()), rng.normal(size=4),
                       bool(rng.random() < 0.2)) for _ in range(n)]


def test_soft_update_formula():
    rng = np.random.default_rng(0)
    a = Mlp.init([2, 3, 1], rng)
    b = Mlp.init([2, 3, 1], rng)
    before = [p.copy() for p in a.params]
    soft_update(a, b, 0.25)
    for t, o, new in zip(before, b.params, a.params):
        assert np.allclose(new, 0.75 * t + 0.25 * o)


def test_actions_lie_in_unit_interval():
    agent = DdpgAgent(SMALL, seed=0)
    rng = np.random.default_rng(1)
    for _ in range(50):
        u = agent.act(rng.normal(size=4) * 10, explore=True)
        assert 0.0 <= u <= 1.0


def test_greedy_is_deterministic_and_noise_decays():
    agent = DdpgAgent(SMALL, seed=0)
    s = np.ones(4)
    assert agent.act(s) == agent.act(s)
    sigma = agent.noise_sigma
    agent.decay_noise()
    assert agent.noise_sigma == pytest.approx(sigma * SMALL.noise_decay)


def test_update_reduces_critic_loss_on_fixed_batch():
    agent = DdpgAgent(AgentConfig(actor_hidden=(16,), critic_hidden=(32, 32), dropout_rate=0.0, tau=1.0,
                                  gamma=0.5), seed=0)
    batch = random_batch(np.random.default_rng(0), 16)
    first = agent.update(batch, train_actor=False)[0]
    for _ in range(300):
        last = agent.update(batch, train_actor=False)[0]
    assert last < 0.2 * first


def train_bandit(peak, preact_l2, updates=3000):
    """One-step problem whose reward peaks at u = ``peak`` in every state."""
    cfg = AgentConfig(actor_hidden=(16,), critic_hidden=(32, 32), gamma=0.01, dropout_rate=0.0,
                      actor_lr=1e-3, critic_lr=3e-3, batch_size=64, actor_preact_l2=preact_l2)
    agent = DdpgAgent(cfg, seed=0)
    rng = np.random.default_rng(1)
    data = []
    for _ in range(512):
        s = rng.normal(size=4)
        u = rng.random()
        data.append(Transition(s, u, -(u - peak) ** 2, s, True))
    for _ in range(updates):
        idx = rng.integers(0, len(data), 64)
        agent.update([data[i] for i in idx])
    return [agent.act(rng.normal(size=4)) for _ in range(5)]


@pytest.mark.parametrize("peak", [0.15, 0.85])
def test_actor_finds_interior_optimum_with_preactivation_penalty(peak):
    assert np.allclose(train_bandit(peak, 1e-2), peak, atol=0.08)


def test_actor_without_penalty_gets_stuck_in_tanh_tail():
    # the critic is nearly flat around the optimum; once tanh saturates the
    # actor gradient vanishes and the policy stays at the boundary
    assert max(train_bandit(0.15, 0.0)) < 0.05


def test_target_q_averages_dropout_passes():
    agent = DdpgAgent(AgentConfig(actor_hidden=(8,), critic_hidden=(8,), dropout_rate=0.0, mc_passes=3), seed=0)
    s2 = np.random.default_rng(0).normal(size=(5, 4))
    a = 0.5 * (agent.target_actor.forward(s2) + 1.0)
    direct = agent.target_critic.forward(np.hstack([s2, a]))[:, 0]
    assert np.allclose(agent.target_q(s2), direct)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_detected():
    agent = DdpgAgent(SMALL, seed=0)
    batch = random_batch(np.random.default_rng(0), 4)
    batch[0] = Transition(batch[0].state, 0.5, np.inf, batch[0].next_state, False)
    with pytest.raises(TrainingDivergence):
        agent.update(batch)


def test_checkpoint_round_trip(tmp_path):
    agent = DdpgAgent(SMALL, seed=3)
    rng = np.random.default_rng(0)
    for _ in range(5):
        agent.update(random_batch(rng, 4))
    path = tmp_path / "a.json"
    save_checkpoint(agent, path, {"episode": 2})
    back, meta = load_checkpoint(path)
    assert meta == {"episode": 2}
    assert back.config == agent.config
    for x, y in zip(agent.actor.params + agent.critic.params, back.actor.params + back.critic.params):
        assert np.array_equal(x, y)
    # identical continuation: same rng, optimiser state and networks
    batch = random_batch(np.random.default_rng(9), 4)
    assert np.array_equal(agent.update(batch)[2], back.update(batch)[2])


def test_checkpoint_rejects_shape_mismatch(tmp_path):
    agent = DdpgAgent(SMALL, seed=0)
    d = agent.state_dict()
    d["config"]["actor_hidden"] = [9]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    with pytest.raises(ShapeError):
        load_checkpoint(p)


def test_checkpoint_rejects_foreign_files(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{}")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    p.write_text("not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.json")


def test_agent_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(gamma=1.0)
    with pytest.raises(ValueError):
        AgentConfig.from_dict({"gama": 0.9})
    assert AgentConfig.from_dict(SMALL.to_dict()) == SMALL
