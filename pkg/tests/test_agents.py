import numpy as np
import pytest

from metanas.agents import (
    BufferUnderfull,
    DqnAgent,
    EmptySegment,
    IncompatibleCheckpoint,
    MetaA2CAgent,
    RandomAgent,
    ReplayBuffer,
    a2c_objective,
    discounted_returns,
    dqn_targets,
    linear_epsilon,
    policy_input,
    policy_input_size,
    random_act,
)
from metanas.config import A2cConfig, DqnConfig, EnvironmentConfig, Mode
from metanas.nn import RecurrentActorCritic, RecurrentState, lstm_step, sigmoid, softmax
from metanas.nsc import encoding_width

CH = EnvironmentConfig(mode=Mode.CHAIN)
MB = EnvironmentConfig(mode=Mode.MULTI_BRANCH)


def chi_square(counts):
    expected = counts.sum() / len(counts)
    return float(np.sum((counts - expected) ** 2 / expected))


# chi-square 99.9% quantiles for 7 and 13 degrees of freedom
CHI2_999 = {8: 24.32, 14: 34.53}


# ---------------------------------------------------------------- inputs

def test_policy_input_layout():
    enc = np.zeros((CH.d, encoding_width(CH)))
    x = policy_input(enc, 3, 0.25, 4, 8)
    assert x.shape == (policy_input_size(CH),) == (10 * 25 + 8 + 2,)
    assert x[250 + 3] == 1.0 and x[-2] == 0.25 and x[-1] == 4.0


def test_trial_start_resets_memory_and_draws_uniform_first_action():
    agent = MetaA2CAgent(CH, seed=0)
    firsts = []
    for _ in range(800):
        agent.start_trial()
        assert np.all(agent.rstate.h == 0) and np.all(agent.rstate.c == 0)
        assert agent.prev_reward == 0.0
        firsts.append(agent.prev_action)
    assert chi_square(np.bincount(firsts, minlength=8)) < CHI2_999[8]


# ---------------------------------------------------------------- LSTM by hand

def test_two_unit_lstm_single_step_by_hand():
    x = np.array([1.0, -1.0])
    W = np.zeros((4, 8))
    W[0, :] = [0.5, -0.5, 1.0, 0.0, 0.2, 0.3, 0.4, -0.4]
    W[1, :] = [0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1]
    b = np.array([0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    h, state, _ = lstm_step(W, b, x, RecurrentState(np.zeros(2), np.zeros(2)))
    z = np.array([0.4, -0.6, 1.9, 0.9, 0.1, 0.2, 0.3, -0.5])
    i, o, g = 1 / (1 + np.exp(-z[:2])), 1 / (1 + np.exp(-z[4:6])), np.tanh(z[6:])
    c = i * g  # the forget gate only scales the zero initial cell
    assert np.allclose(state.c, c, rtol=0, atol=1e-15)
    assert np.allclose(h, o * np.tanh(c), rtol=0, atol=1e-15)
    assert np.allclose(sigmoid(np.array([-40.0, 0.0, 40.0])), [0.0, 0.5, 1.0])


# ---------------------------------------------------------------- meta-A2C

@pytest.mark.parametrize("env", [CH, MB], ids=["chain", "multibranch"])
def test_initial_policy_is_near_uniform(env):
    n = 8 if env.mode == Mode.CHAIN else 14
    enc = np.zeros((env.d, encoding_width(env)))
    for seed in range(20):
        agent = MetaA2CAgent(env, seed=seed)
        _, ent = agent.act(enc, 0)
        assert len(agent.last_logits) == n
        assert abs(ent - np.log(n)) <= 0.05 * np.log(n)


def test_same_seed_same_actions():
    enc = np.zeros((CH.d, encoding_width(CH)))

    def run():
        agent = MetaA2CAgent(CH, seed=11)
        out = []
        for t in range(30):
            a, _ = agent.act(enc, t % 5)
            agent.observe(a, 0.1 * (t % 3), t % 5 == 4, enc, (t + 1) % 5)
            out.append(a)
        return out

    assert run() == run()


def test_returns_with_bootstrap_and_done_mask():
    assert discounted_returns([1.0], [False], 0.5, 0.9)[0] == pytest.approx(1.45)
    R = discounted_returns([1.0, 0.0, 2.0], [False, True, False], 10.0, 0.5)
    assert np.allclose(R, [1.0, 0.0, 2.0 + 5.0])


def test_update_cadence_follows_horizon():
    enc = np.zeros((CH.d, encoding_width(CH)))
    agent = MetaA2CAgent(CH, seed=0)
    assert agent.j == 5 and MetaA2CAgent(MB, seed=0).j == 10
    diags = []
    for t in range(12):
        a, _ = agent.act(enc, 0)
        diags.append(agent.observe(a, 0.5, False, enc, 0))
    assert [d is not None for d in diags] == [False] * 4 + [True] + [False] * 4 + [True] + [False] * 2
    assert agent.store.step == 2
    assert agent.end_trial(enc, 0) is not None and agent.store.step == 3


def test_hidden_state_survives_episode_ends():
    enc = np.zeros((CH.d, encoding_width(CH)))
    agent = MetaA2CAgent(CH, seed=0)
    a, _ = agent.act(enc, 0)
    agent.observe(a, 0.3, True, enc, 0)
    assert np.any(agent.rstate.h != 0)


def test_zero_learning_rate_leaves_policy_unchanged():
    enc = np.random.default_rng(0).integers(0, 2, size=(CH.d, encoding_width(CH))).astype(float)
    agent = MetaA2CAgent(CH, A2cConfig(alpha=0.0, j=3), seed=4)
    before = agent.store.copy()
    for t in range(9):
        a, _ = agent.act(enc, t)
        agent.observe(a, 0.7, False, enc, t + 1)
    assert agent.store.step == 3
    assert all(np.array_equal(before.params[n], agent.store.params[n]) for n in before.params)


def test_update_rejects_empty_segment():
    with pytest.raises(EmptySegment):
        MetaA2CAgent(CH, seed=0).update(np.zeros((CH.d, encoding_width(CH))), 0)


def test_zero_advantage_gives_no_policy_gradient_without_entropy():
    net = RecurrentActorCritic(4, 2, 3, np.random.default_rng(0))
    xs = list(np.random.default_rng(1).normal(size=(3, 4)))
    _, tape, dl, dv, _ = a2c_objective(net, net.initial_state(), xs, [0, 1, 0], np.zeros(3), np.zeros(3), 0.0, 0.5)
    assert all(np.all(d == 0) for d in dl)


def test_two_action_policy_gradient_matches_finite_differences():
    # a one-step bandit: the objective's gradient w.r.t. the policy bias
    net = RecurrentActorCritic(3, 2, 4, np.random.default_rng(5))
    x = np.array([0.2, -0.1, 0.4])
    args = (net.initial_state(), [x], [1], np.array([1.0]), np.array([0.7]), 0.01, 0.5)
    _, tape, dl, dv, _ = a2c_objective(net, *args)
    net.store.zero_grad()
    net.backward(tape, dl, dv)
    b = net.store.params["pi_b"]
    num = np.zeros(2)
    for k in range(2):
        b[k] += 1e-5
        lp = a2c_objective(net, *args)[0]
        b[k] -= 2e-5
        lm = a2c_objective(net, *args)[0]
        b[k] += 1e-5
        num[k] = (lp - lm) / 2e-5
    ana = net.store.grads["pi_b"]
    assert np.linalg.norm(ana - num) / (np.linalg.norm(ana) + np.linalg.norm(num)) <= 1e-4


def test_learns_a_two_armed_bandit():
    # reward 1 for action 0, 0 otherwise; the policy should come to prefer action 0
    env = EnvironmentConfig(mode=Mode.CHAIN, d=1)
    agent = MetaA2CAgent(env, A2cConfig(alpha=0.01, j=5, lstm_units=16), seed=0)
    enc = np.zeros((1, encoding_width(env)))
    for _ in range(600):
        a, _ = agent.act(enc, 0)
        agent.observe(a, 1.0 if a == 0 else 0.0, True, enc, 0)
    assert softmax(agent.last_logits)[0] > 0.5


def test_checkpoint_round_trip_and_mode_check(tmp_path):
    agent = MetaA2CAgent(CH, seed=2)
    agent.save(tmp_path / "ck")
    back, manifest = MetaA2CAgent.load(tmp_path / "ck.npz")
    assert back.store.equals(agent.store)
    assert manifest["mode"] == "chain" and manifest["n_actions"] == 8
    with pytest.raises(IncompatibleCheckpoint):
        MetaA2CAgent.load(tmp_path / "ck.npz", MB)
    with pytest.raises(IncompatibleCheckpoint):
        MetaA2CAgent.load(tmp_path / "ck.npz", EnvironmentConfig(mode=Mode.CHAIN, d=8))


# ---------------------------------------------------------------- DQN

def test_epsilon_schedule_is_linear():
    t_max = 700
    assert linear_epsilon(0, t_max) == 1.0
    assert linear_epsilon(t_max, t_max) == 0.1
    for t in range(0, t_max + 1, 7):
        assert abs(linear_epsilon(t, t_max) - (1.0 - 0.9 * t / t_max)) <= 1e-12
    assert linear_epsilon(t_max + 50, t_max) == 0.1


def test_replay_capacity_defaults_to_half_the_budget():
    assert DqnAgent(CH, t_max=700).buffer.capacity == 350
    with pytest.raises(ValueError):
        DqnAgent(CH, t_max=30)  # 15 < batch of 20


def test_replay_buffer_is_fifo_and_bounded():
    buf = ReplayBuffer(3)
    for i in range(5):
        buf.push(np.array([i]), 0, float(i), np.array([i]), False)
    assert len(buf) == 3
    assert sorted(int(s[0]) for s, *_ in buf._items) == [2, 3, 4]
    with pytest.raises(BufferUnderfull):
        buf.sample(4, np.random.default_rng(0))


def test_dqn_fully_random_at_epsilon_one():
    agent = DqnAgent(MB, t_max=1000, seed=0)
    enc = np.zeros((MB.d, encoding_width(MB)))
    counts = np.bincount([agent.act(enc, epsilon=1.0)[0] for _ in range(10000)], minlength=14)
    assert chi_square(counts) < CHI2_999[14]


def test_dqn_greedy_ties_go_to_lowest_index():
    agent = DqnAgent(CH, t_max=100, seed=0)
    agent.store.params["W2"][:] = 0.0
    agent.store.params["b2"][:] = [0, 2, 5, 5, 1, 0, 5, 0]
    enc = np.zeros((CH.d, encoding_width(CH)))
    assert agent.act(enc, epsilon=0.0)[0] == 2


def test_terminal_target_is_reward():
    y = dqn_targets([0.4, 0.4], [10.0, 10.0], [1.0, 0.0], 0.9)
    assert y[0] == 0.4 and y[1] == pytest.approx(9.4)


def test_dqn_trains_and_syncs_target():
    cfg = DqnConfig(target_sync_interval=10)
    agent = DqnAgent(CH, cfg, t_max=200, seed=0)
    rng = np.random.default_rng(0)
    enc = np.zeros((CH.d, encoding_width(CH)))
    start = agent.store.copy()
    for t in range(40):
        a, _ = agent.act(enc)
        agent.observe(a, float(rng.random()), bool(t % 4 == 3), enc)
    assert agent.store.step == 40 - cfg.batch_size + 1
    assert not agent.store.equals(start)
    # t = 40 is a sync point, so the target network was just refreshed
    assert agent.target.store.equals(agent.store)
    a, _ = agent.act(enc)
    agent.observe(a, 0.5, False, enc)
    assert not agent.target.store.equals(agent.store)
    assert agent.epsilon() == pytest.approx(1.0 - 0.9 * 41 / 200)


# ---------------------------------------------------------------- random

def test_random_agent_uniform_and_seeded():
    agent = RandomAgent(CH, seed=1)
    draws = [agent.act()[0] for _ in range(10000)]
    assert chi_square(np.bincount(draws, minlength=8)) < CHI2_999[8]
    again = RandomAgent(CH, seed=1)
    assert [again.act()[0] for _ in range(50)] == draws[:50]
    mb = RandomAgent(MB, seed=3)
    assert set(mb.act()[0] for _ in range(2000)) == set(range(14))
    rng_a, rng_b = np.random.default_rng(9), np.random.default_rng(9)
    assert [random_act(rng_a, Mode.MULTI_BRANCH) for _ in range(20)] == \
        [random_act(rng_b, Mode.MULTI_BRANCH) for _ in range(20)]
