import io
import math

import numpy as np
import pytest
from scipy.stats import norm, truncnorm

from dollyshot.neural import forward
from dollyshot.td3 import (AgentConfig, Batch, NonFiniteTargetError, ReplayBuffer, ScheduleError, TD3Agent,
                           TD3Hyper)

SMALL = TD3Hyper(hidden=(8, 8), batch_size=4, buffer_capacity=100, warmup_steps=0)


def agent(kind="combined", **kw):
    return TD3Agent(AgentConfig.of(kind), TD3Hyper(**{**SMALL.__dict__, **kw}), seed=0)


def random_batch(cfg, n, rng, done=0.0):
    return Batch(rng.uniform(-1, 1, (n, cfg.state_dim)), rng.uniform(-1, 1, (n, cfg.action_dim)),
                 rng.normal(size=n), rng.uniform(-1, 1, (n, cfg.state_dim)), np.full(n, done))


def constant_net(net, value):
    net.flat[:] = 0.0
    net.layers[-1][1][:] = value
    net.version += 1


# -- agent layouts --------------------------------------------------------------

def test_agent_layouts():
    assert AgentConfig.of("throttle").active_mask == (True, False, False, False)
    assert AgentConfig.of("steering").active_mask == (False, True, False, False)
    assert AgentConfig.of("combined").active_mask == (True, True, False, False)
    assert AgentConfig.of("complex").state_dim == 9
    full = AgentConfig.of("steering").expand(np.array([0.4]))
    assert np.array_equal(full, [0.0, 0.4, 0.0, 0.0])
    with pytest.raises(ValueError):
        AgentConfig.of("pan")


# -- acting ---------------------------------------------------------------------

def test_deterministic_action_repeats():
    a = agent()
    s = np.array([0.05, -0.3, 0.4, 0.1])
    assert np.array_equal(a.select_action(s), a.select_action(s))


def test_exploration_stays_in_range():
    a = agent(exploration_noise_std=2.0)
    a.actor.flat *= 50
    rng = np.random.default_rng(0)
    states = rng.uniform(-1, 1, (1000, 4))
    for i in range(100_000):
        act = a.select_action(states[i % 1000], explore=True)
        assert -1.0 <= act.min() and act.max() <= 1.0


def test_zero_actor_gives_zero_action():
    a = agent()
    a.actor.flat[:] = 0.0
    assert np.array_equal(a.select_action(np.ones(4)), np.zeros(2))


def test_warmup_uses_uniform_actions():
    a = agent(warmup_steps=3)
    a.actor.flat[:] = 0.0
    s = np.zeros(4)
    warm = [a.select_action(s, explore=True) for _ in range(3)]
    assert all(np.any(w != 0) for w in warm)
    assert a.steps_taken == 3
    # after warmup the zero actor plus small noise stays near zero
    assert np.all(np.abs(a.select_action(s, explore=True)) < 1.0)


def test_target_action_without_noise_is_target_actor():
    a = agent(target_noise_std=0.0)
    s2 = np.random.default_rng(1).uniform(-1, 1, (16, 4))
    assert np.array_equal(a.target_action(s2), forward(a.actor_target, s2)[0])


def test_target_action_saturated_actor():
    a = agent()
    constant_net(a.actor_target, 50.0)  # tanh saturates to exactly 1
    act, noise = a.target_action(np.zeros((10_000, 4)), return_noise=True)
    assert np.all(act <= 1.0)
    assert np.all(np.abs(noise) <= a.hyper.target_noise_clip)


def _noise_sample(n=100_000):
    a = agent()
    constant_net(a.actor_target, 0.0)
    act, noise = a.target_action(np.zeros((n, 4)), return_noise=True)
    return a.hyper, noise.ravel()


def test_target_noise_std_matches_clipped_normal():
    h, noise = _noise_sample()
    k = h.target_noise_clip / h.target_noise_std
    phi, Phi = norm.pdf(k), norm.cdf(k)
    # closed-form std of a normal clipped (not truncated) to [-c, c]
    oracle = h.target_noise_std * math.sqrt((2 * Phi - 1) - 2 * k * phi + 2 * k * k * (1 - Phi))
    assert abs(noise.std() - oracle) / oracle < 0.02
    assert np.abs(noise).max() <= h.target_noise_clip


@pytest.mark.xfail(strict=True, reason="target noise is clipped, which carries point masses at +-c; "
                                       "a truncated normal is 3.5% narrower")
def test_target_noise_std_matches_truncated_normal():
    h, noise = _noise_sample()
    k = h.target_noise_clip / h.target_noise_std
    oracle = truncnorm(-k, k, scale=h.target_noise_std).std()
    assert abs(noise.std() - oracle) / oracle < 0.02


# -- critic ---------------------------------------------------------------------

def test_terminal_targets_equal_rewards():
    a = agent()
    b = random_batch(a.cfg, 64, np.random.default_rng(2), done=1.0)
    assert np.array_equal(a.critic_targets(b), b.rewards)


def test_twin_tie_uses_shared_value():
    a = agent(target_noise_std=0.0)
    a.critic2_target.assign(a.critic1_target)
    b = random_batch(a.cfg, 8, np.random.default_rng(3))
    sa2 = np.concatenate([b.next_states, a.target_action(b.next_states)], axis=1)
    q = forward(a.critic1_target, sa2)[0][:, 0]
    assert np.array_equal(a.critic_targets(b), b.rewards + a.hyper.gamma * q)


def test_hand_built_targets():
    a = agent(gamma=0.9)
    constant_net(a.critic1_target, 2.0)
    constant_net(a.critic2_target, -1.0)
    b = Batch(np.zeros((2, 4)), np.zeros((2, 2)), np.array([0.5, -0.25]), np.zeros((2, 4)), np.array([0.0, 1.0]))
    # y0 = 0.5 + 0.9 * min(2, -1); y1 = -0.25 (terminal)
    assert a.critic_targets(b) == pytest.approx([0.5 - 0.9, -0.25], abs=1e-15)


def test_non_finite_target_aborts():
    a = agent()
    b = random_batch(a.cfg, 4, np.random.default_rng(0))
    b.rewards[1] = np.inf
    before = a.critic1.flat.copy()
    with pytest.raises(NonFiniteTargetError):
        a.critic_update(b)
    assert np.array_equal(a.critic1.flat, before)
    assert a.learn_iterations == 0


# -- actor ----------------------------------------------------------------------

def test_constant_critic_leaves_actor_unchanged():
    a = agent()
    constant_net(a.critic1, 3.0)
    a.learn_iterations = 2
    before = a.actor.flat.copy()
    a.actor_update(random_batch(a.cfg, 16, np.random.default_rng(0)))
    assert np.array_equal(a.actor.flat, before)


def test_actor_climbs_to_critic_optimum():
    a = TD3Agent(AgentConfig.of("throttle"), TD3Hyper(hidden=(2,), lr=0.01, batch_size=8, buffer_capacity=8), 0)
    # Q1(s, a) = -|a - 0.5| built from two ReLUs, maximised at a = 0.5
    net = a.critic1
    net.flat[:] = 0.0
    (W1, b1), (W2, b2) = net.layers
    W1[2] = [1.0, -1.0]
    b1[:] = [-0.5, 0.5]
    W2[:, 0] = [-1.0, -1.0]
    net.version += 1
    rng = np.random.default_rng(0)
    states = rng.uniform(-1, 1, (8, 2))
    b = Batch(states, np.zeros((8, 1)), np.zeros(8), states, np.zeros(8))
    gap0 = np.abs(forward(a.actor, states)[0] - 0.5).mean()
    for i in range(1, 401):
        a.learn_iterations = 2 * i
        a.actor_update(b)
    gap = np.abs(forward(a.actor, states)[0] - 0.5).mean()
    assert gap < 0.05 < gap0


@pytest.mark.parametrize("n", [1, 2, 7, 20])
def test_actor_updates_every_d_iterations(n):
    a = agent()
    rng = np.random.default_rng(n)
    for _ in range(n):
        a.learn(random_batch(a.cfg, 4, rng))
    assert a.learn_iterations == n
    assert a.actor_updates == n // a.hyper.policy_delay


def test_off_schedule_actor_update_rejected():
    a = agent()
    b = random_batch(a.cfg, 4, np.random.default_rng(0))
    a.critic_update(b)
    with pytest.raises(ScheduleError):
        a.actor_update(b)
    a.critic_update(b)
    a.actor_update(b)
    with pytest.raises(ScheduleError):
        a.actor_update(b)


def test_polyak_identity_on_all_targets():
    a = agent(tau=0.005)
    rng = np.random.default_rng(0)
    for net in a.networks().values():
        net.flat[:] = rng.normal(size=net.size)
    pairs = [("actor", "actor_target"), ("critic1", "critic1_target"), ("critic2", "critic2_target")]
    nets = a.networks()
    expect = {t: (1 - 0.005) * nets[t].flat + 0.005 * nets[o].flat for o, t in pairs}
    a.update_targets()
    for _, t in pairs:
        assert np.max(np.abs(nets[t].flat - expect[t])) <= 1e-15


# -- replay buffer --------------------------------------------------------------

def test_ring_buffer_evicts_oldest_first():
    buf = ReplayBuffer(5, 1, 1, np.random.default_rng(0))
    for i in range(7):
        buf.add([i], [0.0], float(i), [i + 1], False)
    assert len(buf) == 5 and buf.cursor == 2
    assert sorted(buf._r[:5].tolist()) == [2.0, 3.0, 4.0, 5.0, 6.0]
    # slots 0 and 1 were overwritten by the two newest transitions
    assert buf._r[:2].tolist() == [5.0, 6.0]
    drawn = set()
    for _ in range(50):
        drawn |= set(buf.sample(5).rewards.tolist())
    assert drawn == {2.0, 3.0, 4.0, 5.0, 6.0}


def test_buffer_grows_past_initial_allocation():
    buf = ReplayBuffer(10_000, 2, 1, np.random.default_rng(0))
    for i in range(5000):
        buf.add([i, 0], [0.0], float(i), [0, 0], i % 2 == 0)
    assert len(buf) == 5000 and buf._r[4999] == 4999.0 and buf._d[4998] == 1.0
    assert buf.stats() == {"capacity": 10_000, "occupancy": 5000, "cursor": 5000}


def test_buffer_rejects_bad_input():
    buf = ReplayBuffer(4, 1, 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        buf.add([0], [0], float("nan"), [0], False)
    with pytest.raises(ValueError):
        buf.sample(1)


def test_hyper_validation():
    with pytest.raises(ValueError):
        TD3Hyper(gamma=1.5)
    with pytest.raises(ValueError):
        TD3Hyper(batch_size=10, buffer_capacity=5)
