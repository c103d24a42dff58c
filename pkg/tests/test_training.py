import numpy as np
import pytest

from dollyshot.simenv import EnvConfig
from dollyshot.td3 import AgentConfig, TD3Hyper
from dollyshot.training import independent_pair_train, load_agent, save_agent, train

TINY = TD3Hyper(hidden=(16, 16), episode_len=30, episodes=3, batch_size=16, buffer_capacity=1000,
                warmup_steps=20, eval_every=2, eval_episodes=1, checkpoint_every=2)
CFG = EnvConfig()


def test_train_log_and_checkpoints_are_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    train(CFG, AgentConfig.of("combined"), TINY, 5, out_dir=a)
    train(CFG, AgentConfig.of("combined"), TINY, 5, out_dir=b)
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert "train_log.csv" in {str(f) for f in files}
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_log_columns_and_rows():
    res = train(CFG, AgentConfig.of("throttle"), TINY, 0)
    assert [r["episode"] for r in res.log] == [1, 2, 3]
    row = res.log[-1]
    for k in ("cumulative_reward", "mean_area", "mean_centroid_x", "mean_centroid_y", "critic1_loss",
              "actor_loss", "learn_iterations", "eval_reward"):
        assert k in row
    assert res.log[0]["eval_reward"] == "" and res.log[1]["eval_reward"] != ""


def test_no_learning_below_batch_size():
    h = TD3Hyper(hidden=(8,), episode_len=10, episodes=2, batch_size=64, buffer_capacity=100, eval_every=0)
    res = train(CFG, AgentConfig.of("combined"), h, 0)
    assert res.agents["combined"].learn_iterations == 0
    assert np.isnan(res.log[-1]["critic1_loss"])


def test_learning_starts_once_buffer_holds_a_batch():
    h = TD3Hyper(hidden=(8,), episode_len=10, episodes=2, batch_size=15, buffer_capacity=100, eval_every=0)
    res = train(CFG, AgentConfig.of("combined"), h, 0)
    # 20 transitions; learning on every step from the 15th
    assert res.agents["combined"].learn_iterations == 6


def test_independent_pair_merges_channels():
    res = independent_pair_train(CFG, TINY, 1)
    assert set(res.agents) == {"throttle", "steering"}
    thr, ste = res.agents["throttle"], res.agents["steering"]
    full = np.zeros(4)
    thr.cfg.expand(np.array([0.3]), into=full)
    ste.cfg.expand(np.array([-0.6]), into=full)
    assert np.array_equal(full, [0.3, -0.6, 0.0, 0.0])
    assert "reward_throttle" in res.log[0] and "critic1_loss_steering" in res.log[0]


def test_disabled_agent_does_not_learn():
    res = independent_pair_train(CFG, TINY, 1, disabled=("steering",))
    assert res.agents["steering"].learn_iterations == 0
    assert res.agents["throttle"].learn_iterations > 0


def test_pair_training_is_reproducible(tmp_path):
    r1 = independent_pair_train(CFG, TINY, 4, out_dir=tmp_path / "x")
    r2 = independent_pair_train(CFG, TINY, 4, out_dir=tmp_path / "y")
    assert (tmp_path / "x" / "train_log.csv").read_bytes() == (tmp_path / "y" / "train_log.csv").read_bytes()
    assert (tmp_path / "x" / "steering_final.json").exists()


def test_checkpoint_round_trip_keeps_behaviour(tmp_path):
    res = train(CFG, AgentConfig.of("combined"), TINY, 2)
    agent = res.agents["combined"]
    save_agent(tmp_path / "c.json", agent, None, CFG, res_wts())
    back = load_agent(tmp_path / "c.json")
    s = np.array([0.02, -0.8, 0.3, -0.4])
    assert np.array_equal(back.select_action(s), agent.select_action(s))
    assert np.array_equal(back.select_action(s, explore=True), agent.select_action(s, explore=True))
    assert back.learn_iterations == agent.learn_iterations


def res_wts():
    from dollyshot.rewards import RewardWeights
    return RewardWeights.for_env(CFG, "combined")


def test_best_snapshot_tracks_best_eval(tmp_path):
    res = train(CFG, AgentConfig.of("combined"), TINY, 3, out_dir=tmp_path)
    assert res.best_eval == max(s for _, s in res.evals)
    assert (tmp_path / "combined_best.json").exists()


def test_early_stopping_halts():
    h = TD3Hyper(hidden=(8,), episode_len=10, episodes=50, batch_size=8, buffer_capacity=1000, warmup_steps=5,
                 eval_every=1, eval_episodes=1, early_stop_patience=2, early_stop_epsilon=1e9, early_stop_window=1)
    res = train(CFG, AgentConfig.of("throttle"), h, 0)
    assert res.stopped_early and len(res.log) == 3
