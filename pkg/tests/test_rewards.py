import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dollyshot.imaging import ShotMetrics
from dollyshot.rewards import (RewardWeights, area_scaled_discontinuity, r_area_original, r_area_scaled,
                               r_combined, r_complex, r_object_offset, r_position, smoothness_penalty, step_reward)
from dollyshot.simenv import EnvConfig

W = RewardWeights()


def shot(area, cx, theta=0.0):
    if cx is None:
        return ShotMetrics(area, None, None, None, None, None, False)
    return ShotMetrics(area, cx, 45.0, cx - 60.0, theta, theta, True)


def test_area_original_examples():
    assert r_area_original(0.10, W) == 0.0
    assert r_area_original(0.0, W) == -1.0
    assert r_area_original(0.30, W) == pytest.approx(-0.4)


def test_position_examples():
    assert r_position(60.0, W) == 0.0
    assert r_position(0.0, W) == -1.0
    assert r_position(90.0, W) == pytest.approx(-0.5)
    assert r_position(None, W) == -1.0


def test_area_scaled_examples():
    assert r_area_scaled(0.0, W) == -1.0
    assert r_area_scaled(W.k, W) == -0.5
    assert r_area_scaled(W.a_E, W) == 0.0
    assert r_area_scaled(1.5 * W.a_E, W) == pytest.approx(-0.25)


def test_area_scaled_signed_upper_switch():
    signed = RewardWeights(signed_upper=True)
    assert r_area_scaled(1.5 * W.a_E, signed) == pytest.approx(0.25)
    assert r_area_scaled(0.5 * W.a_E, signed) == r_area_scaled(0.5 * W.a_E, W)


def test_area_scaled_jump_at_threshold():
    # just above k the upper branch gives -|k - a_E|/a_E * 0.5 = -0.25 against -0.5 at k
    assert area_scaled_discontinuity(W) == pytest.approx(0.25)
    assert r_area_scaled(W.k + 1e-12, W) == pytest.approx(-0.25)


def test_combined_examples():
    assert r_combined(shot(W.a_E, 60.0), W) == 0.0
    assert r_combined(shot(0.0, None), W) == -1.0
    # components (-0.25, -0.5)
    m = shot(1.5 * W.a_E, 90.0)
    assert r_combined(m, W) == pytest.approx(0.5 * -0.25 + 0.5 * -0.5)
    assert r_combined(m, W) == pytest.approx(-0.375)


def test_object_offset_examples():
    assert r_object_offset(0.0, W) == 0.0
    assert r_object_offset(3.0, RewardWeights(theta_max=1.2)) == -1.0
    assert r_object_offset(-1.2, RewardWeights(theta_max=1.2)) == -1.0
    assert r_object_offset(0.3, RewardWeights(theta_max=1.2)) == pytest.approx(-0.25)
    assert r_object_offset(None, W) == -1.0


def test_smoothness_examples():
    a = np.array([0.3, -0.2, 0.1, 0.0])
    assert smoothness_penalty(a, a, W) == 0.0
    z = np.zeros(4)
    assert smoothness_penalty(z + W.smooth_threshold, z, W) == 0.0
    assert smoothness_penalty(z - W.smooth_threshold, z, W) == 0.0
    b = a.copy()
    b[0] += W.smooth_threshold + 0.5
    assert smoothness_penalty(b, a, W) == pytest.approx(-0.05)


def test_complex_examples():
    wts = RewardWeights(w1=0.4, w2=0.4, w3=0.2, theta_max=1.2)
    z = np.zeros(4)
    total, parts = r_complex(shot(wts.a_E, 60.0), 0.0, z, z, wts)
    assert total == 0.0 and all(v == 0.0 for v in parts.values())
    total, _ = r_complex(shot(1.5 * wts.a_E, 90.0), 0.3, z, z, wts)
    assert total == pytest.approx(0.4 * -0.25 + 0.4 * -0.5 + 0.2 * -0.25)
    assert total == pytest.approx(-0.35)
    # worst case everywhere plus a 0.05 smoothness penalty
    jerk = np.array([0.7, 0.0, 0.0, 0.0])
    total, parts = r_complex(shot(0.0, None), None, jerk, z, wts)
    assert parts["smoothness"] == pytest.approx(-0.05)
    assert total == pytest.approx(-1.05)


def test_for_env_derives_targets():
    cfg = EnvConfig()
    wts = RewardWeights.for_env(cfg, "complex")
    assert (wts.w1, wts.w2, wts.w3) == (0.4, 0.4, 0.2)
    assert wts.k == cfg.target_area / 2
    assert wts.x_E == cfg.width_px / 2
    assert wts.theta_max == cfg.fov_h / 2 + cfg.pan_limit


def test_step_reward_kinds_agree_with_components():
    m = shot(0.2, 30.0, theta=0.4)
    prev, curr = np.zeros(4), np.array([0.5, -0.5, 0.0, 0.0])
    t, p = step_reward("combined", m, curr, prev, W)
    assert t == pytest.approx(W.w1 * p["area_scaled"] + W.w2 * p["position"])
    assert step_reward("area_original", m, curr, prev, W)[0] == p["area_original"]
    assert step_reward("position", m, curr, prev, W)[0] == p["position"]
    with pytest.raises(ValueError):
        step_reward("nope", m, curr, prev, W)


def test_weights_validation():
    with pytest.raises(ValueError):
        RewardWeights(k=0.2)
    with pytest.raises(ValueError):
        RewardWeights(w1=-0.1)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 0.6), st.floats(0, 120), st.floats(-4, 4))
def test_components_never_positive(area, cx, theta):
    assert r_area_original(area, W) <= 0
    assert r_area_scaled(area, W) <= 0
    assert r_position(cx, W) <= 0
    assert r_object_offset(theta, W) <= 0
