import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dollyshot.imaging import (BinaryMask, CameraIntrinsics, DeltaParams, SubjectNotVisible, area_percentage,
                               camera_offset_angle, compute_moments, delta_metric, project_subject, render_mask,
                               shot_metrics, subject_offset_angle)

from conftest import axis_world, brute_moments, random_masks


def mask_from(rows):
    return BinaryMask(np.array(rows, dtype=bool))


# -- moments --------------------------------------------------------------------

def test_single_pixel_moments():
    bits = np.zeros((3, 3), dtype=bool)
    bits[2, 1] = True
    m = compute_moments(BinaryMask(bits))
    assert (m.m00, m.m10, m.m01) == (1, 1, 2)
    assert (m.centroid_x, m.centroid_y) == (1.0, 2.0)


def test_full_2x2_centroid():
    m = compute_moments(mask_from([[1, 1], [1, 1]]))
    assert m.m00 == 4
    assert (m.centroid_x, m.centroid_y) == (0.5, 0.5)


def test_moments_match_double_loop():
    rng = np.random.default_rng(7)
    for bits in random_masks(100, rng):
        m = compute_moments(BinaryMask(bits))
        assert (m.m00, m.m10, m.m01) == brute_moments(bits)


def test_empty_mask_has_no_centroid():
    m = compute_moments(BinaryMask.empty(5, 4))
    assert m.m00 == 0 and not m.visible
    assert m.centroid_x is None and m.centroid_y is None


def test_mask_text_round_trip():
    bits = np.random.default_rng(1).random((7, 11)) < 0.4
    buf = io.StringIO()
    BinaryMask(bits).dump(buf)
    buf.seek(0)
    assert np.array_equal(BinaryMask.load(buf).bits, bits)


# -- area -----------------------------------------------------------------------

def test_area_full_and_empty():
    full = BinaryMask(np.ones((6, 8), dtype=bool))
    assert area_percentage(compute_moments(full), full) == 1.0
    empty = BinaryMask.empty(8, 6)
    assert area_percentage(compute_moments(empty), empty) == 0.0


def test_area_twelve_pixels_of_120():
    bits = np.zeros((12, 10), dtype=bool)
    bits.flat[:12] = True
    mask = BinaryMask(bits)
    assert area_percentage(compute_moments(mask), mask) == pytest.approx(0.1, abs=1e-15)


# -- angles ---------------------------------------------------------------------

def test_camera_offset_examples():
    cam = CameraIntrinsics(640, 480, 1.0)
    assert camera_offset_angle(320.0, cam) == 0.0
    assert camera_offset_angle(640.0, cam) == pytest.approx(0.5)
    assert camera_offset_angle(480.0, cam) == pytest.approx(0.25)


def test_camera_offset_needs_centroid():
    with pytest.raises(SubjectNotVisible):
        camera_offset_angle(None, CameraIntrinsics())


def test_subject_offset_examples():
    assert subject_offset_angle(0.0, 0.0) == 0.0
    assert subject_offset_angle(0.1, -0.1) == 0.0
    assert subject_offset_angle(0.25, 0.30) == pytest.approx(0.55)


# -- delta metric ---------------------------------------------------------------

def test_delta_examples():
    p = DeltaParams(10, 50)
    assert delta_metric(10, p) == 0.0
    assert delta_metric(0, p) == 1.0
    assert delta_metric(30, p) == pytest.approx(-0.5)
    assert delta_metric(50, p) == -1.0


def test_delta_rejects_out_of_range():
    with pytest.raises(ValueError):
        delta_metric(51, DeltaParams(10, 50))
    with pytest.raises(ValueError):
        DeltaParams(10, 10)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(0, 1))
def test_delta_is_monotone_decreasing(pe, extra, frac):
    p = DeltaParams(pe, pe + extra)
    a = frac * p.maximum
    b = min(a + 0.01 * p.maximum, p.maximum)
    assert delta_metric(b, p) <= delta_metric(a, p) + 1e-12


# -- rendering ------------------------------------------------------------------

def test_on_axis_disk_oracle():
    cam = CameraIntrinsics(9, 9, 1.0)
    # distance where the projected radius is exactly 2 px
    dist = cam.focal_px * 0.1 / 2.0
    mask = render_mask(axis_world(dist), cam)
    u, v, r = project_subject(axis_world(dist), cam)
    assert (u, v) == (4.0, 4.0)
    assert r == pytest.approx(2.0, rel=1e-12)
    expected = np.array([[(x - 4) ** 2 + (y - 4) ** 2 <= r * r for x in range(9)] for y in range(9)])
    assert np.array_equal(mask.bits, expected)
    m = compute_moments(mask)
    assert (m.centroid_x, m.centroid_y) == (4.0, 4.0)


def test_subject_behind_camera_is_empty():
    mask = render_mask(axis_world(-1.0), CameraIntrinsics())
    assert compute_moments(mask).m00 == 0


def test_halving_distance_doubles_radius():
    cam = CameraIntrinsics()
    r1 = project_subject(axis_world(2.0), cam)[2]
    r2 = project_subject(axis_world(1.0), cam)[2]
    assert r2 == pytest.approx(2 * r1, rel=1e-12)


def test_subject_to_the_right_appears_right():
    cam = CameraIntrinsics()
    m = shot_metrics(render_mask(axis_world(1.5, subject_y=0.2), cam), cam, 0.0)
    assert m.centroid_x > cam.midpoint_px
    assert m.camera_offset > 0


def test_shot_metrics_lost_subject():
    cam = CameraIntrinsics()
    m = shot_metrics(BinaryMask.empty(cam.width_px, cam.height_px), cam, 0.3)
    assert m.area_frac == 0.0 and not m.subject_visible
    assert m.centroid_x is None and m.subject_offset is None
