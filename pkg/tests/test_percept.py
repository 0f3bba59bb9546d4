import math

import numpy as np
import pytest

from modules.core import seeded_rng
from modules.percept import (
    PerceptError,
    force_from_field,
    object_moments,
    slip_estimate,
    torque_from_field,
)
from modules.sim import SceneObject, render_frame
from modules.tracking import DisplacementField


def _naive_moments(mask):
    n, sx, sy, sxx, syy, sxy = 0, 0, 0, 0, 0, 0
    for y in range(mask.shape[0]):
        for x in range(mask.shape[1]):
            if mask[y, x]:
                n += 1
                sx += x
                sy += y
                sxx += x * x
                syy += y * y
                sxy += x * y
    return n, sx, sy, sxx, syy, sxy


def test_force_is_the_mean_of_fresh_markers():
    field = DisplacementField.from_arrays([1.0, 2.0, 3.0], [0.0, -1.0, -2.0], [1.1, 1.1, 1.1])
    force = force_from_field(field, z_gain=10.0)
    assert force.f == pytest.approx((2.0, -1.0, 1.0))
    assert force.norm == pytest.approx(math.sqrt(6.0))


def test_stale_markers_are_ignored():
    field = DisplacementField.from_arrays([1.0, 100.0], [0.0, 0.0])
    field = DisplacementField(field.marker_ids, field.dx, field.dy, field.ratio, np.array([False, True]))
    assert force_from_field(field).f[0] == 1.0


def test_force_needs_a_tracked_marker():
    field = DisplacementField.from_arrays([1.0], [1.0])
    field = DisplacementField(field.marker_ids, field.dx, field.dy, field.ratio, np.array([True]))
    with pytest.raises(PerceptError):
        force_from_field(field)


def test_torque_of_a_pure_translation_is_zero(geometry):
    n = geometry.n_markers
    field = DisplacementField.from_arrays(np.full(n, 3.0), np.full(n, -1.5))
    assert abs(torque_from_field(field, geometry).tau_z) < 1e-9


def test_torque_of_a_rotation_has_its_sign(geometry):
    arms = geometry.lever_arms
    field = DisplacementField.from_arrays(-0.01 * arms[:, 1], 0.01 * arms[:, 0])
    assert torque_from_field(field, geometry).tau_z > 0


def test_torque_needs_three_markers(geometry):
    with pytest.raises(PerceptError):
        torque_from_field(DisplacementField.from_arrays([1.0, 2.0], [0.0, 0.0]), geometry)


def test_moments_match_pixel_sums():
    rng = seeded_rng(9)
    for _ in range(50):
        mask = rng.random((24, 32)) < rng.uniform(0.05, 0.6)
        n, sx, sy, sxx, syy, sxy = _naive_moments(mask)
        percept = object_moments(mask)
        assert percept.present and percept.area == n
        assert percept.centroid == (sx / n, sy / n)
        cx, cy = sx / n, sy / n
        mu20, mu02, mu11 = sxx / n - cx * cx, syy / n - cy * cy, sxy / n - cx * cy
        if not percept.degenerate_orientation:
            assert percept.orientation == pytest.approx(0.5 * math.atan2(2 * mu11, mu20 - mu02), abs=1e-9)


def test_empty_mask_has_no_object():
    assert not object_moments(np.zeros((10, 10), dtype=bool)).present


def test_symmetric_blob_has_degenerate_orientation():
    mask = np.zeros((20, 20), dtype=bool)
    mask[5:15, 5:15] = True
    percept = object_moments(mask)
    assert percept.degenerate_orientation and percept.orientation == 0.0
    assert percept.centroid == (9.5, 9.5)


def test_orientation_follows_the_long_axis(geometry):
    obj = SceneObject("rect", width=120.0, height=20.0, pose=(160.0, 120.0, math.radians(30)))
    percept = object_moments(obj.silhouette(geometry))
    assert percept.orientation == pytest.approx(math.radians(30), abs=0.02)


def test_slip_recovers_a_known_shift(geometry):
    obj = SceneObject("rect", width=120.0, height=80.0, pose=(160.0, 120.0, 0.0), texture_seed=3)
    before = render_frame(geometry, [], obj)
    after = render_frame(geometry, [], obj.at(162.0, 120.0))
    slip = slip_estimate(before.image, after.image, before.mask & after.mask)
    assert slip.flow_magnitude == pytest.approx(2.0, abs=0.25)
    assert slip.active and slip.blocks > 0


def test_no_motion_no_slip(geometry):
    obj = SceneObject("rect", width=120.0, height=80.0, pose=(160.0, 120.0, 0.0), texture_seed=3)
    frame = render_frame(geometry, [], obj)
    slip = slip_estimate(frame.image, frame.image, frame.mask)
    assert slip.flow_magnitude == 0.0 and not slip.active


def test_slip_without_object_region(geometry):
    frame = render_frame(geometry, [])
    assert not slip_estimate(frame.image, frame.image, frame.mask).active


def test_slip_rejects_mismatched_frames():
    with pytest.raises(PerceptError):
        slip_estimate(np.zeros((10, 10)), np.zeros((10, 12)), np.zeros((10, 10), dtype=bool))
