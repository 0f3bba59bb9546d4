import math

import numpy as np
import pytest

from modules.core import (
    SCHEMA_VERSION,
    FrameClock,
    GeometryError,
    MarkerObservation,
    SkillCommand,
    axis_convention,
    build_geometry,
    default_geometry,
    geometry_from_json,
    geometry_to_json,
    seeded_rng,
)
from modules.utils import Debounce, Hysteresis, angle_difference_mod_pi, clamp, signed_clamp


def test_default_geometry_has_three_rings_and_a_center(geometry):
    assert geometry.n_markers == 37
    assert geometry.image_width == 320 and geometry.image_height == 240
    assert geometry.marker_layout[0] == (160.0, 120.0)
    assert geometry.dt == pytest.approx(1 / 15)


def test_geometry_construction_is_pure():
    assert build_geometry() == build_geometry()
    assert default_geometry().marker_layout == build_geometry().marker_layout


def test_geometry_rejects_markers_near_the_border():
    with pytest.raises(GeometryError):
        build_geometry(image_width=100, image_height=100, ring_counts=(6, 12, 18), ring_spacing=30)


def test_geometry_rejects_crowded_markers():
    with pytest.raises(GeometryError):
        build_geometry(ring_counts=(40,), ring_spacing=20)


def test_geometry_rejects_bad_frame_rate():
    with pytest.raises(GeometryError):
        build_geometry(frame_rate_hz=0)


def test_nominal_center_resolves_every_id(geometry):
    for marker_id in range(geometry.n_markers):
        assert geometry.nominal_center(marker_id) == geometry.marker_layout[marker_id]
    with pytest.raises(GeometryError):
        geometry.nominal_center(geometry.n_markers)


def test_lever_arms_are_centered(geometry):
    assert np.allclose(geometry.lever_arms.mean(axis=0), 0.0)


def test_geometry_json_keeps_the_layout(geometry):
    text = geometry_to_json(geometry)
    assert f'"schema_version": {SCHEMA_VERSION}' in text
    assert geometry_from_json(text) == geometry


def test_geometry_json_rejects_other_versions(geometry):
    text = geometry_to_json(geometry).replace(f'"schema_version": {SCHEMA_VERSION}', '"schema_version": 99')
    with pytest.raises(GeometryError):
        geometry_from_json(text)


def test_marker_observation_needs_positive_size():
    assert MarkerObservation(0, 10.0, 10.0, 50.0).valid
    MarkerObservation(1, 10.0, 10.0, 0.0, valid=False)
    with pytest.raises(GeometryError):
        MarkerObservation(2, 10.0, 10.0, 0.0)


def test_frame_clock_ticks_by_one():
    clock = FrameClock()
    for _ in range(15):
        clock = clock.tick()
    assert clock.t == 15
    assert clock.seconds == pytest.approx(1.0)


def test_axis_convention():
    convention = axis_convention()
    assert "horizontal" in convention.describe("x")
    assert "fingertip" in convention.describe("z")
    vector = convention.image_to_sensor(1.5, -2.0, 1.25)
    assert convention.sensor_to_image(vector) == pytest.approx((1.5, -2.0, 1.25))
    with pytest.raises(GeometryError):
        convention.describe("w")


def test_seeded_rng_is_deterministic():
    assert seeded_rng(0).random() == seeded_rng(0).random()
    assert not np.array_equal(seeded_rng(1).random(16), seeded_rng(2).random(16))


def test_seeded_rng_uniform_mean():
    assert abs(seeded_rng(42).random(10**6).mean() - 0.5) < 0.002


def test_seeded_rng_rejects_negative_seeds():
    with pytest.raises(ValueError):
        seeded_rng(-1)


def test_skill_command_finiteness():
    assert SkillCommand(ee_velocity=(1.0, 0.0, 0.0)).is_finite()
    assert not SkillCommand(ee_rot_velocity=math.nan).is_finite()
    assert not SkillCommand(gripper_target=math.inf).is_finite()


def test_debounce():
    debounce = Debounce(3)
    assert [debounce.update(c) for c in (True, True, True, False, True)] == [False, False, True, False, False]
    with pytest.raises(ValueError):
        Debounce(0)


def test_hysteresis():
    h = Hysteresis(off_threshold=0.95, on_threshold=1.05)
    assert [h.update(v) for v in (1.0, 1.1, 1.0, 0.96, 0.9, 1.0)] == [False, True, True, True, False, False]


def test_clamps():
    assert clamp(5.0, 0.0, 3.0) == 3.0
    assert signed_clamp(-5.0, 2.0) == -2.0
    assert signed_clamp(1.0, 2.0) == 1.0


def test_angle_difference_mod_pi():
    assert angle_difference_mod_pi(0.0, math.pi) == pytest.approx(0.0)
    assert angle_difference_mod_pi(math.radians(60), math.radians(90)) == pytest.approx(math.radians(30))
