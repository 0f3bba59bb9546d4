import math

import numpy as np
import pytest

from modules.core import seeded_rng
from modules.percept import NO_SLIP, ForceEstimate, ObjectPercept, SlipSignal, TorqueEstimate
from modules.sim import PlantState, step_plant
from modules.skills import (
    FAILED,
    SUCCESS,
    ForceTrackConfig,
    HandoverConfig,
    HandoverTrigger,
    HoldRegrip,
    InHandRotConfig,
    LeakyConfig,
    ObjectTrackConfig,
    Place,
    SkillError,
    arm_rot_step,
    descend_until_contact,
    follow_me,
    force_track_step,
    gentle_grasp,
    handover_trigger,
    hold_regrip,
    in_hand_rot,
    leaky_step,
    object_track_step,
    press_step,
    run_arm_rot,
    run_handover,
    vis_scan,
)


def force(x=0.0, y=0.0, z=0.0):
    return ForceEstimate((x, y, z))


def test_force_track_dead_zone_and_speed_law():
    cfg = ForceTrackConfig()
    assert cfg.alpha == pytest.approx(20.0 / 3.0)
    assert force_track_step(force(0.1, -0.2, 0.0), cfg).ee_velocity == (0.0, 0.0, 0.0)
    velocity = force_track_step(force(1.6, -5.0, 0.3), cfg).ee_velocity
    assert velocity[0] == pytest.approx(10.0)
    assert velocity[1] == pytest.approx(-20.0)
    assert velocity[2] == pytest.approx(4.0 / 3.0)


def test_force_track_without_speed_control_is_proportional():
    cfg = ForceTrackConfig(speed_ctrl=False)
    velocity = force_track_step(force(1.6, -5.0, 0.1), cfg).ee_velocity
    assert velocity[0] == pytest.approx(cfg.alpha * 1.6)
    assert velocity[1] == pytest.approx(cfg.alpha * -5.0)
    assert velocity[2] == 0.0


@pytest.mark.parametrize(
    "values",
    [
        {"f_min": 2.0, "f_max": 1.0},
        {"v_min": 5.0, "v_max": 5.0},
        {"eps": 0.0},
    ],
)
def test_bad_force_track_config(values):
    with pytest.raises(SkillError) as e:
        ForceTrackConfig(**values)
    assert e.value.reason == "bad_config"


def test_object_track_centers_and_keeps_distance():
    cfg = ObjectTrackConfig(axis="y")
    near = object_track_step(ObjectPercept(True, (170.0, 120.0), 5000), cfg)
    assert near.ee_velocity == pytest.approx((15.0, 15.0, 0.0))
    far = object_track_step(ObjectPercept(True, (170.0, 120.0), 8000), cfg)
    assert far.ee_velocity[1] == pytest.approx(-15.0)
    centered = object_track_step(ObjectPercept(True, (163.0, 120.0), 5000), cfg)
    assert centered.ee_velocity[0] == 0.0
    off = object_track_step(ObjectPercept(True, (110.0, 120.0), 5000), cfg)
    assert off.ee_velocity[0] == pytest.approx(-30.0)


def test_object_track_along_x_uses_the_row_offset():
    cfg = ObjectTrackConfig(axis="x")
    command = object_track_step(ObjectPercept(True, (160.0, 170.0), 5000), cfg)
    assert command.ee_velocity == pytest.approx((15.0, 30.0, 0.0))


def test_object_track_lost_object():
    command = object_track_step(ObjectPercept(False), ObjectTrackConfig())
    assert command.flags == ("lost_object",)
    assert command.ee_velocity == (0.0, 0.0, 0.0)


def test_bad_object_track_axis():
    with pytest.raises(SkillError):
        ObjectTrackConfig(axis="z")


def test_arm_rot_law():
    assert arm_rot_step(TorqueEstimate(10.0)).ee_rot_velocity == pytest.approx(-0.15)
    assert arm_rot_step(TorqueEstimate(-4.0)).ee_rot_velocity == pytest.approx(0.06)
    settled = arm_rot_step(TorqueEstimate(0.5))
    assert settled.ee_rot_velocity == 0.0
    assert "converged" in settled.flags


def test_leaky_integrator_converges_geometrically():
    cfg = LeakyConfig(leak_alpha=0.9)
    x = 0.0
    steps = 0
    while abs(x - 50.0) > 0.5:
        x = leaky_step(x, -50.0, cfg)
        steps += 1
    assert steps == 44


def test_leaky_integrator_clamps_to_the_gripper_range():
    cfg = LeakyConfig(leak_alpha=0.5)
    assert leaky_step(0.0, 100.0, cfg) == 0.0
    assert leaky_step(80.0, -200.0, cfg) == 80.0


@pytest.mark.parametrize("alpha", [0.0, 1.0, 1.5])
def test_bad_leak(alpha):
    with pytest.raises(SkillError):
        LeakyConfig(leak_alpha=alpha)


def test_handover_trigger_needs_slip_and_force():
    trigger = HandoverTrigger()
    cfg = HandoverConfig()
    slipping = SlipSignal(2.0, True, 10)
    assert handover_trigger(slipping, force(0.5), trigger) == cfg.open_set_point
    assert handover_trigger(NO_SLIP, force(1.2), trigger) == cfg.open_set_point
    assert handover_trigger(slipping, force(1.2), trigger) == cfg.close_set_point
    assert handover_trigger(slipping, force(1.0), trigger) == cfg.close_set_point
    assert handover_trigger(slipping, force(0.9), trigger) == cfg.open_set_point


def test_handover_trigger_never_closes_below_the_band():
    rng = seeded_rng(3)
    trigger = HandoverTrigger()
    for _ in range(1000):
        slip = SlipSignal(1.0, bool(rng.random() < 0.5), 4)
        f = force(*rng.uniform(-1.2, 1.2, size=3))
        set_point = trigger.update(slip, f)
        if trigger.closing:
            assert slip.active
            assert f.norm >= 0.95
            assert set_point == 0.0


def test_press_step():
    command, within = press_step(3.0, 5.0, 3.0, 0.25)
    assert command.ee_velocity == pytest.approx((0.0, 0.0, 6.0))
    assert not within
    command, within = press_step(5.1, 5.0, 3.0, 0.25)
    assert within
    assert command.ee_velocity[2] == pytest.approx(-0.3)


def test_hold_tightens_on_slip():
    skill = HoldRegrip()
    first = skill.update(SlipSignal(1.0, True, 4), 30.0)
    assert skill.set_point == pytest.approx(29.5)
    assert first.gripper_target == pytest.approx(0.8 * 30.0 + 0.2 * 29.5)
    skill.update(NO_SLIP, 30.0)
    assert skill.set_point == pytest.approx(29.5)


def test_bad_in_hand_mode():
    with pytest.raises(SkillError):
        InHandRotConfig(mode="shake")


# Closed loops through the simulated rig


def test_force_track_follows_a_pull(rig):
    result = follow_me(rig.stream("followme-pull-x", seeded_rng(0)))
    assert result.measurements["correlation"] > 0.7


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("scenario", ["followme-pull-x", "followme-pull-y"])
def test_force_track_follows_closer_than_object_track(rig, scenario, seed):
    forced = follow_me(rig.stream(scenario, seeded_rng(seed)), mode="force-track")
    tracked = follow_me(rig.stream(scenario, seeded_rng(seed)), mode="object-track")
    assert forced.measurements["correlation"] - tracked.measurements["correlation"] > 0.1


def test_normal_pull_reaches_force_track_but_not_object_track(rig):
    moved = follow_me(rig.stream("followme-pull-z", seeded_rng(0)), mode="force-track")
    assert moved.measurements["active_nonzero_fraction"] >= 0.9

    stream = rig.stream("followme-pull-z", seeded_rng(0))
    follow_me(stream, mode="object-track")
    assert all(r["command"]["ee_velocity"][2] == 0.0 for r in stream.records)


@pytest.mark.parametrize("seed", range(5))
def test_arm_rot_relieves_the_torque(rig, seed):
    stream = rig.stream("arm-rot", seeded_rng(seed))
    initial = abs(stream.scene.gravity_torque(stream.plant))
    result = run_arm_rot(stream, expected_rotation=math.pi / 2)
    assert result.status == SUCCESS
    assert result.frames <= 200
    assert "possible_stall" not in result.flags
    assert abs(stream.scene.gravity_torque(stream.plant)) < 0.05 * initial


def test_arm_rot_against_stiction_is_flagged(rig):
    result = run_arm_rot(rig.stream("arm-rot-stuck", seeded_rng(0)), expected_rotation=math.pi / 2)
    assert result.status == SUCCESS
    assert "possible_stall" in result.flags


def test_heavy_object_swings_upright(rig):
    result = in_hand_rot(rig.stream("in-hand-rot-heavy", seeded_rng(0)))
    assert result.status == SUCCESS
    assert "possible_stall" not in result.flags


@pytest.mark.parametrize("seed", range(5))
def test_stuck_pen_is_flagged(rig, seed):
    stream = rig.stream("in-hand-rot-pen", seeded_rng(seed))
    result = in_hand_rot(stream)
    assert result.status == SUCCESS
    assert "possible_stall" in result.flags
    assert stream.records[-1]["truth"]["angle_deg"] <= 60.0 + 0.5


def test_handover_closes_after_the_object_arrives(rig):
    result = run_handover(rig.stream("handover", seeded_rng(0), slip=True))
    assert result.status == SUCCESS
    assert result.measurements["first_close_frame"] >= 45


def test_vis_scan_measures_the_plate(rig):
    result = vis_scan(rig.stream("vis-scan", seeded_rng(0)))
    assert result.status == SUCCESS
    assert result.measurements["extent"] == pytest.approx(100.0, abs=2.0)


def test_vis_scan_without_an_object(rig):
    with pytest.raises(SkillError) as e:
        vis_scan(rig.stream("vis-scan-empty", seeded_rng(0)))
    assert e.value.reason == "nothing_to_scan"


def test_gentle_grasp(rig):
    result = gentle_grasp(rig.stream("gentle-grasp", seeded_rng(0)))
    assert result.status == SUCCESS
    assert result.measurements["grip_signal"] >= 2.0
    assert 0.0 < result.measurements["final_opening"] < 60.0


def test_gentle_grasp_on_nothing(rig):
    with pytest.raises(SkillError) as e:
        gentle_grasp(rig.stream("gentle-grasp-empty", seeded_rng(0)))
    assert e.value.reason == "no_object"


def test_hold_only_tightens(rig):
    stream = rig.stream("hold", seeded_rng(0), slip=True)
    result = hold_regrip(stream)
    assert result.status == SUCCESS
    targets = np.array([r["command"]["gripper_target"] for r in stream.records])
    assert np.all(np.diff(targets) <= 1e-12)


def test_hold_gives_up_on_a_heavy_object(rig):
    result = hold_regrip(rig.stream("hold-heavy", seeded_rng(0), slip=True))
    assert result.status == FAILED
    assert result.flags == ["cannot_hold"]


def test_descend_finds_the_ground(rig):
    result = descend_until_contact(rig.stream("descend", seeded_rng(0)))
    assert result.status == SUCCESS
    assert result.measurements["contact_height"] == pytest.approx(20.0, abs=3.0)


def test_place_carries_then_releases():
    skill = Place(50.0)
    plant = PlantState(gripper_opening=30.0, gripper_command=30.0)
    carried = []
    for _ in range(300):
        plant = step_plant(plant, skill.step(None, plant))
        if not skill.arrived:
            carried.append(plant.gripper_opening)
        if skill.done:
            break
    assert skill.done
    assert carried and set(carried) == {30.0}
    assert plant.ee_position[0] == pytest.approx(50.0, abs=0.5)
    assert plant.gripper_opening == pytest.approx(60.0, abs=1.0)
    with pytest.raises(SkillError):
        Place(50.0, speed=0.0)
