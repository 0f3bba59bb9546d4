"""
Tactile skills.

The per-frame laws (force_track_step, object_track_step, arm_rot_step, leaky_step, press_step) are pure functions.
Episodic skills are small state machines with a step(bundle, plant) -> SkillCommand method; run_episode drives one
of them over a SimStream until it finishes or runs out of frames.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from modules.core import SkillCommand
from modules.learn import KrrModel, feature_vector, krr_predict
from modules.percept import ForceEstimate, ObjectPercept, SlipSignal, TorqueEstimate
from modules.pipeline import PerceptBundle, SimStream
from modules.scenarios import AXES
from modules.sim import PlantState
from modules.utils import Debounce, Hysteresis, angle_difference_mod_pi, clamp, signed_clamp

SUCCESS = "success"
STALL = "stall"
FAILED = "failed"
TIMEOUT = "timeout"

log = logging.getLogger()


class SkillError(Exception):
    """Skill aborted the episode; `reason` is machine readable (nothing_to_scan, no_object, ...)."""

    def __init__(self, reason: str, message: Optional[str] = None):
        super().__init__(message or reason)
        self.reason = reason


@dataclass(frozen=True)
class ForceTrackConfig:
    f_min: float = 0.1
    f_max: float = 3.1
    v_min: float = 0.0
    v_max: float = 20.0
    eps: float = 0.2
    speed_ctrl: bool = True

    def __post_init__(self):
        if not self.f_max > self.f_min >= 0:
            raise SkillError("bad_config", f"Need f_max > f_min >= 0, got f_min={self.f_min} f_max={self.f_max}")
        if not self.v_max > self.v_min >= 0:
            raise SkillError("bad_config", f"Need v_max > v_min >= 0, got v_min={self.v_min} v_max={self.v_max}")
        if self.eps <= 0:
            raise SkillError("bad_config", f"Dead zone must be positive, got {self.eps}")

    @property
    def alpha(self) -> float:
        return (self.v_max - self.v_min) / (self.f_max - self.f_min)


@dataclass(frozen=True)
class ObjectTrackConfig:
    """
    Object tracking gains. delta, x_max and y_max are mm per frame; the centroid dead zones are pixels and area_eps
    is the silhouette area (px^2) separating "too close" from "too far". `axis` is the tracking direction.
    """

    delta: float = 1.0
    x_max: float = 2.0
    y_max: float = 2.0
    xbar_eps: float = 4.0
    ybar_eps: float = 4.0
    area_eps: float = 6984.0
    mm_per_px: float = 0.1
    axis: str = "y"
    image_center: Tuple[float, float] = (160.0, 120.0)
    dt: float = 1.0 / 15.0

    def __post_init__(self):
        if min(self.delta, self.x_max, self.y_max, self.xbar_eps, self.ybar_eps, self.area_eps, self.dt) <= 0:
            raise SkillError("bad_config", "Object tracking parameters must be positive")
        if self.axis not in ("x", "y"):
            raise SkillError("bad_config", f"Object tracking runs along x or y, got '{self.axis}'")


@dataclass(frozen=True)
class LeakyConfig:
    leak_alpha: float = 0.9
    low: float = 0.0
    high: float = 80.0

    def __post_init__(self):
        if not 0.0 < self.leak_alpha < 1.0:
            raise SkillError("bad_config", f"Leak must lie in (0, 1), got {self.leak_alpha}")


@dataclass(frozen=True)
class ArmRotConfig:
    k_tau: float = 0.015
    eps_tau: float = 1.0
    settle_frames: int = 3
    max_frames: int = 200
    stall_tolerance_deg: float = 10.0


@dataclass(frozen=True)
class HandoverConfig:
    force_threshold: float = 1.0
    band: float = 0.05
    close_set_point: float = 0.0
    open_set_point: float = -60.0
    leak_alpha: float = 0.8
    latch_frames: int = 3


@dataclass(frozen=True)
class InHandRotConfig:
    mode: str = "torque"
    eps_tau: float = 5.0
    leak_alpha: float = 0.98
    open_set_point: float = -20.0
    regrip_opening: float = 10.0
    stop_frames: int = 5
    max_frames: int = 300
    expected_orientation: float = math.pi / 2
    stall_tolerance_deg: float = 10.0

    def __post_init__(self):
        if self.mode not in ("torque", "slip"):
            raise SkillError("bad_config", f"In-hand rotation mode must be torque or slip, got '{self.mode}'")


@dataclass(frozen=True)
class VisScanConfig:
    axis: str = "x"
    area_floor: float = 32000.0
    speed: float = 15.0
    limit: float = 150.0
    below_frames: int = 3


@dataclass(frozen=True)
class GentleGraspConfig:
    target: float = 2.0
    contact_threshold: float = 0.2
    approach_alpha: float = 0.99
    fine_alpha: float = 0.998
    set_point: float = 5.0
    max_frames: int = 400


@dataclass(frozen=True)
class HoldConfig:
    increment: float = 0.5
    leak_alpha: float = 0.8
    cannot_hold_frames: int = 5


@dataclass(frozen=True)
class DescendConfig:
    speed: float = 10.0
    threshold: float = 1.0
    frames: int = 3
    max_frames: int = 200


@dataclass(frozen=True)
class PressConfig:
    target: float = 5.0
    gain: float = 3.0
    tolerance: float = 0.25
    settle_frames: int = 3
    max_frames: int = 150


@dataclass(frozen=True)
class SkillSettings:
    force_track: ForceTrackConfig = ForceTrackConfig()
    object_track: ObjectTrackConfig = ObjectTrackConfig()
    arm_rot: ArmRotConfig = ArmRotConfig()
    handover: HandoverConfig = HandoverConfig()
    in_hand_rot: InHandRotConfig = InHandRotConfig()
    vis_scan: VisScanConfig = VisScanConfig()
    gentle_grasp: GentleGraspConfig = GentleGraspConfig()
    hold: HoldConfig = HoldConfig()
    descend: DescendConfig = DescendConfig()
    press: PressConfig = PressConfig()


@dataclass
class EpisodeResult:
    skill: str
    status: str
    frames: int
    flags: List[str] = field(default_factory=list)
    measurements: Dict[str, object] = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.status == SUCCESS

    def to_dict(self) -> Dict[str, object]:
        return {
            "skill": self.skill,
            "status": self.status,
            "frames": self.frames,
            "flags": list(self.flags),
            "measurements": dict(self.measurements),
        }


def force_track_step(force: ForceEstimate, cfg: ForceTrackConfig) -> SkillCommand:
    """
    Move the end effector along the average force.

    Per axis: zero inside the dead zone |f| <= eps; otherwise sign(f) * clamp(alpha * (|f| - f_min), v_min, v_max)
    with speed control, or alpha * f without it.

    :param force: force estimate
    :param cfg: gains
    :return: velocity command (mm/s)
    """
    velocity = []
    for f in force.f:
        if abs(f) <= cfg.eps:
            velocity.append(0.0)
        elif cfg.speed_ctrl:
            velocity.append(math.copysign(clamp(cfg.alpha * (abs(f) - cfg.f_min), cfg.v_min, cfg.v_max), f))
        else:
            velocity.append(cfg.alpha * f)
    return SkillCommand(ee_velocity=(velocity[0], velocity[1], velocity[2]))


def object_track_step(percept: ObjectPercept, cfg: ObjectTrackConfig) -> SkillCommand:
    """
    Keep the object centered and at a fixed apparent size.

    Across the tracking axis the end effector follows the centroid offset (mapped to mm, clamped to x_max/y_max
    keeping its sign) once it leaves the dead zone. Along the tracking axis it advances by delta while the area is
    at most area_eps and retreats by delta otherwise. There is no z term.

    :param percept: object percept
    :param cfg: gains
    :return: velocity command (mm/s), zero with the lost_object flag when the object is not in view
    """
    if not percept.present:
        return SkillCommand(flags=("lost_object",))
    along = cfg.delta * (1.0 if percept.area <= cfg.area_eps else -1.0)
    if cfg.axis == "y":
        offset = percept.centroid[0] - cfg.image_center[0]
        across = signed_clamp(offset * cfg.mm_per_px, cfg.x_max) if abs(offset) > cfg.xbar_eps else 0.0
        dx, dy = across, along
    else:
        offset = percept.centroid[1] - cfg.image_center[1]
        across = signed_clamp(offset * cfg.mm_per_px, cfg.y_max) if abs(offset) > cfg.ybar_eps else 0.0
        dx, dy = along, across
    return SkillCommand(ee_velocity=(dx / cfg.dt, dy / cfg.dt, 0.0))


def arm_rot_step(torque: TorqueEstimate, k_tau: float = 0.015, eps_tau: float = 1.0) -> SkillCommand:
    """
    Rotate the arm against the measured torque; zero (and converged) inside the dead zone.
    """
    if abs(torque.tau_z) <= eps_tau:
        return SkillCommand(flags=("converged",))
    return SkillCommand(ee_rot_velocity=-k_tau * torque.tau_z)


def leaky_step(x_prev: float, set_point: float, cfg: LeakyConfig) -> float:
    """
    Leaky integrator x_t = alpha * x_(t-1) - (1 - alpha) * L, clamped to the gripper range.

    The fixed point is -L, approached geometrically with ratio alpha.

    :param x_prev: previous gripper command, mm
    :param set_point: external signal L
    :param cfg: leak and gripper range
    :return: next gripper command, mm
    """
    a = cfg.leak_alpha
    return clamp(a * x_prev - (1.0 - a) * set_point, cfg.low, cfg.high)


class HandoverTrigger:
    """
    Close the gripper when the object slips while it is pushed in.

    The force condition uses a hysteresis band of +-band around the threshold on the force-vector norm.
    """

    def __init__(self, cfg: HandoverConfig = HandoverConfig()):
        self.cfg = cfg
        threshold = cfg.force_threshold
        self.force = Hysteresis(off_threshold=(1.0 - cfg.band) * threshold, on_threshold=(1.0 + cfg.band) * threshold)
        self.closing = False

    def update(self, slip: SlipSignal, force: ForceEstimate) -> float:
        """
        :return: the gripper set point L for this frame
        """
        force_on = self.force.update(force.norm)
        self.closing = slip.active and force_on
        return self.cfg.close_set_point if self.closing else self.cfg.open_set_point


def handover_trigger(slip: SlipSignal, force: ForceEstimate, trigger: HandoverTrigger) -> float:
    return trigger.update(slip, force)


def press_step(predicted: float, target: float, gain: float, tolerance: float) -> Tuple[SkillCommand, bool]:
    """
    Push along z in proportion to the force error.

    :return: (command, within tolerance)
    """
    error = target - predicted
    return SkillCommand(ee_velocity=(0.0, 0.0, gain * error)), abs(error) <= tolerance


class Skill:
    """Episodic skill base: step() once per frame until done, then finish()."""

    name = "skill"

    def __init__(self):
        self.done = False

    def step(self, bundle: PerceptBundle, plant: PlantState) -> SkillCommand:
        raise NotImplementedError

    def state(self) -> Dict[str, object]:
        return {}

    def finish(self, frames: int, plant: PlantState) -> EpisodeResult:
        raise NotImplementedError


def run_episode(stream: SimStream, skill: Skill, max_frames: Optional[int] = None) -> EpisodeResult:
    """
    Drive a skill over the stream.

    :param stream: calibrated SimStream
    :param skill: skill to run
    :param max_frames: frame budget, the scene length by default
    :return: the skill's episode result
    :raise SkillError: if the skill aborts
    """
    limit = stream.scene.n_frames if max_frames is None else max_frames
    frames = 0
    while not skill.done and frames < limit:
        bundle = stream.observe()
        command = skill.step(bundle, stream.plant)
        stream.apply(command, skill.state())
        frames += 1
    result = skill.finish(frames, stream.plant)
    log.info(f"{skill.name} on {stream.scene.name}: {result.status} after {frames} frames {result.flags}")
    return result


class FollowMe(Skill):
    """ForceTrack or ObjectTrack for the whole scene; succeeds once the end effector followed 10 mm."""

    def __init__(
        self,
        axis: str,
        sign: float = 1.0,
        mode: str = "force-track",
        force_cfg: ForceTrackConfig = ForceTrackConfig(),
        object_cfg: ObjectTrackConfig = ObjectTrackConfig(),
        success_offset: float = 10.0,
    ):
        super().__init__()
        if mode not in ("force-track", "object-track"):
            raise SkillError("bad_config", f"Unknown follow mode '{mode}'")
        self.name = mode
        self.axis = axis
        self.index = AXES[axis]
        self.sign = 1.0 if sign >= 0 else -1.0
        self.mode = mode
        self.force_cfg = force_cfg
        self.object_cfg = object_cfg
        self.success_offset = success_offset
        self.peak = 0.0

    def step(self, bundle: PerceptBundle, plant: PlantState) -> SkillCommand:
        self.peak = max(self.peak, self.sign * plant.ee_position[self.index])
        if self.mode == "force-track":
            return force_track_step(bundle.force, self.force_cfg)
        return object_track_step(bundle.object, self.object_cfg)

    def finish(self, frames: int, plant: PlantState) -> EpisodeResult:
        self.peak = max(self.peak, self.sign * plant.ee_position[self.index])
        status = SUCCESS if self.peak >= self.success_offset else STALL
        return EpisodeResult(self.name, status, frames, measurements={"peak_offset": self.peak})


def followme_statistics(records: Sequence[Dict], axis: str) -> Dict[str, float]:
    """
    Input-command statistics of a FollowMe episode.

    :param records: stream records of the episode
    :param axis: pull axis
    :return: correlation between the applied force and the command along the axis, and the fraction of active
        frames (human force at least half its amplitude) with a non-zero command
    """
    index = AXES[axis]
    applied = np.array([r["truth"]["applied_force"] for r in records], dtype=float)
    command = np.array([r["command"]["ee_velocity"][index] for r in records], dtype=float)
    active = np.array([r["truth"]["active"] for r in records], dtype=bool)
    if applied.size < 2 or applied.std() == 0 or command.std() == 0:
        correlation = 0.0
    else:
        correlation = float(np.corrcoef(applied, command)[0, 1])
    moving = float(np.mean(command[active] != 0.0)) if active.any() else 0.0
    return {"correlation": correlation, "active_nonzero_fraction": moving}


def follow_me(
    stream: SimStream,
    mode: str = "force-track",
    force_cfg: ForceTrackConfig = ForceTrackConfig(),
    object_cfg: ObjectTrackConfig = ObjectTrackConfig(),
) -> EpisodeResult:
    scene = stream.scene
    axis = getattr(scene, "axis", "x")
    if mode == "object-track" and axis in ("x", "y"):
        object_cfg = ObjectTrackConfig(**{**object_cfg.__dict__, "axis": axis})
    skill = FollowMe(axis, getattr(scene, "sign", 1.0), mode, force_cfg, object_cfg)
    start = len(stream.records)
    result = run_episode(stream, skill)
    result.measurements.update(followme_statistics(stream.records[start:], axis))
    return result


class ArmRot(Skill):
    """
    Rotate the arm until the torque stays inside the dead zone for settle_frames frames.

    With an expected rotation the episode is flagged possible_stall when it converged away from it.
    """

    name = "arm-rot"

    def __init__(self, cfg: ArmRotConfig = ArmRotConfig(), expected_rotation: Optional[float] = None):
        super().__init__()
        self.cfg = cfg
        self.expected_rotation = expected_rotation
        self.converged = Debounce(cfg.settle_frames)
        self.start_rotation: Optional[float] = None
        self.torque = 0.0

    def step(self, bundle: PerceptBundle, plant: PlantState) -> SkillCommand:
        if self.start_rotation is None:
            self.start_rotation = plant.ee_rotation
        self.torque = bundle.torque.tau_z
        command = arm_rot_step(bundle.torque, self.cfg.k_tau, self.cfg.eps_tau)
        if self.converged.update("converged" in command.flags):
            self.done = True
        return command

    def state(self) -> Dict[str, object]:
        return {"torque": self.torque, "converged_frames": self.converged.count}

    def finish(self, frames: int, plant: PlantState) -> EpisodeResult:
        rotation = plant.ee_rotation - (self.start_rotation or 0.0)
        flags = []
        if self.done and self.expected_rotation is not None:
            miss = abs(abs(rotation) - abs(self.expected_rotation))
            if miss > math.radians(self.cfg.stall_tolerance_deg):
                flags.append("possible_stall")
        status = SUCCESS if self.done else TIMEOUT
        return EpisodeResult(
            self.name,
            status,
            frames,
            flags,
            {"rotation_deg": math.degrees(rotation), "final_torque": self.torque},
        )


def run_arm_rot(
    stream: SimStream, cfg: ArmRotConfig = ArmRotConfig(), expected_rotation: Optional[float] = None
) -> EpisodeResult:
    return run_episode(stream, ArmRot(cfg, expected_rotation), cfg.max_frames)


class Handover(Skill):
    """
    Receive an object: the trigger's set point drives a leaky gripper; a closing decision that persists for
    latch_frames frames completes the handover and keeps the gripper closed.
    """

    name = "handover"

    def __init__(self, cfg: HandoverConfig = HandoverConfig()):
        super().__init__()
        self.cfg = cfg
        self.trigger = HandoverTrigger(cfg)
        self.latch = Debounce(cfg.latch_frames)
        self.leak = LeakyConfig(cfg.leak_alpha)
        self.x: Optional[float] = None
        self.latched = False
        self.first_close: Optional[int] = None
        self.frame = 0

    def step(self, bundle: PerceptBundle, plant: PlantState) -> SkillCommand:
        if self.x is None:
            self.x = plant.commanded_opening
        set_point = self.trigger.update(bundle.slip, bundle.force)
        if self.trigger.closing and self.first_close is None:
            self.first_close = self.frame
        if self.latch.update(self.trigger.closing):
            self.latched = True
        if self.latched:
            set_point = self.cfg.close_set_point
        self.x = leaky_step(self.x, set_point, self.leak)
        self.frame += 1
        return SkillCommand(gripper_target=self.x, flags=("closing",) if self.trigger.closing else ())

    def state(self) -> Dict[str, object]:
        return {"closing": self.trigger.closing, "latched": self.latched, "force_on": self.trigger.force.state}

    def finish(self, frames: int, plant: PlantState) -> EpisodeResult:
        status = SUCCESS if self.latched else FAILED
        return EpisodeResult(
            self.name,
            status,
            frames,
            [] if self.latched else ["no_handover"],
            {"first_close_frame": self.first_close, "final_opening": plant.gripper_opening},
        )


def run_handover(stream: SimStream, cfg: HandoverConfig = HandoverConfig()) -> EpisodeResult:
    return run_episode(stream, Handover(cfg))


class InHandRot(Skill):
    """
    Let a gripped object swing by slowly opening the gripper, then regrip.

    Torque mode opens while |tau| > eps_tau; slip mode opens until the object slips. The stop condition must hold
    for stop_frames frames. A final orientation away from the expected one raises possible_stall.
    """

    name = "in-hand-rot"

    def __init__(self, cfg: InHandRotConfig = InHandRotConfig()):
        super().__init__()
        self.cfg = cfg
        self.leak = LeakyConfig(cfg.leak_alpha)
        self.stop = Debounce(cfg.stop_frames)
        self.x: Optional[float] = None
        self.torque = 0.0
        self.orientation = 0.0
        self.object_seen = False

    def step(self, bundle: PerceptBundle, plant: PlantState) -> SkillCommand:
        if self.x is None:
            self.x = plant.commanded_opening
        self.torque = bundle.torque.tau_z
        if bundle.object.present:
            self.object_seen = True
            self.orientation = bundle.object.orientation
        if self.cfg.mode == "torque":
            condition = abs(self.torque) <= self.cfg.eps_tau
        else:
            condition = bundle.slip.active
        if self.stop.update(condition):
            self.done = True
            return SkillCommand(gripper_target=self.cfg.regrip_opening, flags=("regrip",))
        self.x = leaky_step(self.x, self.cfg.open_set_point, self.leak)
        return SkillCommand(gripper_target=self.x)

    def state(self) -> Dict[str, object]:
        return {"torque": self.torque, "orientation": self.orientation, "stop_frames": self.stop.count}

    def finish(self, frames: int, plant: PlantState) -> EpisodeResult:
        measurements = {
            "final_torque": self.torque,
            "orientation_deg": math.degrees(self.orientation),
        }
        if not self.done:
            return EpisodeResult(self.name, FAILED, frames, ["timeout"], measurements)
        flags = []
        miss = angle_difference_mod_pi(self.orientation, self.cfg.expected_orientation)
        if self.object_seen and miss > math.radians(self.cfg.stall_tolerance_deg):
            flags.append("possible_stall")
        return EpisodeResult(self.name, SUCCESS, frames, flags, measurements)


def in_hand_rot(
    stream: SimStream, mode: str = "torque", eps_tau: float = 5.0, cfg: InHandRotConfig = InHandRotConfig()
) -> EpisodeResult:
    cfg = InHandRotConfig(**{**cfg.__dict__, "mode": mode, "eps_tau": eps_tau})
    return run_episode(stream, InHandRot(cfg), cfg.max_frames)


class VisScan(Skill):
    """
    Travel at constant speed along the scan axis over an object.

    Entry is the first position where the object is present with area >= area_floor; the boundary is the position
    at the first of below_frames consecutive frames with area < area_floor. Reaching the travel limit ends the scan
    there.
    """

    name = "vis-scan"

    def __init__(self, cfg: VisScanConfig = VisScanConfig()):
        super().__init__()
        self.cfg = cfg
        self.index = AXES[cfg.axis]
        self.start: Optional[float] = None
        self.entry: Optional[float] = None
        self.boundary: Optional[float] = None
        self.run_start: Optional[float] = None
        self.run = 0
        self.at_limit = False
        self.area = 0

    def step(self, bundle: PerceptBundle, plant: PlantState) -> SkillCommand:
        position = plant.ee_position[self.index]
        if self.start is None:
            self.start = position
        obj = bundle.object
        self.area = obj.area
        if self.entry is None and obj.present and obj.area >= self.cfg.area_floor:
            self.entry = position
        if self.entry is not None:
            if obj.area < self.cfg.area_floor:
                if self.run == 0:
                    self.run_start = position
                self.run += 1
            else:
                self.run = 0
            if self.run >= self.cfg.below_frames:
                self.boundary = self.run_start
                self.done = True
                return SkillCommand(flags=("boundary",))
        if abs(position - self.start) >= self.cfg.limit:
            self.at_limit = True
            if self.entry is not None:
                self.boundary = position
            self.done = True
            return SkillCommand(flags=("at_workspace_limit",))
        velocity = [0.0, 0.0, 0.0]
        velocity[self.index] = self.cfg.speed
        return SkillCommand(ee_velocity=(velocity[0], velocity[1], velocity[2]))

    def state(self) -> Dict[str, object]:
        return {"area": self.area, "entry": self.entry, "below_frames": self.run}

    def finish(self, frames: int, plant: PlantState) -> EpisodeResult:
        if self.entry is None:
            raise SkillError("nothing_to_scan", "No object seen during the scan")
        if self.boundary is None:
            return EpisodeResult(self.name, TIMEOUT, frames, ["timeout"], {"entry": self.entry})
        flags = ["at_workspace_limit"] if self.at_limit else []
        extent = abs(self.boundary - self.entry)
        return EpisodeResult(
            self.name,
            SUCCESS,
            frames,
            flags,
            {"entry": self.entry, "boundary": self.boundary, "extent": extent},
        )


def vis_scan(
    stream: SimStream,
    scan_axis: str = "x",
    area_floor: float = 32000.0,
    cfg: VisScanConfig = VisScanConfig(),
) -> EpisodeResult:
    """
    Scan an object and measure its extent along the scan axis.

    :raise SkillError: nothing_to_scan when the object never shows up
    """
    cfg = VisScanConfig(**{**cfg.__dict__, "axis": scan_axis, "area_floor": area_floor})
    budget = int(math.ceil(cfg.limit / (cfg.speed * stream.dt))) + cfg.below_frames + 1
    return run_episode(stream, VisScan(cfg), budget)


class GentleGrasp(Skill):
    """
    Close on an object with a leaky integrator: quickly until first contact, then slowly until the grip signal (the
    force-vector norm) reaches the target.
    """

    name = "gentle-grasp"

    def __init__(self, cfg: GentleGraspConfig = GentleGraspConfig()):
        super().__init__()
        self.cfg = cfg
        self.approach = LeakyConfig(cfg.approach_alpha)
        self.fine = LeakyConfig(cfg.fine_alpha)
        self.x: Optional[float] = None
        self.contact = False
        self.contact_opening: Optional[float] = None
        self.signal = 0.0
        self.final_opening: Optional[float] = None

    def step(self, bundle: PerceptBundle, plant: PlantState) -> SkillCommand:
        if self.x is None:
            self.x = plant.commanded_opening
        self.signal = bundle.force.norm
        if not self.contact and self.signal > self.cfg.contact_threshold:
            self.contact = True
            self.contact_opening = plant.gripper_opening
            log.debug(f"Grasp contact at {plant.gripper_opening:.2f} mm")
        if self.contact and self.signal >= self.cfg.target:
            self.done = True
            self.final_opening = plant.gripper_opening
            return SkillCommand(gripper_target=self.x, flags=("grasped",))
        if not self.contact and plant.gripper_opening <= 0.0:
            log.error("Gripper closed without touching anything")
            raise SkillError("no_object", "Gripper closed fully without contact")
        self.x = leaky_step(self.x, self.cfg.set_point, self.fine if self.contact else self.approach)
        return SkillCommand(gripper_target=self.x)

    def state(self) -> Dict[str, object]:
        return {"grip_signal": self.signal, "contact": self.contact}

    def finish(self, frames: int, plant: PlantState) -> EpisodeResult:
        measurements = {
            "final_opening": plant.gripper_opening if self.final_opening is None else self.final_opening,
            "grip_signal": self.signal,
            "contact_opening": self.contact_opening,
        }
        if not self.done:
            return EpisodeResult(self.name, TIMEOUT, frames, ["timeout"], measurements)
        return EpisodeResult(self.name, SUCCESS, frames, [], measurements)


def gentle_grasp(
    stream: SimStream, grip_force_target: float = 2.0, cfg: GentleGraspConfig = GentleGraspConfig()
) -> EpisodeResult:
    """
    :raise SkillError: no_object when the gripper closes fully without contact
    """
    cfg = GentleGraspConfig(**{**cfg.__dict__, "target": grip_force_target})
    return run_episode(stream, GentleGrasp(cfg), cfg.max_frames)


class HoldRegrip(Skill):
    """Tighten the grip set point by a fixed increment on every slipping frame."""

    name = "hold"

    def __init__(self, cfg: HoldConfig = HoldConfig()):
        super().__init__()
        self.cfg = cfg
        self.leak = LeakyConfig(cfg.leak_alpha)
        self.hopeless = Debounce(cfg.cannot_hold_frames)
        self.set_point: Optional[float] = None
        self.x = 0.0
        self.slipping = False
        self.cannot_hold = False

    def step(self, bundle: PerceptBundle, plant: PlantState) -> SkillCommand:
        return self.update(bundle.slip, plant.commanded_opening)

    def update(self, slip: SlipSignal, opening: float) -> SkillCommand:
        if self.set_point is None:
            self.set_point = opening
            self.x = opening
        self.slipping = slip.active
        if slip.active:
            self.set_point = max(0.0, self.set_point - self.cfg.increment)
        self.x = leaky_step(self.x, -self.set_point, self.leak)
        if self.hopeless.update(slip.active and self.set_point <= 0.0):
            self.cannot_hold = True
            self.done = True
            return SkillCommand(gripper_target=self.x, flags=("cannot_hold",))
        return SkillCommand(gripper_target=self.x)

    def state(self) -> Dict[str, object]:
        return {"set_point": self.set_point, "slipping": self.slipping}

    def finish(self, frames: int, plant: PlantState) -> EpisodeResult:
        measurements = {"set_point": self.set_point, "commanded_opening": self.x}
        if self.cannot_hold:
            return EpisodeResult(self.name, FAILED, frames, ["cannot_hold"], measurements)
        return EpisodeResult(self.name, SUCCESS, frames, [], measurements)


def hold_regrip(stream: SimStream, cfg: HoldConfig = HoldConfig()) -> EpisodeResult:
    return run_episode(stream, HoldRegrip(cfg))


class DescendUntilContact(Skill):
    """Move down along z until the normal force channel exceeds the threshold for `frames` frames."""

    name = "descend"

    def __init__(self, cfg: DescendConfig = DescendConfig()):
        super().__init__()
        self.cfg = cfg
        self.touch = Debounce(cfg.frames)
        self.run_start: Optional[float] = None
        self.contact_height: Optional[float] = None
        self.fz = 0.0

    def step(self, bundle: PerceptBundle, plant: PlantState) -> SkillCommand:
        self.fz = bundle.force.f[2]
        above = self.fz > self.cfg.threshold
        if above and self.touch.count == 0:
            self.run_start = plant.ee_position[2]
        if self.touch.update(above):
            self.contact_height = self.run_start
            self.done = True
            return SkillCommand(flags=("contact",))
        return SkillCommand(ee_velocity=(0.0, 0.0, self.cfg.speed))

    def state(self) -> Dict[str, object]:
        return {"normal_force": self.fz}

    def finish(self, frames: int, plant: PlantState) -> EpisodeResult:
        if self.contact_height is None:
            return EpisodeResult(self.name, TIMEOUT, frames, ["timeout"], {"depth": plant.ee_position[2]})
        return EpisodeResult(self.name, SUCCESS, frames, [], {"contact_height": self.contact_height})


def descend_until_contact(stream: SimStream, cfg: DescendConfig = DescendConfig()) -> EpisodeResult:
    return run_episode(stream, DescendUntilContact(cfg), cfg.max_frames)


class PressToForce(Skill):
    """Press along z until the force predicted by a regression model stays at the target."""

    name = "press-to-force"

    def __init__(self, model: KrrModel, cfg: PressConfig = PressConfig()):
        super().__init__()
        self.model = model
        self.cfg = cfg
        self.settled = Debounce(cfg.settle_frames)
        self.predicted = 0.0

    def step(self, bundle: PerceptBundle, plant: PlantState) -> SkillCommand:
        features = feature_vector(bundle.field, bundle.object, include_ratio=True)
        self.predicted = krr_predict(self.model, features.values)
        command, within = press_step(self.predicted, self.cfg.target, self.cfg.gain, self.cfg.tolerance)
        if self.settled.update(within):
            self.done = True
            return SkillCommand(flags=("at_target",))
        return command

    def state(self) -> Dict[str, object]:
        return {"predicted_force": self.predicted}

    def finish(self, frames: int, plant: PlantState) -> EpisodeResult:
        status = SUCCESS if self.done else TIMEOUT
        return EpisodeResult(
            self.name, status, frames, [] if self.done else ["timeout"], {"predicted_force": self.predicted}
        )


def press_to_force(stream: SimStream, model: KrrModel, cfg: PressConfig = PressConfig()) -> EpisodeResult:
    return run_episode(stream, PressToForce(model, cfg), cfg.max_frames)


class Idle(Skill):
    """Send no motion; the episode only records the sensor."""

    name = "none"

    def step(self, bundle: PerceptBundle, plant: PlantState) -> SkillCommand:
        return SkillCommand()

    def finish(self, frames: int, plant: PlantState) -> EpisodeResult:
        return EpisodeResult(self.name, SUCCESS, frames)


class Release(Skill):
    """Open the gripper through the leaky integrator until it is within `tolerance` mm of the open position."""

    name = "release"

    def __init__(self, open_opening: float = 60.0, leak_alpha: float = 0.8, tolerance: float = 1.0):
        super().__init__()
        self.open_opening = open_opening
        self.leak = LeakyConfig(leak_alpha)
        self.tolerance = tolerance
        self.x: Optional[float] = None

    def step(self, bundle: PerceptBundle, plant: PlantState) -> SkillCommand:
        if self.x is None:
            self.x = plant.commanded_opening
        if abs(plant.gripper_opening - self.open_opening) <= self.tolerance:
            self.done = True
            return SkillCommand(gripper_target=self.x, flags=("released",))
        self.x = leaky_step(self.x, -self.open_opening, self.leak)
        return SkillCommand(gripper_target=self.x)

    def finish(self, frames: int, plant: PlantState) -> EpisodeResult:
        status = SUCCESS if self.done else TIMEOUT
        return EpisodeResult(self.name, status, frames, [], {"final_opening": plant.gripper_opening})


class Place(Skill):
    """
    Carry the held object along x to target_x with a speed-limited proportional move, then open the gripper the way
    Release does.
    """

    name = "place"

    def __init__(
        self,
        target_x: float,
        gain: float = 3.0,
        speed: float = 40.0,
        tolerance: float = 0.5,
        leak_alpha: float = 0.8,
        open_opening: float = 60.0,
    ):
        super().__init__()
        if gain <= 0 or speed <= 0 or tolerance <= 0:
            raise SkillError("bad_config", "Place gain, speed and tolerance must be positive")
        self.target_x = target_x
        self.gain = gain
        self.speed = speed
        self.tolerance = tolerance
        self.release = Release(open_opening, leak_alpha)
        self.arrived = False
        self.error = 0.0

    def step(self, bundle: PerceptBundle, plant: PlantState) -> SkillCommand:
        self.error = self.target_x - plant.ee_position[0]
        if not self.arrived and abs(self.error) > self.tolerance:
            return SkillCommand(ee_velocity=(signed_clamp(self.gain * self.error, self.speed), 0.0, 0.0))
        self.arrived = True
        command = self.release.step(bundle, plant)
        self.done = self.release.done
        return command

    def state(self) -> Dict[str, object]:
        return {"target_x": self.target_x, "arrived": self.arrived}

    def finish(self, frames: int, plant: PlantState) -> EpisodeResult:
        measurements = {"placed_x": plant.ee_position[0], "final_opening": plant.gripper_opening}
        if not self.done:
            return EpisodeResult(self.name, TIMEOUT, frames, ["timeout"], measurements)
        return EpisodeResult(self.name, SUCCESS, frames, [], measurements)
