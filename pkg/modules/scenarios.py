"""
Scripted scenes for the simulator.

Every scene derives from sim.Scene. Scenes that react to the robot read the plant state each frame and keep their
own hidden state (pen angle, object slide) which advance() updates once the plant has moved.
"""
import functools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from modules.core import SensorGeometry
from modules.percept import object_moments
from modules.sim import (
    ZERO_WRENCH,
    AppliedWrench,
    PlantState,
    Scene,
    SceneObject,
    SimError,
    SkinModel,
    marker_response,
)
from modules.utils import clamp

AXES = {"x": 0, "y": 1, "z": 2}

FOLLOWME_REST_FRAMES = 15
FOLLOWME_PULSE_FRAMES = 90
FOLLOWME_AMPLITUDE = 3.0
FOLLOWME_SPRING = {"x": 0.05, "y": 0.05, "z": 0.02}
FOLLOWME_PX_PER_FORCE = 4.0

SUBSTANCES = ("flour", "sugar", "peas")
# Mean drag (viscosity proxy) and per-frame jitter (granularity proxy), force-units
STIR_DRAG = {"flour": 1.5, "sugar": 0.9, "peas": 0.4}
STIR_JITTER = {"flour": 0.05, "sugar": 0.15, "peas": 0.45}
STIR_FRAMES = 60
STIR_MOVEMENTS = 8
STIR_TILT_NOISE = 0.01

log = logging.getLogger()


class StaticHoldScene(Scene):
    """Object held still under a constant load (zero by default)."""

    name = "static-hold"
    n_frames = 300

    def __init__(
        self,
        geometry: SensorGeometry,
        skin: SkinModel,
        rng: np.random.Generator,
        load: AppliedWrench = ZERO_WRENCH,
        frames: int = 300,
    ):
        super().__init__(geometry, skin, rng)
        skin.check(load)
        self.load = load
        self.n_frames = frames

    def initial_plant(self) -> PlantState:
        return PlantState(contact=True)

    def contact(self, plant: PlantState) -> bool:
        return True

    def wrench(self, t: int, plant: PlantState) -> AppliedWrench:
        return self.load

    def truth(self, t: int, plant: PlantState) -> Dict[str, object]:
        return {"wrench": self.load.to_dict()}


class FollowMeScene(Scene):
    """
    A human pulls or pushes the gripped object along one axis.

    The skin feels the scripted human force minus a spring-back term proportional to the end-effector offset along
    that axis, so a controller that follows the human relaxes the load. In-plane loads also slide the object across
    the view (4 px per force-unit); a load along z leaves the silhouette where it is.
    """

    n_frames = 2 * FOLLOWME_REST_FRAMES + FOLLOWME_PULSE_FRAMES

    def __init__(
        self,
        geometry: SensorGeometry,
        skin: SkinModel,
        rng: np.random.Generator,
        axis: str = "x",
        sign: float = 1.0,
        profile: str = "pulse",
        amplitude: float = FOLLOWME_AMPLITUDE,
    ):
        super().__init__(geometry, skin, rng)
        if axis not in AXES:
            raise SimError(f"Unknown axis '{axis}'")
        if profile not in ("pulse", "constant"):
            raise SimError(f"Unknown force profile '{profile}'")
        self.axis = axis
        self.index = AXES[axis]
        self.sign = 1.0 if sign >= 0 else -1.0
        self.profile = profile
        self.amplitude = amplitude
        self.spring = FOLLOWME_SPRING[axis]
        self.name = f"followme-{'pull' if self.sign > 0 else 'push'}-{axis}"

    def human_force(self, t: int) -> float:
        if self.profile == "constant":
            return self.sign * self.amplitude
        k = t - FOLLOWME_REST_FRAMES
        if not 0 <= k < FOLLOWME_PULSE_FRAMES:
            return 0.0
        return self.sign * self.amplitude * math.sin(math.pi * k / FOLLOWME_PULSE_FRAMES) ** 2

    def applied_force(self, t: int, plant: PlantState) -> float:
        return self.human_force(t) - self.spring * plant.ee_position[self.index]

    def active(self, t: int) -> bool:
        return abs(self.human_force(t)) >= 0.5 * self.amplitude

    def initial_plant(self) -> PlantState:
        return PlantState(contact=True)

    def contact(self, plant: PlantState) -> bool:
        return True

    def wrench(self, t: int, plant: PlantState) -> AppliedWrench:
        f = [0.0, 0.0, 0.0]
        f[self.index] = self.applied_force(t, plant)
        return AppliedWrench((f[0], f[1], f[2]))

    def scene_object(self, t: int, plant: PlantState) -> Optional[SceneObject]:
        cx, cy = self.geometry.image_center
        shift = FOLLOWME_PX_PER_FORCE * self.applied_force(t, plant)
        if self.axis == "x":
            left = cx + 40.0 + shift
            return SceneObject("rect", width=400.0, height=60.0, pose=(left + 200.0, cy, 0.0), texture_seed=3)
        top = cy + (shift if self.axis == "y" else 0.0)
        return SceneObject("rect", width=60.0, height=400.0, pose=(cx, top + 200.0, 0.0), texture_seed=3)

    def truth(self, t: int, plant: PlantState) -> Dict[str, object]:
        return {
            "human_force": self.human_force(t),
            "applied_force": self.applied_force(t, plant),
            "offset": plant.ee_position[self.index],
            "active": self.active(t),
        }


class ArmRotScene(Scene):
    """
    A stick held rigidly in the gripper; gravity loads the skin with tau0 * cos(phi), phi = phi0 - ee_rotation.

    With a positive stiction threshold the stick settles against its support once the gravity torque falls to the
    threshold and the skin reads zero from then on.
    A positive grip_width keeps the fingers from closing past the stick.
    """

    name = "arm-rot"
    n_frames = 200

    def __init__(
        self,
        geometry: SensorGeometry,
        skin: SkinModel,
        rng: np.random.Generator,
        tau0: float = 10.0,
        phi0: float = 0.0,
        stiction: float = 0.0,
        grip_width: float = 0.0,
    ):
        super().__init__(geometry, skin, rng)
        if stiction < 0:
            raise SimError("Stiction threshold must be non-negative")
        self.tau0 = tau0
        self.phi0 = phi0
        self.stiction = stiction
        self.grip_width = grip_width

    def initial_plant(self) -> PlantState:
        return PlantState(gripper_opening=10.0, gripper_command=10.0, contact=True)

    def min_opening(self, plant: PlantState) -> float:
        return self.grip_width

    def contact(self, plant: PlantState) -> bool:
        return True

    def angle(self, plant: PlantState) -> float:
        return self.phi0 - plant.ee_rotation

    def gravity_torque(self, plant: PlantState) -> float:
        return self.tau0 * math.cos(self.angle(plant))

    def wrench(self, t: int, plant: PlantState) -> AppliedWrench:
        tau = self.gravity_torque(plant)
        if self.stiction > 0 and abs(tau) <= self.stiction:
            tau = 0.0
        return AppliedWrench(tau_z=tau)

    def scene_object(self, t: int, plant: PlantState) -> Optional[SceneObject]:
        cx, cy = self.geometry.image_center
        return SceneObject("rect", width=200.0, height=12.0, pose=(cx, cy, 0.0), texture_seed=5)

    def truth(self, t: int, plant: PlantState) -> Dict[str, object]:
        return {"angle_deg": math.degrees(self.angle(plant)), "gravity_torque": self.gravity_torque(plant)}


class InHandRotScene(Scene):
    """
    A pen gripped at its middle swings down under gravity when the grip loosens.

    Looseness grows linearly from the grip opening (10 mm) to 4 mm beyond it; a fully loose pen turns 3 degrees per
    frame. The pen stalls where the gravity torque tau0 * cos(angle) drops to the stiction threshold (at 90 degrees
    without stiction); a stalled pen no longer loads the skin.
    """

    name = "in-hand-rot"
    n_frames = 300
    grip_opening = 10.0
    loose_span = 4.0
    max_rate = math.radians(3.0)

    def __init__(
        self,
        geometry: SensorGeometry,
        skin: SkinModel,
        rng: np.random.Generator,
        tau0: float = 10.0,
        stiction: float = 0.0,
        initial_angle: float = 0.0,
        pen_length: float = 200.0,
    ):
        super().__init__(geometry, skin, rng)
        if tau0 < 0 or stiction < 0:
            raise SimError("Gravity torque and stiction must be non-negative")
        self.tau0 = tau0
        self.stiction = stiction
        self.pen_length = pen_length
        if stiction > 0 and tau0 > 0:
            self.stall_angle = math.acos(min(1.0, stiction / tau0))
        else:
            self.stall_angle = math.pi / 2
        self.angle = min(initial_angle, self.stall_angle)

    def initial_plant(self) -> PlantState:
        return PlantState(gripper_opening=self.grip_opening, gripper_command=self.grip_opening, contact=True)

    def min_opening(self, plant: PlantState) -> float:
        return self.grip_opening

    def contact(self, plant: PlantState) -> bool:
        return True

    def looseness(self, plant: PlantState) -> float:
        return clamp((plant.gripper_opening - self.grip_opening) / self.loose_span, 0.0, 1.0)

    @property
    def stuck(self) -> bool:
        return self.angle >= self.stall_angle

    def gravity_torque(self) -> float:
        return self.tau0 * math.cos(self.angle)

    def wrench(self, t: int, plant: PlantState) -> AppliedWrench:
        return AppliedWrench(tau_z=0.0 if self.stuck else self.gravity_torque())

    def scene_object(self, t: int, plant: PlantState) -> Optional[SceneObject]:
        cx, cy = self.geometry.image_center
        return SceneObject("rect", width=self.pen_length, height=10.0, pose=(cx, cy, self.angle), texture_seed=7)

    def advance(self, t: int, plant: PlantState):
        if not self.stuck:
            self.angle = min(self.angle + self.max_rate * self.looseness(plant), self.stall_angle)

    def truth(self, t: int, plant: PlantState) -> Dict[str, object]:
        return {
            "angle_deg": math.degrees(self.angle),
            "gravity_torque": self.gravity_torque(),
            "stuck": self.stuck,
            "looseness": self.looseness(plant),
        }


class HandoverScene(Scene):
    """
    A human hands an object to the robot.

    Frames 0-14 the view is empty; 15-44 the object slides into the gripper without loading the skin; 45-74 the
    human presses it against the finger without moving it; from 75 on it keeps sliding while pressed.
    """

    name = "handover"
    n_frames = 120
    arrive = 15
    still = 45
    release = 75

    def __init__(
        self,
        geometry: SensorGeometry,
        skin: SkinModel,
        rng: np.random.Generator,
        force: float = 1.5,
        slide_rate: float = 2.0,
        object_width: float = 30.0,
    ):
        super().__init__(geometry, skin, rng)
        self.force = force
        self.slide_rate = slide_rate
        self.object_width = object_width
        self.t = 0

    def phase(self, t: int) -> str:
        if t < self.arrive:
            return "empty"
        if t < self.still:
            return "arriving"
        if t < self.release:
            return "still"
        return "release"

    def sliding(self, t: int) -> bool:
        return self.phase(t) in ("arriving", "release")

    def pressed(self, t: int) -> bool:
        return t >= self.still

    def slide_offset(self, t: int) -> float:
        frames = clamp(t, self.arrive, self.still) - self.arrive + max(0, t - self.release)
        return self.slide_rate * frames

    def min_opening(self, plant: PlantState) -> float:
        return self.object_width if self.pressed(self.t) else 0.0

    def contact(self, plant: PlantState) -> bool:
        return self.pressed(self.t) and plant.gripper_opening <= self.object_width

    def wrench(self, t: int, plant: PlantState) -> AppliedWrench:
        return AppliedWrench((0.0, self.force, 0.0)) if self.pressed(t) else ZERO_WRENCH

    def scene_object(self, t: int, plant: PlantState) -> Optional[SceneObject]:
        if t < self.arrive:
            return None
        cx, _ = self.geometry.image_center
        top = -240.0 + self.slide_offset(t)
        return SceneObject("rect", width=100.0, height=300.0, pose=(cx, top + 150.0, 0.0), texture_seed=11)

    def advance(self, t: int, plant: PlantState):
        self.t = t + 1

    def truth(self, t: int, plant: PlantState) -> Dict[str, object]:
        return {"phase": self.phase(t), "sliding": self.sliding(t), "pressed": self.pressed(t)}


class GentleGraspScene(Scene):
    """
    A rigid object of the given width between open fingers; squeezing it past its width loads the skin normally
    with stiffness * (width - commanded opening).
    """

    name = "gentle-grasp"
    n_frames = 400

    def __init__(
        self,
        geometry: SensorGeometry,
        skin: SkinModel,
        rng: np.random.Generator,
        object_width: Optional[float] = 30.0,
        stiffness: float = 2.0,
    ):
        super().__init__(geometry, skin, rng)
        self.object_width = object_width
        self.stiffness = stiffness

    def normal_force(self, plant: PlantState) -> float:
        if self.object_width is None:
            return 0.0
        return self.stiffness * max(0.0, self.object_width - plant.commanded_opening)

    def min_opening(self, plant: PlantState) -> float:
        return 0.0 if self.object_width is None else self.object_width

    def contact(self, plant: PlantState) -> bool:
        return self.object_width is not None and plant.commanded_opening <= self.object_width

    def wrench(self, t: int, plant: PlantState) -> AppliedWrench:
        return AppliedWrench((0.0, 0.0, self.normal_force(plant)))

    def scene_object(self, t: int, plant: PlantState) -> Optional[SceneObject]:
        if self.object_width is None:
            return None
        cx, cy = self.geometry.image_center
        return SceneObject("disk", width=60.0, height=60.0, pose=(cx, cy, 0.0), texture_seed=13)

    def truth(self, t: int, plant: PlantState) -> Dict[str, object]:
        return {"normal_force": self.normal_force(plant), "object_present": self.object_width is not None}


class HoldScene(Scene):
    """
    A grasped object that slides down 2 px per frame unless the gripper squeezes it (commanded opening at or below
    hold_opening). The heavy variant slides at any grip.
    """

    name = "hold"
    n_frames = 150

    def __init__(
        self,
        geometry: SensorGeometry,
        skin: SkinModel,
        rng: np.random.Generator,
        object_width: float = 30.0,
        hold_opening: float = 28.0,
        slide_rate: float = 2.0,
        heavy: bool = False,
    ):
        super().__init__(geometry, skin, rng)
        self.object_width = object_width
        self.hold_opening = hold_opening
        self.slide_rate = slide_rate
        self.heavy = heavy
        self.offset = 0.0
        if heavy:
            self.name = "hold-heavy"

    def initial_plant(self) -> PlantState:
        return PlantState(gripper_opening=self.object_width, gripper_command=self.object_width, contact=True)

    def min_opening(self, plant: PlantState) -> float:
        return self.object_width

    def contact(self, plant: PlantState) -> bool:
        return True

    def sliding(self, plant: PlantState) -> bool:
        return self.heavy or plant.commanded_opening > self.hold_opening

    def wrench(self, t: int, plant: PlantState) -> AppliedWrench:
        return AppliedWrench((0.0, 1.0, 0.0))

    def scene_object(self, t: int, plant: PlantState) -> Optional[SceneObject]:
        cx, cy = self.geometry.image_center
        return SceneObject("rect", width=60.0, height=2000.0, pose=(cx, cy + self.offset, 0.0), texture_seed=17)

    def advance(self, t: int, plant: PlantState):
        if self.sliding(plant):
            self.offset += self.slide_rate

    def truth(self, t: int, plant: PlantState) -> Dict[str, object]:
        return {"sliding": self.sliding(plant), "offset": self.offset}


class VisScanScene(Scene):
    """
    A plate seen through the skin while the end effector travels along x over it.

    The plate is plate_length x plate_width mm, imaged at px_per_mm; its near edge crosses the image center when
    the end effector is at x = 0 and its far edge when x = plate_length.
    """

    name = "vis-scan"
    n_frames = 200

    def __init__(
        self,
        geometry: SensorGeometry,
        skin: SkinModel,
        rng: np.random.Generator,
        plate_length: float = 100.0,
        plate_width: float = 40.0,
        px_per_mm: float = 5.0,
        start: float = 0.5,
        present: bool = True,
    ):
        super().__init__(geometry, skin, rng)
        self.plate_length = plate_length
        self.plate_width = plate_width
        self.px_per_mm = px_per_mm
        self.start = start
        self.present = present
        if not present:
            self.name = "vis-scan-empty"

    def initial_plant(self) -> PlantState:
        return PlantState(ee_position=(self.start, 0.0, 0.0))

    def scene_object(self, t: int, plant: PlantState) -> Optional[SceneObject]:
        if not self.present:
            return None
        cx, cy = self.geometry.image_center
        x = cx + (self.plate_length / 2.0 - plant.ee_position[0]) * self.px_per_mm
        return SceneObject(
            "rect",
            width=self.plate_length * self.px_per_mm,
            height=self.plate_width * self.px_per_mm,
            pose=(x, cy, 0.0),
            texture_seed=19,
        )

    def truth(self, t: int, plant: PlantState) -> Dict[str, object]:
        return {"plate_length": self.plate_length if self.present else 0.0, "position": plant.ee_position[0]}


class PlateLoadScene(Scene):
    """
    A bending plate probed from below; the normal load along the normalized span is a parabola peaking at 0.5
    (or flat), with Gaussian load noise given as a fraction of the peak.

    The span lies under end-effector x in [0, span] mm.
    """

    name = "plate-load"

    def __init__(
        self,
        geometry: SensorGeometry,
        skin: SkinModel,
        rng: np.random.Generator,
        positions: int = 21,
        peak: float = 8.0,
        noise: float = 0.02,
        flat: bool = False,
        z_gain: float = 10.0,
        span: float = 100.0,
    ):
        super().__init__(geometry, skin, rng)
        if positions < 2:
            raise SimError("A load probe needs at least two positions")
        if span <= 0:
            raise SimError("The plate span must be positive")
        self.positions = np.linspace(0.0, 1.0, positions)
        self.n_frames = positions
        self.peak = peak
        self.noise = noise
        self.flat = flat
        self.z_gain = z_gain
        self.span = span
        if flat:
            self.name = "plate-load-flat"

    @property
    def step(self) -> float:
        return float(self.positions[1] - self.positions[0])

    @property
    def degenerate(self) -> bool:
        return self.flat

    @property
    def true_peak(self) -> float:
        return 0.5

    def ee_x(self, position: float) -> float:
        return position * self.span

    def position_at(self, ee_x: float) -> float:
        return ee_x / self.span

    def load(self, x: float) -> float:
        if self.flat:
            return self.peak
        return self.peak * (1.0 - ((x - 0.5) / 0.5) ** 2)

    def wrench(self, t: int, plant: PlantState) -> AppliedWrench:
        x = self.positions[min(t, len(self.positions) - 1)]
        return AppliedWrench((0.0, 0.0, self.load(float(x))))

    def probe_stream(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Slide along the span and read the marker-size channel at every position.

        :return: (positions, readings) where readings are z_gain * mean relative size growth
        """
        readings = []
        for x in self.positions:
            fz = self.load(float(x))
            if self.noise > 0 and not self.flat:
                fz += self.noise * self.peak * float(self.rng.normal())
            _, sizes = marker_response(self.geometry, self.skin, AppliedWrench((0.0, 0.0, fz)), self.rng)
            readings.append(self.z_gain * float(np.mean(sizes / self.geometry.nominal_size - 1.0)))
        return self.positions.copy(), np.array(readings)

    def truth(self, t: int, plant: PlantState) -> Dict[str, object]:
        return {"true_peak": self.true_peak, "degenerate": self.degenerate}


class DescendScene(Scene):
    """
    The end effector moves down along z; the ground is contact_depth mm below the start. A positive grip_width keeps
    the fingers from closing past a held object.
    """

    name = "descend"
    n_frames = 200

    def __init__(
        self,
        geometry: SensorGeometry,
        skin: SkinModel,
        rng: np.random.Generator,
        contact_depth: float = 20.0,
        stiffness: float = 2.0,
        grip_width: float = 0.0,
    ):
        super().__init__(geometry, skin, rng)
        self.contact_depth = contact_depth
        self.stiffness = stiffness
        self.grip_width = grip_width

    def initial_plant(self) -> PlantState:
        return PlantState(gripper_opening=10.0, gripper_command=10.0, contact=True)

    def min_opening(self, plant: PlantState) -> float:
        return self.grip_width

    def normal_force(self, plant: PlantState) -> float:
        return self.stiffness * max(0.0, plant.ee_position[2] - self.contact_depth)

    def contact(self, plant: PlantState) -> bool:
        return plant.ee_position[2] >= self.contact_depth

    def wrench(self, t: int, plant: PlantState) -> AppliedWrench:
        return AppliedWrench((0.0, 0.0, self.normal_force(plant)))

    def truth(self, t: int, plant: PlantState) -> Dict[str, object]:
        return {"normal_force": self.normal_force(plant), "ground_contact": self.contact(plant)}


class PressScene(Scene):
    """
    Pressing an object onto a scale.

    With `peaks` the load is scripted: one trapezoid episode per peak (ramp up, hold, ramp down). Without, the load
    follows the end-effector depth below the contact plane. The object's surface adds an oblique shear proportional
    to the normal load, and its material scales the skin response.
    """

    name = "press"
    shear = (0.2, 0.1)

    def __init__(
        self,
        geometry: SensorGeometry,
        skin: SkinModel,
        rng: np.random.Generator,
        peaks: Optional[Sequence[float]] = None,
        ramp: int = 25,
        hold: int = 25,
        stiffness: float = 1.0,
        material: str = "wood",
        frames: int = 150,
    ):
        super().__init__(geometry, skin.for_material(material), rng)
        self.material = material
        self.peaks = None if peaks is None else [float(p) for p in peaks]
        self.ramp = ramp
        self.hold = hold
        self.stiffness = stiffness
        self.n_frames = frames if self.peaks is None else len(self.peaks) * self.episode_frames

    @property
    def episode_frames(self) -> int:
        return 2 * self.ramp + self.hold

    def episode(self, t: int) -> int:
        return t // self.episode_frames

    def scripted_force(self, t: int) -> float:
        assert self.peaks is not None
        if t >= len(self.peaks) * self.episode_frames:
            return 0.0
        peak = self.peaks[self.episode(t)]
        k = t % self.episode_frames
        if k < self.ramp:
            return peak * k / self.ramp
        if k < self.ramp + self.hold:
            return peak
        return peak * (self.episode_frames - k) / self.ramp

    def normal_force(self, t: int, plant: PlantState) -> float:
        if self.peaks is not None:
            return self.scripted_force(t)
        return self.stiffness * max(0.0, plant.ee_position[2])

    def contact(self, plant: PlantState) -> bool:
        return self.peaks is not None or plant.ee_position[2] > 0

    def wrench(self, t: int, plant: PlantState) -> AppliedWrench:
        fz = self.normal_force(t, plant)
        return AppliedWrench((self.shear[0] * fz, self.shear[1] * fz, fz))

    def truth(self, t: int, plant: PlantState) -> Dict[str, object]:
        truth: Dict[str, object] = {"normal_force": self.normal_force(t, plant), "material": self.material}
        if self.peaks is not None:
            truth["episode"] = self.episode(t)
        return truth


@dataclass(frozen=True)
class StirTrial:
    """
    One stirring trial: raw marker deviations (frames, markers, 2) and the spoon's object channels
    (frames, 4) as (centroid x, centroid y, orientation, area).
    """

    substance: str
    movement: int
    deviations: np.ndarray
    objects: np.ndarray

    @property
    def label(self) -> int:
        return SUBSTANCES.index(self.substance)

    @property
    def n_frames(self) -> int:
        return int(self.deviations.shape[0])


def stir_direction(movement: int, t: int, phase: float) -> Tuple[float, float]:
    """
    Drag direction of a stirring movement at frame t, scaled to unit peak magnitude.

    Movements 1-4 are circles (1-2 clockwise, 3-4 counter-clockwise), 5-6 back-and-forth along x, 7-8 along y;
    odd ids are slow (one cycle per 60 frames), even ids fast (one per 30).
    """
    if not 1 <= movement <= STIR_MOVEMENTS:
        raise SimError(f"Unknown stirring movement {movement}, expected 1..{STIR_MOVEMENTS}")
    omega = 2.0 * math.pi / (30.0 if movement % 2 == 0 else 60.0)
    if movement <= 4:
        turn = -1.0 if movement <= 2 else 1.0
        angle = phase + turn * omega * t
        return -turn * math.sin(angle), turn * math.cos(angle)
    swing = math.sin(phase + omega * t)
    return (swing, 0.0) if movement <= 6 else (0.0, swing)


def scenario_stir(
    geometry: SensorGeometry,
    skin: SkinModel,
    substance: str,
    movement: int,
    rng: np.random.Generator,
    frames: int = STIR_FRAMES,
) -> StirTrial:
    """
    Simulate one stirring trial.

    The spoon drags through the substance with the substance's mean drag along the movement's direction plus white
    jitter. Marker deviations come straight from the skin model; the spoon is seen as an 80 x 12 px bar tilted by
    the drag and shifted by the load.

    :param geometry: sensor geometry
    :param skin: skin model
    :param substance: one of SUBSTANCES
    :param movement: movement id 1..8
    :param rng: random stream (per-trial phase, jitter and skin noise)
    :param frames: trial length
    :return: StirTrial
    :raise SimError: for unknown substances or movements
    """
    if substance not in STIR_DRAG:
        raise SimError(f"Unknown substance '{substance}', expected one of {SUBSTANCES}")
    drag, jitter = STIR_DRAG[substance], STIR_JITTER[substance]
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    rest = geometry.rest_positions
    cx, cy = geometry.image_center
    deviations = np.zeros((frames, geometry.n_markers, 2))
    objects = np.zeros((frames, 4))
    for t in range(frames):
        ux, uy = stir_direction(movement, t, phase)
        noise = rng.normal(0.0, jitter, size=2)
        fx, fy = drag * ux + noise[0], drag * uy + noise[1]
        positions, _ = marker_response(geometry, skin, AppliedWrench((fx, fy, 0.0)), rng)
        deviations[t] = positions - rest
        tilt = math.pi / 4 + 0.1 * drag + STIR_TILT_NOISE * float(rng.normal())
        spoon = SceneObject("rect", width=80.0, height=12.0, pose=(cx + 2.0 * fx, cy + 2.0 * fy, tilt))
        percept = object_moments(spoon.silhouette(geometry))
        objects[t] = (percept.centroid[0], percept.centroid[1], percept.orientation, percept.area)
    return StirTrial(substance=substance, movement=movement, deviations=deviations, objects=objects)


def jitter_statistic(trial: StirTrial) -> float:
    """
    High-frequency jitter of a trial: spread of the second difference of the frame-mean deviation, scaled so that
    white noise of standard deviation s gives s.
    """
    mean = trial.deviations.mean(axis=1)
    second = np.diff(mean, n=2, axis=0)
    return float(second.std() / math.sqrt(6.0))


SceneFactory = Callable[..., Scene]

SCENES: Dict[str, SceneFactory] = {
    "static-hold": StaticHoldScene,
    "followme-pull-x": functools.partial(FollowMeScene, axis="x", sign=1.0),
    "followme-pull-y": functools.partial(FollowMeScene, axis="y", sign=1.0),
    "followme-pull-z": functools.partial(FollowMeScene, axis="z", sign=1.0),
    "followme-push-x": functools.partial(FollowMeScene, axis="x", sign=-1.0),
    "followme-push-y": functools.partial(FollowMeScene, axis="y", sign=-1.0),
    "followme-push-z": functools.partial(FollowMeScene, axis="z", sign=-1.0),
    "arm-rot": ArmRotScene,
    "arm-rot-stuck": functools.partial(ArmRotScene, stiction=10.0 * math.cos(math.radians(60.0))),
    "in-hand-rot-heavy": functools.partial(InHandRotScene, tau0=10.0, stiction=0.0),
    "in-hand-rot-pen": functools.partial(InHandRotScene, tau0=3.0, stiction=1.5),
    "handover": HandoverScene,
    "gentle-grasp": GentleGraspScene,
    "gentle-grasp-empty": functools.partial(GentleGraspScene, object_width=None),
    "hold": HoldScene,
    "hold-heavy": functools.partial(HoldScene, heavy=True),
    "vis-scan": VisScanScene,
    "vis-scan-empty": functools.partial(VisScanScene, present=False),
    "plate-load": PlateLoadScene,
    "plate-load-flat": functools.partial(PlateLoadScene, flat=True),
    "descend": DescendScene,
    "press": PressScene,
}


def scene_names() -> List[str]:
    return sorted(SCENES)


def build_scene(
    name: str, geometry: SensorGeometry, skin: SkinModel, rng: np.random.Generator, **params
) -> Scene:
    """
    Instantiate a named scene.

    :param name: key of SCENES
    :param params: scene parameters overriding the defaults
    :return: Scene
    :raise SimError: for unknown names or parameters
    """
    if name not in SCENES:
        raise SimError(f"Unknown scenario '{name}', expected one of {scene_names()}")
    try:
        scene = SCENES[name](geometry, skin, rng, **params)
    except TypeError as e:
        raise SimError(f"Bad parameters for scenario '{name}': {e}")
    scene.name = name
    return scene
