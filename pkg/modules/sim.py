"""
Deterministic stand-in for the physical sensor: linear elastic skin, synthetic camera frames with a separate object
silhouette channel, and a first-order end-effector/gripper plant.
"""
import functools
import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from modules.core import MarkerObservation, SensorGeometry, SkillCommand, seeded_rng
from modules.utils import clamp

BACKGROUND_INTENSITY = 230
MARKER_INTENSITY = 20
TEXTURE_LOW = 140
TEXTURE_HIGH = 210
TEXTURE_PERIOD = 64
DEFAULT_MAX_OPENING = 80.0

# Compliance multipliers of the pressed object (shear, normal), relative to the bare skin
MATERIALS: Dict[str, Tuple[float, float]] = {
    "wood": (1.0, 1.0),
    "glass": (1.15, 1.25),
    "foam": (0.7, 0.55),
}

log = logging.getLogger()


class SimError(Exception):
    """Generic simulator exception."""

    ...


class SaturationError(SimError):
    """Applied wrench outside the skin's linear range."""

    ...


class PlantError(SimError):
    """Invalid command sent to the plant."""

    ...


@dataclass(frozen=True)
class AppliedWrench:
    """External load on the skin: force (x, y tangential, z normal) and torque about the sensor normal."""

    f: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    tau_z: float = 0.0

    def __add__(self, other: "AppliedWrench") -> "AppliedWrench":
        return AppliedWrench(tuple(a + b for a, b in zip(self.f, other.f)), self.tau_z + other.tau_z)  # type: ignore

    def scaled(self, k: float) -> "AppliedWrench":
        return AppliedWrench((k * self.f[0], k * self.f[1], k * self.f[2]), k * self.tau_z)

    def to_dict(self) -> Dict[str, object]:
        return {"f": list(self.f), "tau_z": self.tau_z}


ZERO_WRENCH = AppliedWrench()


@dataclass(frozen=True)
class SkinModel:
    """
    Linear skin response.

    A marker at lever arm r moves by c_shear * (f_x, f_y) + c_rot * tau_z * perp(r) and its size scales by
    (1 + c_normal * f_z). Positions get Gaussian noise with standard deviation noise_sigma.
    """

    c_shear: float = 1.0
    c_rot: float = 1e-3
    c_normal: float = 0.05
    stiction_threshold: float = 0.0
    noise_sigma: float = 0.1
    max_force: float = 20.0
    max_torque: float = 100.0

    def __post_init__(self):
        if min(self.c_shear, self.c_rot, self.c_normal) <= 0:
            raise SimError("Skin compliances must be positive")
        if self.noise_sigma < 0 or self.stiction_threshold < 0:
            raise SimError("Noise and stiction threshold must be non-negative")

    def for_material(self, material: str) -> "SkinModel":
        """
        Return the skin response when pressing an object of the named material.

        :param material: key of MATERIALS
        :return: SkinModel with scaled compliances
        :raise SimError: for unknown materials
        """
        if material not in MATERIALS:
            raise SimError(f"Unknown material '{material}', expected one of {sorted(MATERIALS)}")
        shear, normal = MATERIALS[material]
        return replace(self, c_shear=self.c_shear * shear, c_normal=self.c_normal * normal)

    def check(self, wrench: AppliedWrench):
        """
        :raise SaturationError: if the wrench leaves the linear range
        """
        values = list(wrench.f) + [wrench.tau_z]
        if not all(math.isfinite(v) for v in values):
            raise SaturationError(f"Non-finite wrench {wrench}")
        if max(abs(v) for v in wrench.f) > self.max_force:
            raise SaturationError(f"Force {wrench.f} exceeds the saturation limit {self.max_force}")
        if abs(wrench.tau_z) > self.max_torque:
            raise SaturationError(f"Torque {wrench.tau_z} exceeds the saturation limit {self.max_torque}")
        if 1.0 + self.c_normal * wrench.f[2] <= 0:
            raise SaturationError(f"Normal force {wrench.f[2]} collapses the markers")


@functools.lru_cache(maxsize=8)
def _pixel_grid(width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = np.mgrid[0:height, 0:width].astype(float)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


@functools.lru_cache(maxsize=32)
def _texture_table(seed: int) -> np.ndarray:
    table = seeded_rng(seed).integers(TEXTURE_LOW, TEXTURE_HIGH + 1, size=(TEXTURE_PERIOD, TEXTURE_PERIOD))
    table = table.astype(np.uint8)
    table.setflags(write=False)
    return table


@dataclass(frozen=True)
class SceneObject:
    """
    Object seen through the skin: a textured rectangle or disk at pose (x, y, theta).

    Sizes are in pixels; theta rotates the object's long axis from +x towards +y. Rasterization is half-open,
    so an axis-aligned w x h rectangle at an integer center covers exactly w * h pixels.
    """

    shape: str = "rect"
    width: float = 20.0
    height: float = 10.0
    pose: Tuple[float, float, float] = (160.0, 120.0, 0.0)
    mass_proxy: float = 1.0
    friction: float = 0.5
    texture_seed: int = 0

    def __post_init__(self):
        if self.shape not in ("rect", "disk"):
            raise SimError(f"Unknown object shape '{self.shape}'")
        if self.width <= 0 or self.height <= 0:
            raise SimError("Object dimensions must be positive")
        if not 0.0 <= self.friction <= 2.0:
            raise SimError(f"Friction {self.friction} outside [0, 2]")

    def at(self, x: float, y: float, theta: Optional[float] = None) -> "SceneObject":
        return replace(self, pose=(x, y, self.pose[2] if theta is None else theta))

    def _local_coordinates(self, geometry: SensorGeometry) -> Tuple[np.ndarray, np.ndarray]:
        x, y, theta = self.pose
        rows, cols = _pixel_grid(geometry.image_width, geometry.image_height)
        px, py = cols - x, rows - y
        c, s = math.cos(theta), math.sin(theta)
        return px * c + py * s, -px * s + py * c

    def _inside(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.shape == "disk":
            radius = self.width / 2.0
            return u * u + v * v < radius * radius
        half_w, half_h = self.width / 2.0, self.height / 2.0
        return (u >= -half_w) & (u < half_w) & (v >= -half_h) & (v < half_h)

    def silhouette(self, geometry: SensorGeometry) -> np.ndarray:
        return self._inside(*self._local_coordinates(geometry))

    def render(self, geometry: SensorGeometry) -> Tuple[np.ndarray, np.ndarray]:
        """
        :return: (mask, texture) where texture holds the object's intensity at every pixel
        """
        u, v = self._local_coordinates(geometry)
        mask = self._inside(u, v)
        table = _texture_table(self.texture_seed)
        iu = np.floor(u).astype(np.int64) % TEXTURE_PERIOD
        iv = np.floor(v).astype(np.int64) % TEXTURE_PERIOD
        return mask, table[iv, iu]


@dataclass(frozen=True)
class PlantState:
    """End effector and gripper. Positions in mm, rotation in radians."""

    ee_position: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    ee_rotation: float = 0.0
    gripper_opening: float = 60.0
    contact: bool = False
    gripper_command: Optional[float] = None
    max_opening: float = DEFAULT_MAX_OPENING

    def __post_init__(self):
        if not 0.0 <= self.gripper_opening <= self.max_opening:
            raise PlantError(f"Gripper opening {self.gripper_opening} outside [0, {self.max_opening}]")

    @property
    def commanded_opening(self) -> float:
        return self.gripper_opening if self.gripper_command is None else self.gripper_command

    def to_dict(self) -> Dict[str, object]:
        return {
            "ee_position": list(self.ee_position),
            "ee_rotation": self.ee_rotation,
            "gripper_opening": self.gripper_opening,
            "contact": self.contact,
        }


@dataclass(frozen=True)
class SensorFrame:
    index: int
    image: np.ndarray
    mask: np.ndarray


class Scene:
    """
    Base scenario: an unloaded sensor with nothing in view.

    Subclasses provide the wrench, the object in view and the ground truth for frame t given the plant state,
    and update their own hidden state in advance() once the plant has moved.
    """

    name = "rest"
    n_frames = 0

    def __init__(self, geometry: SensorGeometry, skin: SkinModel, rng: np.random.Generator):
        self.geometry = geometry
        self.skin = skin
        self.rng = rng

    def initial_plant(self) -> PlantState:
        return PlantState()

    def wrench(self, t: int, plant: PlantState) -> AppliedWrench:
        return ZERO_WRENCH

    def scene_object(self, t: int, plant: PlantState) -> Optional[SceneObject]:
        return None

    def min_opening(self, plant: PlantState) -> float:
        return 0.0

    def contact(self, plant: PlantState) -> bool:
        return False

    def advance(self, t: int, plant: PlantState):
        pass

    def truth(self, t: int, plant: PlantState) -> Dict[str, object]:
        return {}

    def observe(self, t: int, plant: PlantState, rest: bool = False) -> SensorFrame:
        """
        Render frame t. With rest=True the skin is unloaded but the object is drawn as usual.
        """
        wrench = ZERO_WRENCH if rest else self.wrench(t, plant)
        markers = deform_markers(self.geometry, self.skin, wrench, self.rng)
        return render_frame(self.geometry, markers, self.scene_object(t, plant), index=t)


def marker_response(
    geometry: SensorGeometry, skin: SkinModel, wrench: AppliedWrench, rng: Optional[np.random.Generator] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized skin response.

    :return: (positions, sizes) with shapes (N, 2) and (N,)
    :raise SaturationError: if the wrench leaves the linear range
    """
    skin.check(wrench)
    if geometry.n_markers == 0:
        return np.zeros((0, 2)), np.zeros(0)
    rest = geometry.rest_positions
    arms = geometry.lever_arms
    perp = np.stack([-arms[:, 1], arms[:, 0]], axis=1)
    shift = skin.c_shear * np.array(wrench.f[:2]) + skin.c_rot * wrench.tau_z * perp
    positions = rest + shift
    if skin.noise_sigma > 0:
        if rng is None:
            raise SimError("A random stream is required when noise_sigma > 0")
        positions = positions + rng.normal(0.0, skin.noise_sigma, size=positions.shape)
    sizes = np.full(geometry.n_markers, geometry.nominal_size * (1.0 + skin.c_normal * wrench.f[2]))
    return positions, sizes


def deform_markers(
    geometry: SensorGeometry, skin: SkinModel, wrench: AppliedWrench, rng: Optional[np.random.Generator] = None
) -> List[MarkerObservation]:
    """
    Marker observations under an applied wrench.

    :param geometry: sensor geometry
    :param skin: skin model
    :param wrench: applied wrench, within the saturation limits
    :param rng: random stream for the position noise (required when skin.noise_sigma > 0)
    :return: one observation per marker
    :raise SaturationError: if the wrench leaves the linear range
    """
    positions, sizes = marker_response(geometry, skin, wrench, rng)
    return [
        MarkerObservation(marker_id=i, x=float(positions[i, 0]), y=float(positions[i, 1]), s=float(sizes[i]))
        for i in range(geometry.n_markers)
    ]


def render_frame(
    geometry: SensorGeometry,
    markers: Sequence[MarkerObservation],
    scene_object: Optional[SceneObject] = None,
    index: int = 0,
) -> SensorFrame:
    """
    Draw dark marker disks over a light background and the object's texture, plus the silhouette channel.

    :param geometry: sensor geometry
    :param markers: observations to draw; invalid ones are skipped
    :param scene_object: object in view, if any
    :param index: frame index
    :return: SensorFrame with a uint8 image and a boolean mask
    """
    image = np.full((geometry.image_height, geometry.image_width), BACKGROUND_INTENSITY, dtype=np.uint8)
    mask = np.zeros(image.shape, dtype=bool)
    if scene_object is not None:
        mask, texture = scene_object.render(geometry)
        image[mask] = texture[mask]

    for marker in markers:
        if not marker.valid:
            continue
        radius = math.sqrt(marker.s / math.pi)
        r0 = max(int(math.floor(marker.y - radius)), 0)
        r1 = min(int(math.ceil(marker.y + radius)) + 1, geometry.image_height)
        c0 = max(int(math.floor(marker.x - radius)), 0)
        c1 = min(int(math.ceil(marker.x + radius)) + 1, geometry.image_width)
        if r0 >= r1 or c0 >= c1:
            continue
        rows, cols = np.mgrid[r0:r1, c0:c1]
        disk = (cols - marker.x) ** 2 + (rows - marker.y) ** 2 <= radius * radius
        image[r0:r1, c0:c1][disk] = MARKER_INTENSITY
    return SensorFrame(index=index, image=image, mask=mask)


def step_plant(
    state: PlantState, cmd: SkillCommand, scenario: Optional[Scene] = None, dt: float = 1.0 / 15.0
) -> PlantState:
    """
    Euler-integrate the velocity commands over one frame and move the gripper to its target.

    :param state: current plant state
    :param cmd: controller command
    :param scenario: scene supplying the gripper stop and the contact ground truth
    :param dt: frame period in seconds
    :return: next plant state
    :raise PlantError: on non-finite commands
    """
    if not cmd.is_finite():
        log.error(f"Rejecting non-finite command {cmd}")
        raise PlantError(f"Non-finite command {cmd}")

    position = tuple(p + v * dt for p, v in zip(state.ee_position, cmd.ee_velocity))
    rotation = state.ee_rotation + cmd.ee_rot_velocity * dt
    command = state.gripper_command if cmd.gripper_target is None else cmd.gripper_target
    moved = replace(state, ee_position=position, ee_rotation=rotation, gripper_command=command)  # type: ignore
    if command is not None:
        low = scenario.min_opening(moved) if scenario is not None else 0.0
        moved = replace(moved, gripper_opening=clamp(command, max(low, 0.0), state.max_opening))
    if scenario is not None:
        moved = replace(moved, contact=scenario.contact(moved))
    return moved
