"""
Shared domain types: sensor geometry, marker observations, the frame clock, skill commands,
the axis convention and deterministic random streams.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

SCHEMA_VERSION = 1
DEFAULT_FRAME_RATE_HZ = 15.0
DEFAULT_RING_COUNTS = (6, 12, 18)

log = logging.getLogger()


class GeometryError(Exception):
    """Invalid sensor geometry."""

    ...


@dataclass(frozen=True)
class SensorGeometry:
    """
    Camera image size and the nominal marker layout, in pixel coordinates.

    Pixel (column, row) has its center at (x, y) = (column, row); x grows to the right and y grows downwards.
    """

    image_width: int
    image_height: int
    marker_layout: Tuple[Tuple[float, float], ...]
    nominal_marker_radius: float
    frame_rate_hz: float = DEFAULT_FRAME_RATE_HZ

    def __post_init__(self):
        if self.frame_rate_hz <= 0:
            raise GeometryError(f"Frame rate must be positive, got {self.frame_rate_hz}")
        if self.nominal_marker_radius <= 0:
            raise GeometryError(f"Marker radius must be positive, got {self.nominal_marker_radius}")
        margin = 2 * self.nominal_marker_radius
        for marker_id, (x, y) in enumerate(self.marker_layout):
            if not (margin <= x < self.image_width - margin and margin <= y < self.image_height - margin):
                raise GeometryError(f"Marker {marker_id} at ({x}, {y}) is closer than {margin} px to the border")
        if len(self.marker_layout) > 1:
            points = self.rest_positions
            distances = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
            np.fill_diagonal(distances, np.inf)
            if distances.min() <= 4 * self.nominal_marker_radius:
                raise GeometryError(
                    f"Markers are {distances.min():.2f} px apart, need more than {4 * self.nominal_marker_radius}"
                )

    @property
    def n_markers(self) -> int:
        return len(self.marker_layout)

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate_hz

    @property
    def rest_positions(self) -> np.ndarray:
        return np.array(self.marker_layout, dtype=float).reshape(-1, 2)

    @property
    def layout_centroid(self) -> np.ndarray:
        return self.rest_positions.mean(axis=0)

    @property
    def lever_arms(self) -> np.ndarray:
        """Rest position of every marker relative to the layout centroid."""
        return self.rest_positions - self.layout_centroid

    @property
    def nominal_size(self) -> float:
        return math.pi * self.nominal_marker_radius**2

    @property
    def image_center(self) -> Tuple[float, float]:
        return self.image_width / 2.0, self.image_height / 2.0

    def nominal_center(self, marker_id: int) -> Tuple[float, float]:
        if not 0 <= marker_id < self.n_markers:
            raise GeometryError(f"Unknown marker id {marker_id}")
        return self.marker_layout[marker_id]


def build_geometry(
    image_width: int = 320,
    image_height: int = 240,
    ring_counts: Sequence[int] = DEFAULT_RING_COUNTS,
    ring_spacing: float = 30.0,
    nominal_marker_radius: float = 4.0,
    frame_rate_hz: float = DEFAULT_FRAME_RATE_HZ,
    center_marker: bool = True,
) -> SensorGeometry:
    """
    Build a radially symmetric layout: an optional center marker and concentric rings around the image center.

    :param image_width: image width in pixels
    :param image_height: image height in pixels
    :param ring_counts: number of markers on each ring, innermost first
    :param ring_spacing: radial distance between consecutive rings, pixels
    :param nominal_marker_radius: marker radius at rest, pixels
    :param frame_rate_hz: camera frame rate
    :param center_marker: place a marker at the image center
    :return: validated SensorGeometry
    :raise GeometryError: if the layout violates the border or separation constraints
    """
    cx, cy = image_width / 2.0, image_height / 2.0
    layout: List[Tuple[float, float]] = [(cx, cy)] if center_marker else []
    for ring, count in enumerate(ring_counts, start=1):
        radius = ring * ring_spacing
        for k in range(count):
            angle = 2.0 * math.pi * k / count
            layout.append((cx + radius * math.cos(angle), cy + radius * math.sin(angle)))
    return SensorGeometry(image_width, image_height, tuple(layout), nominal_marker_radius, frame_rate_hz)


def default_geometry() -> SensorGeometry:
    return build_geometry()


@dataclass(frozen=True)
class MarkerObservation:
    marker_id: int
    x: float
    y: float
    s: float
    valid: bool = True

    def __post_init__(self):
        if self.valid and self.s <= 0:
            raise GeometryError(f"Marker {self.marker_id} observed with non-positive size {self.s}")

    def inside(self, geometry: SensorGeometry) -> bool:
        return 0 <= self.x < geometry.image_width and 0 <= self.y < geometry.image_height


@dataclass(frozen=True)
class FrameClock:
    t: int = 0
    dt: float = 1.0 / DEFAULT_FRAME_RATE_HZ

    def tick(self) -> "FrameClock":
        return FrameClock(self.t + 1, self.dt)

    @property
    def seconds(self) -> float:
        return self.t * self.dt


@dataclass(frozen=True)
class SkillCommand:
    """
    Per-frame controller output.

    ee_velocity is in mm/s along the sensor axes, ee_rot_velocity in rad/s about the sensor normal and
    gripper_target in mm (None leaves the gripper where it is).
    """

    ee_velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    ee_rot_velocity: float = 0.0
    gripper_target: Optional[float] = None
    flags: Tuple[str, ...] = field(default_factory=tuple)

    def is_finite(self) -> bool:
        values = list(self.ee_velocity) + [self.ee_rot_velocity]
        if self.gripper_target is not None:
            values.append(self.gripper_target)
        return all(math.isfinite(v) for v in values)

    def to_dict(self) -> Dict[str, object]:
        return {
            "ee_velocity": list(self.ee_velocity),
            "ee_rot_velocity": self.ee_rot_velocity,
            "gripper_target": self.gripper_target,
            "flags": list(self.flags),
        }


ZERO_COMMAND = SkillCommand()


@dataclass(frozen=True)
class AxisConvention:
    """
    Map between image-plane measurements and the sensor frame.

    x and y lie in the image plane (x = image column, y = image row); z points from one fingertip to the other
    and is observed through the relative growth of the marker size.
    """

    x: str = "image horizontal (column index, grows rightwards)"
    y: str = "image vertical (row index, grows downwards)"
    z: str = "fingertip-to-fingertip normal (marker size growth)"

    def describe(self, axis: str) -> str:
        if axis not in ("x", "y", "z"):
            raise GeometryError(f"Unknown axis '{axis}'")
        return getattr(self, axis)

    @staticmethod
    def image_to_sensor(dx: float, dy: float, size_ratio: float) -> np.ndarray:
        return np.array([dx, dy, size_ratio - 1.0])

    @staticmethod
    def sensor_to_image(vector: Sequence[float]) -> Tuple[float, float, float]:
        return float(vector[0]), float(vector[1]), float(vector[2]) + 1.0


_AXIS_CONVENTION = AxisConvention()


def axis_convention() -> AxisConvention:
    """
    Return the single coordinate convention every module uses.
    """
    return _AXIS_CONVENTION


def seeded_rng(seed: int) -> np.random.Generator:
    """
    Deterministic random stream: numpy's PCG64 bit generator seeded with `seed`.

    PCG64 output is fixed across platforms and numpy releases, so seeded logs are bit-reproducible.

    :param seed: non-negative integer below 2**64
    :return: numpy Generator
    """
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"Seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def geometry_to_dict(geometry: SensorGeometry) -> Dict[str, object]:
    return {
        "schema": "tactile-geometry",
        "schema_version": SCHEMA_VERSION,
        "image_width": geometry.image_width,
        "image_height": geometry.image_height,
        "marker_layout": [list(p) for p in geometry.marker_layout],
        "nominal_marker_radius": geometry.nominal_marker_radius,
        "frame_rate_hz": geometry.frame_rate_hz,
    }


def geometry_to_json(geometry: SensorGeometry) -> str:
    return json.dumps(geometry_to_dict(geometry), sort_keys=True)


def geometry_from_json(text: str) -> SensorGeometry:
    """
    Parse a geometry document.

    :param text: JSON text as written by geometry_to_json
    :return: SensorGeometry
    :raise GeometryError: on unknown schema version or missing fields
    """
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise GeometryError(f"Malformed geometry document: {e}")
    if not isinstance(data, dict) or data.get("schema_version") != SCHEMA_VERSION:
        raise GeometryError(f"Unsupported geometry schema version: {data.get('schema_version') if data else None}")
    try:
        return SensorGeometry(
            image_width=int(data["image_width"]),
            image_height=int(data["image_height"]),
            marker_layout=tuple((float(x), float(y)) for x, y in data["marker_layout"]),
            nominal_marker_radius=float(data["nominal_marker_radius"]),
            frame_rate_hz=float(data["frame_rate_hz"]),
        )
    except KeyError as e:
        raise GeometryError(f"Geometry document is missing key {e}")
