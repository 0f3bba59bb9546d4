"""
Percepts built from the displacement field and the silhouette channel: force, torque, object and slip.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from modules.core import SensorGeometry
from modules.tracking import DisplacementField

log = logging.getLogger()


class PerceptError(Exception):
    """Generic percept exception."""

    ...


@dataclass(frozen=True)
class PerceptConfig:
    z_gain: float = 10.0
    slip_threshold: float = 0.5
    slip_block: int = 8
    slip_search: int = 4
    slip_coverage: float = 0.5
    dark_threshold: float = 96.0


@dataclass(frozen=True)
class ForceEstimate:
    """Mean marker displacement (px) and scaled mean size growth; proportional to force, not in Newtons."""

    f: Tuple[float, float, float]

    @property
    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.f))

    def scaled(self, k: float) -> "ForceEstimate":
        return ForceEstimate((k * self.f[0], k * self.f[1], k * self.f[2]))


@dataclass(frozen=True)
class TorqueEstimate:
    tau_z: float


@dataclass(frozen=True)
class ObjectPercept:
    present: bool
    centroid: Tuple[float, float] = (0.0, 0.0)
    area: int = 0
    orientation: float = 0.0
    degenerate_orientation: bool = False

    def to_dict(self) -> Dict[str, object]:
        return {
            "present": self.present,
            "centroid": list(self.centroid),
            "area": self.area,
            "orientation": self.orientation,
            "degenerate_orientation": self.degenerate_orientation,
        }


ABSENT_OBJECT = ObjectPercept(present=False)


@dataclass(frozen=True)
class SlipSignal:
    flow_magnitude: float
    active: bool
    blocks: int = 0


NO_SLIP = SlipSignal(0.0, False, 0)


def force_from_field(field: DisplacementField, z_gain: float = 10.0) -> ForceEstimate:
    """
    Average the fresh markers' displacement.

    :param field: displacement field
    :param z_gain: gain applied to the mean size growth (s_t / s_0 - 1)
    :return: ForceEstimate (mean dx, mean dy, z_gain * mean growth)
    :raise PerceptError: if no marker is tracked
    """
    fresh = field.fresh
    if not fresh.any():
        raise PerceptError("No tracked markers in the displacement field")
    return ForceEstimate(
        (
            float(field.dx[fresh].mean()),
            float(field.dy[fresh].mean()),
            float(z_gain * (field.ratio[fresh] - 1.0).mean()),
        )
    )


def torque_from_field(field: DisplacementField, geometry: SensorGeometry) -> TorqueEstimate:
    """
    Mean z-component of r_i x d_i, with r_i the rest position relative to the layout centroid.

    :raise PerceptError: with fewer than 3 fresh markers
    """
    fresh = field.fresh
    if int(fresh.sum()) < 3:
        raise PerceptError(f"Torque needs at least 3 tracked markers, got {int(fresh.sum())}")
    arms = geometry.lever_arms[field.marker_ids[fresh]]
    cross = arms[:, 0] * field.dy[fresh] - arms[:, 1] * field.dx[fresh]
    return TorqueEstimate(float(cross.mean()))


def object_moments(mask: np.ndarray) -> ObjectPercept:
    """
    Area, centroid and orientation of a binary silhouette from its image moments.

    Raw moments are exact integer sums; the orientation is 0.5 * atan2(2 mu11, mu20 - mu02), reported as 0 with
    the degenerate flag when mu11 = 0 and mu20 = mu02.

    :param mask: boolean silhouette
    :return: ObjectPercept, present=False for an empty mask
    """
    ys, xs = np.nonzero(mask)
    m00 = int(xs.size)
    if m00 == 0:
        return ABSENT_OBJECT
    xs = xs.astype(np.int64)
    ys = ys.astype(np.int64)
    m10, m01 = int(xs.sum()), int(ys.sum())
    m20, m02, m11 = int((xs * xs).sum()), int((ys * ys).sum()), int((xs * ys).sum())
    # Central moments scaled by m00**2, still exact integers
    mu20 = m00 * m20 - m10 * m10
    mu02 = m00 * m02 - m01 * m01
    mu11 = m00 * m11 - m10 * m01
    degenerate = mu11 == 0 and mu20 == mu02
    theta = 0.0 if degenerate else 0.5 * math.atan2(2 * mu11, mu20 - mu02)
    return ObjectPercept(
        present=True,
        centroid=(m10 / m00, m01 / m00),
        area=m00,
        orientation=theta,
        degenerate_orientation=degenerate,
    )


def _block_grid(indices: np.ndarray, block: int, size: int) -> Tuple[int, int]:
    start = (int(indices.min()) // block) * block
    stop = min((int(indices.max()) // block + 1) * block, (size // block) * block)
    return start, stop


def slip_estimate(
    prev_frame: np.ndarray,
    cur_frame: np.ndarray,
    mask: np.ndarray,
    threshold: float = 0.5,
    block: int = 8,
    search: int = 4,
    min_coverage: float = 0.5,
    dark_threshold: float = 96.0,
) -> SlipSignal:
    """
    Block-matching flow over the object region.

    Blocks of `block` x `block` pixels on an image-aligned grid whose mask coverage reaches `min_coverage` are
    matched against the current frame over +-`search` pixels with the mean absolute difference. Marker pixels
    (darker than `dark_threshold`) are left out of the comparison. Ties prefer the smaller shift.

    :param prev_frame: previous grayscale frame
    :param cur_frame: current grayscale frame
    :param mask: object region in the previous frame
    :param threshold: activity threshold, px/frame
    :return: SlipSignal with the mean best-match displacement norm
    :raise PerceptError: if the inputs differ in shape
    """
    prev = np.asarray(prev_frame, dtype=float)
    cur = np.asarray(cur_frame, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if prev.shape != cur.shape or mask.shape != prev.shape:
        raise PerceptError(f"Frame shapes differ: {prev.shape}, {cur.shape}, mask {mask.shape}")
    if not mask.any():
        return NO_SLIP

    height, width = prev.shape
    rows, cols = np.nonzero(mask)
    r0, r1 = _block_grid(rows, block, height)
    c0, c1 = _block_grid(cols, block, width)
    if r1 <= r0 or c1 <= c0:
        return NO_SLIP
    nby, nbx = (r1 - r0) // block, (c1 - c0) // block

    def block_sum(values: np.ndarray) -> np.ndarray:
        return values.reshape(nby, block, nbx, block).sum(axis=(1, 3))

    region = mask[r0:r1, c0:c1]
    keep = block_sum(region.astype(float)) >= min_coverage * block * block
    if not keep.any():
        return NO_SLIP

    reference = prev[r0:r1, c0:c1]
    reference_valid = region & (reference >= dark_threshold)
    padded = np.full((height + 2 * search, width + 2 * search), np.nan)
    padded[search : search + height, search : search + width] = np.where(cur >= dark_threshold, cur, np.nan)

    shifts = sorted(
        ((dy, dx) for dy in range(-search, search + 1) for dx in range(-search, search + 1)),
        key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]),
    )
    min_pairs = block * block / 4.0
    costs = np.full((len(shifts), nby, nbx), np.inf)
    for k, (dy, dx) in enumerate(shifts):
        window = padded[search + r0 + dy : search + r1 + dy, search + c0 + dx : search + c1 + dx]
        valid = reference_valid & np.isfinite(window)
        difference = np.where(valid, np.abs(window - reference), 0.0)
        counts = block_sum(valid.astype(float))
        sums = block_sum(difference)
        with np.errstate(divide="ignore", invalid="ignore"):
            costs[k] = np.where(counts >= min_pairs, sums / counts, np.inf)

    best = np.argmin(costs, axis=0)
    matched = keep & np.isfinite(costs.min(axis=0))
    if not matched.any():
        return NO_SLIP
    norms = np.array([math.hypot(dy, dx) for dy, dx in shifts])
    magnitude = float(norms[best][matched].mean())
    return SlipSignal(flow_magnitude=magnitude, active=magnitude > threshold, blocks=int(matched.sum()))
