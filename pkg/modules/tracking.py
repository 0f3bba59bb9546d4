"""
Marker tracking: blob detection on sensor frames, greedy marker association and per-marker Kalman filtering.

Each marker keeps a 9-state constant-velocity filter [x0, x, y0, y, s0, s, vx, vy, vs]. The initial components
(x0, y0, s0) average the detections of a short calibration window and are then locked.
"""
import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage as ndi

from modules.core import MarkerObservation, SensorGeometry

STATE_SIZE = 9
INITIAL_COMPONENTS = (0, 2, 4)
CURRENT_COMPONENTS = (1, 3, 5)
VELOCITY_COMPONENTS = (6, 7, 8)
INITIAL_NOISE_SCALE = 1e-6
FOUR_CONNECTIVITY = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
CSV_COLUMNS = ("frame", "marker_id", "raw_x", "raw_y", "raw_s", "filt_x", "filt_y", "filt_s", "missing_flag")

# Measurement models: while calibrating a detection also observes the initial components
H_CALIBRATION = np.zeros((6, STATE_SIZE))
H_CALIBRATION[np.arange(6), np.arange(6)] = 1.0
H_TRACKING = np.zeros((3, STATE_SIZE))
H_TRACKING[np.arange(3), CURRENT_COMPONENTS] = 1.0

log = logging.getLogger()


class TrackingError(Exception):
    """Generic tracking exception."""

    ...


@dataclass(frozen=True)
class BlobParams:
    threshold: float = 96.0
    min_area: float = 4.0
    max_area: float = 400.0


@dataclass(frozen=True)
class KalmanConfig:
    q: float = 0.01
    r: float = 0.1
    dt: float = 1.0 / 15.0
    calibration_frames: int = 15

    def __post_init__(self):
        if self.q <= 0 or self.r <= 0 or self.dt <= 0:
            raise TrackingError(f"Kalman scales must be positive (q={self.q}, r={self.r}, dt={self.dt})")
        if self.calibration_frames < 1:
            raise TrackingError("At least one calibration frame is required")

    @property
    def transition(self) -> np.ndarray:
        a = np.eye(STATE_SIZE)
        for position, velocity in zip(CURRENT_COMPONENTS, VELOCITY_COMPONENTS):
            a[position, velocity] = self.dt
        return a

    @property
    def process_noise(self) -> np.ndarray:
        diagonal = np.full(STATE_SIZE, self.q)
        diagonal[list(INITIAL_COMPONENTS)] = self.q * INITIAL_NOISE_SCALE
        return np.diag(diagonal)


@dataclass(frozen=True)
class MarkerTrack:
    marker_id: int
    mean: np.ndarray
    cov: np.ndarray
    updates: int = 1
    locked: bool = False
    missed: int = 0
    pd_repairs: int = 0
    held: Tuple[float, float, float] = (0.0, 0.0, 1.0)

    @property
    def position(self) -> Tuple[float, float]:
        return float(self.mean[1]), float(self.mean[3])

    @property
    def initial(self) -> Tuple[float, float, float]:
        return float(self.mean[0]), float(self.mean[2]), float(self.mean[4])

    def displacement(self) -> Tuple[float, float, float]:
        """Filtered (x - x0, y - y0, s / s0)."""
        m = self.mean
        return float(m[1] - m[0]), float(m[3] - m[2]), float(m[5] / m[4])


@dataclass(frozen=True)
class DisplacementField:
    """Filtered per-marker displacement (px) and size ratio; stale markers hold their last filtered value."""

    marker_ids: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    ratio: np.ndarray
    stale: np.ndarray
    frame: int = 0

    def __post_init__(self):
        if not (len(self.marker_ids) == len(self.dx) == len(self.dy) == len(self.ratio) == len(self.stale)):
            raise TrackingError("Displacement field arrays differ in length")

    @property
    def fresh(self) -> np.ndarray:
        return ~self.stale

    def mean_displacement(self) -> Tuple[float, float, float]:
        """Mean (dx, dy, ratio - 1) over the fresh markers, zeros when none is fresh."""
        fresh = self.fresh
        if not fresh.any():
            return 0.0, 0.0, 0.0
        return float(self.dx[fresh].mean()), float(self.dy[fresh].mean()), float(self.ratio[fresh].mean() - 1.0)

    def scaled(self, k: float) -> "DisplacementField":
        return replace(self, dx=k * self.dx, dy=k * self.dy, ratio=1.0 + k * (self.ratio - 1.0))

    @classmethod
    def from_arrays(
        cls, dx: Sequence[float], dy: Sequence[float], ratio: Optional[Sequence[float]] = None, frame: int = 0
    ) -> "DisplacementField":
        n = len(dx)
        return cls(
            marker_ids=np.arange(n),
            dx=np.asarray(dx, dtype=float),
            dy=np.asarray(dy, dtype=float),
            ratio=np.ones(n) if ratio is None else np.asarray(ratio, dtype=float),
            stale=np.zeros(n, dtype=bool),
            frame=frame,
        )


def detect_blobs(
    image: np.ndarray, threshold: float = 96.0, min_area: float = 4.0, max_area: float = 400.0
) -> List[Tuple[float, float, float]]:
    """
    Find dark blobs: 4-connected components of pixels darker than `threshold`.

    Centroids are weighted by darkness (threshold - intensity); size is the component's pixel count.

    :param image: grayscale image
    :param threshold: intensity threshold
    :param min_area: smallest accepted component, pixels
    :param max_area: largest accepted component, pixels
    :return: (x, y, size) tuples sorted by row then column
    """
    image = np.asarray(image, dtype=float)
    binary = image < threshold
    labels, count = ndi.label(binary, structure=FOUR_CONNECTIVITY)
    if count == 0:
        return []
    index = np.arange(1, count + 1)
    areas = ndi.sum(binary, labels, index)
    weights = np.where(binary, threshold - image, 0.0)
    centers = ndi.center_of_mass(weights, labels, index)
    blobs = [
        (float(center[1]), float(center[0]), float(area))
        for center, area in zip(centers, areas)
        if min_area <= area <= max_area
    ]
    blobs.sort(key=lambda b: (b[1], b[0]))
    return blobs


def associate(
    predicted: np.ndarray, detections: Sequence[Tuple[float, float, float]], gate: float
) -> List[Optional[int]]:
    """
    Greedy nearest-pair association.

    Pairs closer than `gate` are accepted by ascending distance; ties go to the lower marker id.

    :param predicted: (N, 2) expected marker positions
    :param detections: blobs from detect_blobs
    :param gate: maximum association distance, pixels
    :return: for each marker the index of its detection, or None
    """
    result: List[Optional[int]] = [None] * len(predicted)
    if len(detections) == 0 or len(predicted) == 0:
        return result
    points = np.array([(d[0], d[1]) for d in detections])
    distances = np.linalg.norm(predicted[:, None, :] - points[None, :, :], axis=-1)
    markers, blobs = np.nonzero(distances <= gate)
    order = np.lexsort((blobs, markers, distances[markers, blobs]))
    used = set()
    for k in order:
        m, b = int(markers[k]), int(blobs[k])
        if result[m] is None and b not in used:
            result[m] = b
            used.add(b)
    return result


def new_track(observation: MarkerObservation, config: KalmanConfig) -> MarkerTrack:
    """
    Seed a track from the first valid detection; covariance r * I.
    """
    x, y, s = observation.x, observation.y, observation.s
    mean = np.array([x, x, y, y, s, s, 0.0, 0.0, 0.0])
    return MarkerTrack(
        marker_id=observation.marker_id,
        mean=mean,
        cov=config.r * np.eye(STATE_SIZE),
        locked=config.calibration_frames <= 1,
    )


def _lock_initial_components(cov: np.ndarray) -> np.ndarray:
    locked = cov.copy()
    initial = list(INITIAL_COMPONENTS)
    others = [i for i in range(STATE_SIZE) if i not in INITIAL_COMPONENTS]
    locked[np.ix_(initial, others)] = 0.0
    locked[np.ix_(others, initial)] = 0.0
    return locked


def kf_step(track: MarkerTrack, config: KalmanConfig, measurement: Optional[MarkerObservation]) -> MarkerTrack:
    """
    One predict/update cycle.

    A missing (or invalid) measurement gives a predict-only step. The posterior covariance is re-symmetrized
    and, if it lost positive definiteness, repaired with a diagonal jitter counted in pd_repairs.

    :param track: current track
    :param config: Kalman scales
    :param measurement: this frame's detection or None
    :return: updated track
    """
    a = config.transition
    mean = a @ track.mean
    cov = a @ track.cov @ a.T + config.process_noise
    updates, locked, missed, held = track.updates, track.locked, track.missed, track.held

    if measurement is not None and measurement.valid:
        if locked:
            h = H_TRACKING
            z = np.array([measurement.x, measurement.y, measurement.s])
        else:
            h = H_CALIBRATION
            z = np.array([measurement.x, measurement.x, measurement.y, measurement.y, measurement.s, measurement.s])
        r = config.r * np.eye(len(z))
        s = h @ cov @ h.T + r
        gain = np.linalg.solve(s, h @ cov).T
        mean = mean + gain @ (z - h @ mean)
        correction = np.eye(STATE_SIZE) - gain @ h
        cov = correction @ cov @ correction.T + gain @ r @ gain.T
        updates += 1
        missed = 0
        if not locked and updates >= config.calibration_frames:
            cov = _lock_initial_components(cov)
            locked = True
            log.debug(f"Marker {track.marker_id} calibrated at x0={mean[0]:.3f} y0={mean[2]:.3f} s0={mean[4]:.3f}")
        held = (float(mean[1] - mean[0]), float(mean[3] - mean[2]), float(mean[5] / mean[4]))
    else:
        missed += 1

    cov = 0.5 * (cov + cov.T)
    pd_repairs = track.pd_repairs
    smallest = float(np.linalg.eigvalsh(cov)[0])
    if smallest <= 0.0:
        cov = cov + (abs(smallest) + 1e-12) * np.eye(STATE_SIZE)
        pd_repairs += 1
        log.warning(f"Covariance of marker {track.marker_id} lost positive definiteness ({smallest:.3e}), repaired")

    return MarkerTrack(
        marker_id=track.marker_id,
        mean=mean,
        cov=cov,
        updates=updates,
        locked=locked,
        missed=missed,
        pd_repairs=pd_repairs,
        held=held,
    )


def displacement_field(tracks: Sequence[Optional[MarkerTrack]], frame: int = 0) -> DisplacementField:
    """
    Collect the filtered displacement of every marker.

    Markers without a detection this frame (or never detected) are flagged stale and carry their last value.
    """
    n = len(tracks)
    dx, dy, ratio = np.zeros(n), np.zeros(n), np.ones(n)
    stale = np.ones(n, dtype=bool)
    for i, track in enumerate(tracks):
        if track is None:
            continue
        dx[i], dy[i], ratio[i] = track.held
        stale[i] = track.missed > 0
    return DisplacementField(marker_ids=np.arange(n), dx=dx, dy=dy, ratio=ratio, stale=stale, frame=frame)


@dataclass
class RawDisplacement:
    """Unfiltered mean displacement of the associated blobs (px, px, size ratio - 1)."""

    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    matched: int = 0


class MarkerTracker:
    """
    Filter bank for every marker of a geometry, fed with detections frame by frame.
    """

    def __init__(
        self, geometry: SensorGeometry, config: KalmanConfig = KalmanConfig(), blob: BlobParams = BlobParams()
    ):
        self.geometry = geometry
        self.config = config
        self.blob = blob
        self.gate = 2.0 * geometry.nominal_marker_radius
        self.tracks: List[Optional[MarkerTrack]] = [None] * geometry.n_markers
        self.frame = 0
        self.rows: List[Tuple] = []
        self.raw = RawDisplacement()

    @property
    def calibrated(self) -> bool:
        return all(track is not None and track.locked for track in self.tracks)

    @property
    def pd_repairs(self) -> int:
        return sum(track.pd_repairs for track in self.tracks if track is not None)

    def _expected_positions(self) -> np.ndarray:
        expected = self.geometry.rest_positions.copy()
        for i, track in enumerate(self.tracks):
            if track is not None:
                expected[i] = track.position
        return expected

    def process_image(self, image: np.ndarray) -> DisplacementField:
        return self.step(detect_blobs(image, self.blob.threshold, self.blob.min_area, self.blob.max_area))

    def step(self, detections: Sequence[Tuple[float, float, float]]) -> DisplacementField:
        """
        Associate this frame's detections and advance every filter by one frame.

        :param detections: (x, y, size) blobs
        :return: filtered displacement field of this frame
        """
        assignment = associate(self._expected_positions(), detections, self.gate)
        raw = []
        for marker_id, index in enumerate(assignment):
            track = self.tracks[marker_id]
            observation = None
            if index is not None:
                x, y, size = detections[index]
                observation = MarkerObservation(marker_id=marker_id, x=x, y=y, s=size)
            if track is None:
                if observation is not None:
                    self.tracks[marker_id] = track = new_track(observation, self.config)
            else:
                self.tracks[marker_id] = track = kf_step(track, self.config, observation)

            if track is None:
                self.rows.append((self.frame, marker_id, "", "", "", "", "", "", 1))
                continue
            filt_x, filt_y = track.position
            filt_s = float(track.mean[5])
            if observation is None:
                self.rows.append((self.frame, marker_id, "", "", "", filt_x, filt_y, filt_s, 1))
            else:
                raw_values = (observation.x, observation.y, observation.s)
                self.rows.append((self.frame, marker_id, *raw_values, filt_x, filt_y, filt_s, 0))
                x0, y0, s0 = track.initial
                raw.append((observation.x - x0, observation.y - y0, observation.s / s0 - 1.0))

        if raw:
            values = np.array(raw)
            self.raw = RawDisplacement(*(float(v) for v in values.mean(axis=0)), matched=len(raw))
        else:
            self.raw = RawDisplacement()
        missing = len(assignment) - len(raw)
        if missing:
            log.debug(f"Frame {self.frame}: {missing} markers without detection")
        result = displacement_field(self.tracks, self.frame)
        self.frame += 1
        return result
