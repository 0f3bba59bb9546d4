"""
Frame-synchronous plumbing: sensor frames go through the marker tracker and the percept extractors, and a
SimStream closes the loop between a scene, the pipeline and the plant.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

from modules.core import SensorGeometry, SkillCommand
from modules.percept import (
    NO_SLIP,
    ForceEstimate,
    ObjectPercept,
    PerceptConfig,
    SlipSignal,
    TorqueEstimate,
    force_from_field,
    object_moments,
    slip_estimate,
    torque_from_field,
)
from modules.sim import PlantState, Scene, SensorFrame, step_plant
from modules.tracking import BlobParams, DisplacementField, KalmanConfig, MarkerTracker, RawDisplacement

DEFAULT_SETTLE_FRAMES = 30

log = logging.getLogger()


@dataclass(frozen=True)
class PerceptBundle:
    """All percepts of one frame."""

    frame: int
    force: ForceEstimate
    torque: TorqueEstimate
    object: ObjectPercept
    slip: SlipSignal
    field: DisplacementField
    raw: RawDisplacement

    def to_dict(self) -> Dict[str, object]:
        return {
            "force": list(self.force.f),
            "torque": self.torque.tau_z,
            "object": self.object.to_dict(),
            "slip": {"flow_magnitude": self.slip.flow_magnitude, "active": self.slip.active},
            "raw": [self.raw.dx, self.raw.dy, self.raw.dz],
            "filtered": list(self.field.mean_displacement()),
            "stale": int(self.field.stale.sum()),
        }


class SensorPipeline:
    """
    Marker tracker plus percept extractors for one sensor.

    Slip estimation compares each frame with the previous one over the object region seen in both.
    """

    def __init__(
        self,
        geometry: SensorGeometry,
        kalman: KalmanConfig = KalmanConfig(),
        percept: PerceptConfig = PerceptConfig(),
        blob: BlobParams = BlobParams(),
        slip_enabled: bool = False,
    ):
        self.geometry = geometry
        self.kalman = kalman
        self.percept = percept
        self.slip_enabled = slip_enabled
        self.tracker = MarkerTracker(geometry, kalman, blob)
        self._previous: Optional[SensorFrame] = None

    @property
    def last_frame(self) -> Optional[SensorFrame]:
        return self._previous

    def process(self, frame: SensorFrame) -> PerceptBundle:
        """
        :param frame: next sensor frame
        :return: this frame's percepts
        :raise PerceptError: if no marker is tracked
        """
        field = self.tracker.process_image(frame.image)
        force = force_from_field(field, self.percept.z_gain)
        torque = torque_from_field(field, self.geometry)
        obj = object_moments(frame.mask)
        slip = NO_SLIP
        if self.slip_enabled and self._previous is not None:
            cfg = self.percept
            slip = slip_estimate(
                self._previous.image,
                frame.image,
                self._previous.mask & frame.mask,
                threshold=cfg.slip_threshold,
                block=cfg.slip_block,
                search=cfg.slip_search,
                min_coverage=cfg.slip_coverage,
                dark_threshold=cfg.dark_threshold,
            )
        self._previous = frame
        return PerceptBundle(
            frame=field.frame,
            force=force,
            torque=torque,
            object=obj,
            slip=slip,
            field=field,
            raw=self.tracker.raw,
        )


class SimStream:
    """
    Closed loop over a scene.

    On construction the tracker calibrates on unloaded frames and then settles on the scene's initial load. The plant
    starts from `plant` when given (the end state of a previous phase), from the scene's initial plant otherwise. After
    that every episode frame is one observe() followed by one apply(); frames are recorded in order as
    {frame, inputs, command, state, truth}.
    """

    def __init__(
        self,
        scene: Scene,
        pipeline: SensorPipeline,
        settle_frames: int = DEFAULT_SETTLE_FRAMES,
        plant: Optional[PlantState] = None,
    ):
        self.scene = scene
        self.pipeline = pipeline
        self.plant: PlantState = scene.initial_plant() if plant is None else plant
        self.t = 0
        self.records: List[Dict[str, object]] = []
        self.current: Optional[PerceptBundle] = None
        self._calibrate(settle_frames)

    @property
    def dt(self) -> float:
        return self.pipeline.kalman.dt

    @property
    def done(self) -> bool:
        return self.t >= self.scene.n_frames

    def _calibrate(self, settle_frames: int):
        for _ in range(self.pipeline.kalman.calibration_frames):
            self.pipeline.process(self.scene.observe(0, self.plant, rest=True))
        for _ in range(settle_frames):
            self.pipeline.process(self.scene.observe(0, self.plant))
        log.debug(f"Scene {self.scene.name}: tracker calibrated, {self.pipeline.tracker.pd_repairs} PD repairs")

    def observe(self) -> PerceptBundle:
        self.current = self.pipeline.process(self.scene.observe(self.t, self.plant))
        return self.current

    def apply(self, command: SkillCommand, state: Optional[Dict[str, object]] = None) -> PlantState:
        """
        Record this frame and move the plant.

        :param command: skill output for the frame just observed
        :param state: skill-internal state to log
        :return: new plant state
        :raise PlantError: on non-finite commands
        """
        if self.current is None:
            raise RuntimeError("apply() called before observe()")
        self.records.append(
            {
                "frame": self.t,
                "inputs": self.current.to_dict(),
                "command": command.to_dict(),
                "state": {"plant": self.plant.to_dict(), **(state or {})},
                "truth": self.scene.truth(self.t, self.plant),
            }
        )
        self.plant = step_plant(self.plant, command, self.scene, self.dt)
        self.scene.advance(self.t, self.plant)
        self.t += 1
        self.current = None
        return self.plant
