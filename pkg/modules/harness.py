"""
Scenario runner, dataset and model plumbing, the scripted assembly and plot-data views.

Exit codes: 0 success, 1 skill failure or stall, 2 usage or configuration error, 3 internal error.
"""
import configparser
import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter1d

from modules import config
from modules.core import ZERO_COMMAND, SensorGeometry, default_geometry, seeded_rng
from modules.datasets import Dataset, class_labels, dataset_to_csv, gen_press_dataset, gen_stir_dataset
from modules.learn import (
    KrrModel,
    LearnConfig,
    LearnError,
    MlpModel,
    krr_cv,
    krr_fit,
    krr_predict,
    mlp_train,
    rmse,
)
from modules.logs import (
    csv_text,
    episode_header,
    episode_log_text,
    make_directory,
    pgm_bytes,
    read_episode_log,
    tracking_csv,
    write_json,
    write_text,
    write_to_disk,
)
from modules.metrics import ClassReport, mlp_eval
from modules.percept import PerceptConfig
from modules.pipeline import DEFAULT_SETTLE_FRAMES, SensorPipeline, SimStream
from modules.scenarios import GentleGraspScene, PlateLoadScene, build_scene, scene_names
from modules.sim import PlantState, SimError, SkinModel
from modules.skills import (
    FAILED,
    SUCCESS,
    ArmRot,
    DescendUntilContact,
    EpisodeResult,
    FollowMe,
    GentleGrasp,
    Handover,
    HoldRegrip,
    Idle,
    InHandRot,
    Place,
    PressToForce,
    Skill,
    SkillError,
    SkillSettings,
    VisScan,
    followme_statistics,
    run_episode,
)
from modules.tracking import BlobParams, KalmanConfig

EXIT_SUCCESS = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3

SKILLS = (
    "force-track",
    "object-track",
    "arm-rot",
    "handover",
    "in-hand-rot",
    "in-hand-rot-slip",
    "vis-scan",
    "gentle-grasp",
    "hold",
    "descend",
    "press",
    "none",
)
DEFAULT_SKILLS = {
    "followme": "force-track",
    "arm-rot": "arm-rot",
    "in-hand-rot": "in-hand-rot",
    "handover": "handover",
    "gentle-grasp": "gentle-grasp",
    "hold": "hold",
    "vis-scan": "vis-scan",
    "descend": "descend",
    "press": "press",
}
SLIP_SKILLS = ("handover", "hold", "in-hand-rot-slip")
ARM_ROT_EXPECTED = math.pi / 2
PROBE_WINDOW = 5
PLACE_FRACTION = 0.95
ASSEMBLY_PHASES = ("locate", "vis_scan", "gentle_grasp", "arm_rot", "descend", "load_probe", "place")
ASSEMBLY_VARIANTS = ("default", "no-object", "stuck-column")
RUN_CONFIG_FIELDS = ("scenario", "seed", "skill", "overrides", "scene_params", "output", "frames", "model", "verbose")

log = logging.getLogger()


class HarnessError(Exception):
    """Generic harness exception."""

    ...


class ProbeError(Exception):
    """Load probing failed; `reason` is machine readable."""

    def __init__(self, reason: str, message: Optional[str] = None):
        super().__init__(message or reason)
        self.reason = reason


@dataclass(frozen=True)
class Rig:
    """Everything a run needs besides the scenario: sensor, skin, tracker, percepts and skill parameters."""

    geometry: SensorGeometry = field(default_factory=default_geometry)
    skin: SkinModel = SkinModel()
    kalman: KalmanConfig = KalmanConfig()
    percept: PerceptConfig = PerceptConfig()
    blob: BlobParams = BlobParams()
    settle_frames: int = DEFAULT_SETTLE_FRAMES
    skills: SkillSettings = SkillSettings()
    learn: LearnConfig = LearnConfig()
    output_directory: str = "runs"

    @classmethod
    def from_configuration(cls, configuration: configparser.ConfigParser) -> "Rig":
        geometry = config.get_geometry(configuration)
        return cls(
            geometry=geometry,
            skin=config.get_skin_model(configuration),
            kalman=config.get_kalman_config(configuration),
            percept=config.get_percept_config(configuration),
            blob=config.get_blob_params(configuration),
            settle_frames=config.get_settle_frames(configuration),
            skills=config.get_skill_config(configuration, geometry),
            learn=config.get_learn_config(configuration),
            output_directory=config.get_output_directory(configuration),
        )

    def pipeline(self, slip: bool = False) -> SensorPipeline:
        return SensorPipeline(self.geometry, self.kalman, self.percept, self.blob, slip_enabled=slip)

    def stream(
        self,
        scenario: str,
        rng: np.random.Generator,
        slip: bool = False,
        plant: Optional[PlantState] = None,
        **params,
    ) -> SimStream:
        """
        :param plant: start state, the scene's initial plant by default
        :raise SimError: for unknown scenarios or parameters
        """
        scene = build_scene(scenario, self.geometry, self.skin, rng, **params)
        return SimStream(scene, self.pipeline(slip), self.settle_frames, plant)


def default_skill(scenario: str) -> str:
    for prefix, skill in DEFAULT_SKILLS.items():
        if scenario.startswith(prefix):
            return skill
    return "none"


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    seed: int
    skill: Optional[str] = None
    overrides: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    scene_params: Dict[str, Any] = field(default_factory=dict)
    output: Optional[str] = None
    frames: Optional[int] = None
    model: Optional[str] = None
    verbose: bool = False

    def __post_init__(self):
        if self.scenario not in scene_names():
            raise config.ConfigException(f"Field 'scenario': unknown scenario '{self.scenario}'")
        if self.skill is not None and self.skill not in SKILLS:
            raise config.ConfigException(f"Field 'skill': unknown skill '{self.skill}', expected one of {SKILLS}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise config.ConfigException(f"Field 'seed': expected a non-negative integer, got {self.seed!r}")
        if self.frames is not None and self.frames < 1:
            raise config.ConfigException(f"Field 'frames': expected a positive integer, got {self.frames}")

    @property
    def skill_name(self) -> str:
        return self.skill or default_skill(self.scenario)

    @classmethod
    def from_mapping(cls, data: Dict[str, Any]) -> "RunConfig":
        """
        :raise ConfigException: naming the first unknown, missing or malformed field
        """
        unknown = sorted(set(data) - set(RUN_CONFIG_FIELDS))
        if unknown:
            raise config.ConfigException(f"Unknown field '{unknown[0]}'")
        for required in ("scenario", "seed"):
            if required not in data:
                raise config.ConfigException(f"Field '{required}' is required")
        for mapping in ("overrides", "scene_params"):
            if not isinstance(data.get(mapping, {}), dict):
                raise config.ConfigException(f"Field '{mapping}' must be a mapping")
        return cls(**data)


def load_run_config(filepath: str) -> RunConfig:
    return RunConfig.from_mapping(config.load_document_file(filepath))


@dataclass
class RunOutcome:
    config: RunConfig
    result: EpisodeResult
    exit_code: int
    log_text: str
    records: List[Dict[str, Any]]


def exit_code_for(result: EpisodeResult) -> int:
    return EXIT_SUCCESS if result.success else EXIT_FAILURE


def load_model(filepath: str):
    """
    :return: KrrModel or MlpModel, by the document's schema
    :raise HarnessError: if the file cannot be read or holds no model
    """
    try:
        with open(filepath) as fd:
            data = json.loads(fd.read())
    except (OSError, json.JSONDecodeError) as e:
        raise HarnessError(f"Cannot load model {filepath}: {e}")
    try:
        if data.get("schema") == "krr-model":
            return KrrModel.from_dict(data)
        return MlpModel.from_dict(data)
    except (LearnError, KeyError, TypeError) as e:
        raise HarnessError(f"Malformed model {filepath}: {e}")


def build_skill(
    name: str, stream: SimStream, settings: SkillSettings, model: Optional[KrrModel] = None
) -> Tuple[Skill, Optional[int]]:
    """
    :return: (skill, frame budget or None for the scene length)
    :raise HarnessError: for unknown skills or a press run without a model
    """
    scene = stream.scene
    if name in ("force-track", "object-track"):
        axis = getattr(scene, "axis", "x")
        object_cfg = settings.object_track
        if axis in ("x", "y"):
            object_cfg = dataclasses.replace(object_cfg, axis=axis)
        return FollowMe(axis, getattr(scene, "sign", 1.0), name, settings.force_track, object_cfg), None
    if name == "arm-rot":
        expected = ARM_ROT_EXPECTED if scene.name.startswith("arm-rot") else None
        return ArmRot(settings.arm_rot, expected), settings.arm_rot.max_frames
    if name == "handover":
        return Handover(settings.handover), None
    if name in ("in-hand-rot", "in-hand-rot-slip"):
        mode = "slip" if name.endswith("slip") else "torque"
        cfg = dataclasses.replace(settings.in_hand_rot, mode=mode)
        return InHandRot(cfg), cfg.max_frames
    if name == "vis-scan":
        cfg = settings.vis_scan
        budget = int(math.ceil(cfg.limit / (cfg.speed * stream.dt))) + cfg.below_frames + 1
        return VisScan(cfg), budget
    if name == "gentle-grasp":
        return GentleGrasp(settings.gentle_grasp), settings.gentle_grasp.max_frames
    if name == "hold":
        return HoldRegrip(settings.hold), None
    if name == "descend":
        return DescendUntilContact(settings.descend), settings.descend.max_frames
    if name == "press":
        if not isinstance(model, KrrModel):
            raise HarnessError("The press skill needs a force regression model (--model)")
        return PressToForce(model, settings.press), settings.press.max_frames
    if name == "none":
        return Idle(), None
    raise HarnessError(f"Unknown skill '{name}', expected one of {SKILLS}")


def _episode(stream: SimStream, skill: Skill, budget: Optional[int]) -> EpisodeResult:
    try:
        result = run_episode(stream, skill, budget)
    except SkillError as e:
        log.warning(f"{skill.name} aborted: {e.reason}")
        result = EpisodeResult(skill.name, FAILED, len(stream.records), [e.reason])
    if isinstance(skill, FollowMe) and stream.records and "applied_force" in stream.records[0]["truth"]:
        result.measurements.update(followme_statistics(stream.records, skill.axis))
    return result


def run_scenario(cfg: RunConfig, rig: Rig = Rig()) -> RunOutcome:
    """
    Run one skill on one scenario in the frame-synchronous loop.

    With cfg.output set, writes <scenario>-<skill>-seed<seed>.jsonl and the matching -tracking.csv there.

    :param cfg: run configuration
    :param rig: sensor and skill parameters
    :return: RunOutcome with the episode result, exit code and JSONL log
    :raise ConfigException: for bad overrides
    :raise HarnessError: for bad skill/scenario combinations
    """
    skill_name = cfg.skill_name
    settings = config.apply_overrides(rig.skills, cfg.overrides)
    model = load_model(cfg.model) if cfg.model else None
    rng = seeded_rng(cfg.seed)
    try:
        stream = rig.stream(cfg.scenario, rng, slip=skill_name in SLIP_SKILLS, **cfg.scene_params)
    except SimError as e:
        raise HarnessError(str(e))
    skill, budget = build_skill(skill_name, stream, settings, model)
    log.info(f"Running {skill_name} on {cfg.scenario} (seed {cfg.seed})")
    result = _episode(stream, skill, cfg.frames or budget)

    header = episode_header(
        cfg.scenario, cfg.seed, skill_name, overrides=cfg.overrides, scene_params=cfg.scene_params
    )
    text = episode_log_text(header, stream.records, result.to_dict())
    if cfg.output:
        make_directory(cfg.output)
        stem = os.path.join(cfg.output, f"{cfg.scenario}-{skill_name}-seed{cfg.seed}")
        write_text(f"{stem}.jsonl", text)
        write_text(f"{stem}-tracking.csv", tracking_csv(stream.pipeline.tracker.rows))
        log.info(f"Episode log written to {stem}.jsonl")
    return RunOutcome(cfg, result, exit_code_for(result), text, stream.records)


def simulate(
    rig: Rig, scenario: str, seed: int, frames: Optional[int] = None, output: Optional[str] = None, pgm: bool = False
) -> List[Dict[str, Any]]:
    """
    Run a scenario without a skill and record the percept stream.

    With `output`, writes <scenario>-percepts.jsonl, <scenario>-tracking.csv and, with `pgm`, every frame as
    <scenario>-<frame>.pgm.

    :return: stream records
    """
    stream = rig.stream(scenario, seeded_rng(seed), slip=True)
    total = frames or stream.scene.n_frames
    if output:
        make_directory(output)
    for _ in range(total):
        stream.observe()
        if output and pgm:
            frame = stream.pipeline.last_frame
            if frame is not None:
                write_to_disk(os.path.join(output, f"{scenario}-{stream.t:05d}.pgm"), pgm_bytes(frame.image))
        stream.apply(ZERO_COMMAND)
    if output:
        header = episode_header(scenario, seed, "none")
        text = episode_log_text(header, stream.records, {"frames": total})
        write_text(os.path.join(output, f"{scenario}-percepts.jsonl"), text)
        write_text(os.path.join(output, f"{scenario}-tracking.csv"), tracking_csv(stream.pipeline.tracker.rows))
    log.info(f"Simulated {total} frames of {scenario}")
    return stream.records


def probe_max_load(positions: Sequence[float], readings: Sequence[float], window: int = PROBE_WINDOW) -> float:
    """
    Position of the highest moving-average load.

    :param positions: probe positions along the span, increasing
    :param readings: normal-force channel at each position
    :param window: moving-average length
    :return: argmax position; ties go to the sample nearest the span midpoint
    :raise ProbeError: no_unique_maximum for a flat profile, too_few_samples below one window
    """
    positions = np.asarray(positions, dtype=float)
    readings = np.asarray(readings, dtype=float)
    if positions.size != readings.size:
        raise ProbeError("bad_input", f"{positions.size} positions but {readings.size} readings")
    if readings.size < window or window < 1:
        raise ProbeError("too_few_samples", f"Need at least {window} samples, got {readings.size}")
    smoothed = uniform_filter1d(readings, size=window, mode="nearest")
    peak = float(smoothed.max())
    scale = max(1.0, abs(peak))
    if float(np.ptp(smoothed)) <= 1e-12 * scale:
        log.error("Load profile is flat")
        raise ProbeError("no_unique_maximum", "Flat load profile has no unique maximum")
    candidates = np.flatnonzero(smoothed >= peak - 1e-12 * scale)
    midpoint = 0.5 * (positions[0] + positions[-1])
    best = candidates[np.argmin(np.abs(positions[candidates] - midpoint))]
    return float(positions[best])


@dataclass
class PhaseReport:
    """One assembly phase; start_plant is the previous phase's end_plant."""

    name: str
    status: str
    frames: int
    flags: List[str] = field(default_factory=list)
    start_plant: PlantState = field(default_factory=PlantState)
    end_plant: PlantState = field(default_factory=PlantState)
    measurements: Dict[str, Any] = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.status == SUCCESS

    def to_dict(self) -> Dict[str, Any]:
        return {
            "phase": self.name,
            "status": self.status,
            "frames": self.frames,
            "flags": list(self.flags),
            "start_plant": self.start_plant.to_dict(),
            "end_plant": self.end_plant.to_dict(),
            "measurements": dict(self.measurements),
        }


@dataclass
class AssemblyReport:
    variant: str
    seed: int
    phases: List[PhaseReport] = field(default_factory=list)
    log_text: str = ""

    @property
    def success(self) -> bool:
        return len(self.phases) == len(ASSEMBLY_PHASES) and all(p.success for p in self.phases)

    @property
    def failed_phase(self) -> Optional[str]:
        return next((p.name for p in self.phases if not p.success), None)

    def phase(self, name: str) -> PhaseReport:
        for report in self.phases:
            if report.name == name:
                return report
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "success": self.success,
            "failed_phase": self.failed_phase,
            "phases": [p.to_dict() for p in self.phases],
        }


class _AssemblyLog:
    """Collects every phase's frames into one log with frame indices 0..N-1."""

    def __init__(self):
        self.records: List[Dict[str, Any]] = []

    def extend(self, phase: str, records: Sequence[Dict[str, Any]]):
        for record in records:
            self.records.append({**record, "frame": len(self.records), "phase": phase, "phase_frame": record["frame"]})


def _phase_from_result(name: str, result: EpisodeResult, start: PlantState, end: PlantState) -> PhaseReport:
    return PhaseReport(name, result.status, result.frames, list(result.flags), start, end, dict(result.measurements))


def run_assembly(rig: Rig = Rig(), seed: int = 0, variant: str = "default") -> AssemblyReport:
    """
    Scripted assembly: locate a plate, scan it, grasp a column, rotate it upright, lower it until contact, probe the
    plate for its highest load point and place the column there.

    Phases run strictly in order, each on its own scene, and every phase starts from the plant state the previous
    one ended in; once grasped, the column keeps the fingers at its width. The load probe sweeps the plate span and
    the place phase carries the column to the chosen load point before opening. The first failing phase ends the
    run. A possible_stall flag from the rotation is reported but does not stop the script.

    :param rig: sensor and skill parameters
    :param seed: seed of the single random stream shared by all phases
    :param variant: default, no-object (nothing on the table) or stuck-column (the column jams while rotating)
    :return: AssemblyReport with the combined JSONL log
    :raise HarnessError: for unknown variants
    """
    if variant not in ASSEMBLY_VARIANTS:
        raise HarnessError(f"Unknown assembly variant '{variant}', expected one of {ASSEMBLY_VARIANTS}")
    rng = seeded_rng(seed)
    settings = rig.skills
    report = AssemblyReport(variant, seed)
    assembly_log = _AssemblyLog()

    def finish() -> AssemblyReport:
        header = episode_header(
            "assembly",
            seed,
            "assembly",
            variant=variant,
            area_floor=settings.vis_scan.area_floor,
            grasp_target=settings.gentle_grasp.target,
            arm_rot_eps=settings.arm_rot.eps_tau,
            descend_threshold=settings.descend.threshold,
            probe_window=PROBE_WINDOW,
        )
        report.log_text = episode_log_text(header, assembly_log.records, report.to_dict())
        status = "succeeded" if report.success else f"failed at {report.failed_phase}"
        log.info(f"Assembly ({variant}, seed {seed}) {status}")
        return report

    # locate and vis_scan share the plate scene
    scan_stream = rig.stream("vis-scan" if variant != "no-object" else "vis-scan-empty", rng)
    plant = scan_stream.plant
    bundle = scan_stream.observe()
    scan_stream.apply(ZERO_COMMAND)
    assembly_log.extend("locate", scan_stream.records)
    if not bundle.object.present:
        report.phases.append(PhaseReport("locate", FAILED, 1, ["nothing_to_scan"], plant, scan_stream.plant))
        return finish()
    report.phases.append(
        PhaseReport(
            "locate",
            SUCCESS,
            1,
            [],
            plant,
            scan_stream.plant,
            {"centroid": list(bundle.object.centroid), "area": bundle.object.area},
        )
    )

    plant = scan_stream.plant
    start = len(scan_stream.records)
    scan_result = _episode(scan_stream, *build_skill("vis-scan", scan_stream, settings))
    assembly_log.extend("vis_scan", scan_stream.records[start:])
    report.phases.append(_phase_from_result("vis_scan", scan_result, plant, scan_stream.plant))
    if not scan_result.success:
        return finish()
    plant = scan_stream.plant

    # from the grasp on, the fingers cannot close past the column
    grip: Dict[str, Any] = {}
    phases: List[Tuple[str, str, str]] = [
        ("gentle_grasp", "gentle-grasp", "gentle-grasp"),
        ("arm_rot", "arm-rot-stuck" if variant == "stuck-column" else "arm-rot", "arm-rot"),
        ("descend", "descend", "descend"),
    ]
    for phase, scenario, skill_name in phases:
        stream = rig.stream(scenario, rng, plant=plant, **grip)
        result = _episode(stream, *build_skill(skill_name, stream, settings))
        assembly_log.extend(phase, stream.records)
        report.phases.append(_phase_from_result(phase, result, plant, stream.plant))
        if not result.success:
            return finish()
        plant = stream.plant
        if isinstance(stream.scene, GentleGraspScene) and stream.scene.object_width:
            grip = {"grip_width": stream.scene.object_width}

    plate = build_scene("plate-load", rig.geometry, rig.skin, rng)
    assert isinstance(plate, PlateLoadScene)
    positions, readings = plate.probe_stream()
    # sweep from the span end nearer to the end effector
    order = list(range(len(positions)))
    if plant.ee_position[0] > plate.span / 2.0:
        order.reverse()
    probe_start = plant
    samples = []
    for frame, k in enumerate(order):
        x = plate.ee_x(float(positions[k]))
        plant = dataclasses.replace(plant, ee_position=(x, plant.ee_position[1], plant.ee_position[2]))
        samples.append(
            {
                "frame": frame,
                "inputs": {"position": float(positions[k]), "reading": float(readings[k])},
                "state": {"plant": plant.to_dict()},
            }
        )
    assembly_log.extend("load_probe", samples)
    try:
        chosen = probe_max_load(positions, readings)
    except ProbeError as e:
        report.phases.append(PhaseReport("load_probe", FAILED, len(positions), [e.reason], probe_start, plant))
        return finish()
    within = abs(chosen - plate.true_peak) <= plate.step + 1e-12
    report.phases.append(
        PhaseReport(
            "load_probe",
            SUCCESS if within else FAILED,
            len(positions),
            [] if within else ["off_peak"],
            probe_start,
            plant,
            {"load_point": chosen, "true_peak": plate.true_peak, "target_x": plate.ee_x(chosen)},
        )
    )
    if not within:
        return finish()

    held = {"object_width": grip["grip_width"]} if grip else {}
    place_stream = rig.stream("hold", rng, plant=plant, **held)
    place = Place(plate.ee_x(chosen), leak_alpha=settings.handover.leak_alpha)
    placed = _episode(place_stream, place, None)
    assembly_log.extend("place", place_stream.records)
    placed_x = place_stream.plant.ee_position[0]
    load_ratio = plate.load(plate.position_at(placed_x)) / plate.load(plate.true_peak)
    success = placed.success and load_ratio >= PLACE_FRACTION
    report.phases.append(
        PhaseReport(
            "place",
            SUCCESS if success else FAILED,
            placed.frames,
            list(placed.flags) + ([] if load_ratio >= PLACE_FRACTION else ["low_load_point"]),
            plant,
            place_stream.plant,
            {"load_ratio": load_ratio, **placed.measurements},
        )
    )
    return finish()


def replay_predicates(header: Dict[str, Any], records: Sequence[Dict[str, Any]]) -> Dict[str, bool]:
    """
    Re-check every assembly phase's success predicate from the logged frames alone.

    :param header: assembly log header
    :param records: assembly log frames
    :return: phase -> predicate held (phases missing from the log are absent)
    """
    by_phase: Dict[str, List[Dict[str, Any]]] = {}
    for record in records:
        by_phase.setdefault(record["phase"], []).append(record)
    checks: Dict[str, bool] = {}

    def inputs(phase: str) -> List[Dict[str, Any]]:
        return [r["inputs"] for r in by_phase.get(phase, [])]

    if "locate" in by_phase:
        checks["locate"] = any(i["object"]["present"] for i in inputs("locate"))
    if "vis_scan" in by_phase:
        areas = [i["object"]["area"] for i in inputs("vis_scan")]
        floor = header["area_floor"]
        checks["vis_scan"] = any(a >= floor for a in areas) and all(a < floor for a in areas[-3:])
    if "gentle_grasp" in by_phase:
        last = inputs("gentle_grasp")[-1]
        checks["gentle_grasp"] = math.sqrt(sum(v * v for v in last["force"])) >= header["grasp_target"]
    if "arm_rot" in by_phase:
        checks["arm_rot"] = all(abs(i["torque"]) <= header["arm_rot_eps"] for i in inputs("arm_rot")[-3:])
    if "descend" in by_phase:
        checks["descend"] = all(i["force"][2] > header["descend_threshold"] for i in inputs("descend")[-3:])
    if "load_probe" in by_phase:
        samples = sorted(inputs("load_probe"), key=lambda s: s["position"])
        try:
            probe_max_load([s["position"] for s in samples], [s["reading"] for s in samples], header["probe_window"])
            checks["load_probe"] = True
        except ProbeError:
            checks["load_probe"] = False
    if "place" in by_phase:
        checks["place"] = "released" in by_phase["place"][-1]["command"]["flags"]
    return checks


def _plot_rows(records: Sequence[Dict[str, Any]], row: Callable[[Dict[str, Any]], List[Any]]) -> List[List[Any]]:
    return [row(r) for r in records]


def _vector(value: Any, index: int) -> Any:
    return value[index] if isinstance(value, (list, tuple)) and len(value) > index else ""


PLOT_VIEWS: Dict[str, Tuple[Tuple[str, ...], Callable[[Dict[str, Any]], List[Any]]]] = {
    "kalman": (
        ("frame", "raw_x", "filt_x", "raw_y", "filt_y", "raw_s", "filt_s"),
        lambda r: [
            r["frame"],
            _vector(r["inputs"].get("raw"), 0),
            _vector(r["inputs"].get("filtered"), 0),
            _vector(r["inputs"].get("raw"), 1),
            _vector(r["inputs"].get("filtered"), 1),
            _vector(r["inputs"].get("raw"), 2),
            _vector(r["inputs"].get("filtered"), 2),
        ],
    ),
    "follow": (
        ("frame", "human_force", "applied_force", "command_x", "command_y", "command_z", "offset", "active"),
        lambda r: [
            r["frame"],
            r["truth"].get("human_force", ""),
            r["truth"].get("applied_force", ""),
            *(_vector(r["command"]["ee_velocity"], k) for k in range(3)),
            r["truth"].get("offset", ""),
            int(bool(r["truth"].get("active", False))),
        ],
    ),
    "handover": (
        ("frame", "force_norm", "force_active", "slip_flow", "slip_active", "closing", "gripper_opening"),
        lambda r: [
            r["frame"],
            math.sqrt(sum(v * v for v in r["inputs"]["force"])),
            int(bool(r["state"].get("force_on", False))),
            r["inputs"]["slip"]["flow_magnitude"],
            int(bool(r["inputs"]["slip"]["active"])),
            int("closing" in r["command"]["flags"]),
            r["state"]["plant"]["gripper_opening"],
        ],
    ),
    "torque": (
        ("frame", "torque", "angle_deg", "gravity_torque", "gripper_opening"),
        lambda r: [
            r["frame"],
            r["inputs"]["torque"],
            r["truth"].get("angle_deg", ""),
            r["truth"].get("gravity_torque", ""),
            r["state"]["plant"]["gripper_opening"],
        ],
    ),
    "forcelearn": (
        ("frame", "measured", "predicted"),
        lambda r: [r["frame"], r["truth"].get("normal_force", ""), r["state"].get("predicted_force", "")],
    ),
}


def emit_plotdata(records: Sequence[Dict[str, Any]], view: str) -> str:
    """
    Project an episode log onto one plot view.

    :param records: episode log frames
    :param view: one of PLOT_VIEWS
    :return: CSV text; header only for an empty log
    :raise HarnessError: for unknown views, listing the available ones
    """
    if view not in PLOT_VIEWS:
        raise HarnessError(f"Unknown view '{view}', available: {', '.join(sorted(PLOT_VIEWS))}")
    columns, row = PLOT_VIEWS[view]
    try:
        return csv_text(columns, _plot_rows(records, row))
    except (KeyError, TypeError) as e:
        raise HarnessError(f"Log has no data for view '{view}': missing {e}")


def generate_dataset(rig: Rig, kind: str, seed: int, material: str = "wood") -> Dataset:
    """
    :param kind: press or stir
    :raise HarnessError: for unknown kinds
    """
    rng = seeded_rng(seed)
    if kind == "press":
        return gen_press_dataset(
            rig.geometry, rig.skin, rng, material, kalman=rig.kalman, percept=rig.percept, blob=rig.blob
        )
    if kind == "stir":
        return gen_stir_dataset(rig.geometry, rig.skin, rng, pooling=rig.learn.pooling)
    raise HarnessError(f"Unknown dataset kind '{kind}', expected press or stir")


def write_dataset(dataset: Dataset, filepath: str):
    write_text(filepath, dataset_to_csv(dataset))
    log.info(f"Dataset {dataset.name} ({dataset.X.shape[0]} rows) written to {filepath}")


def train_model(rig: Rig, dataset: Dataset, seed: int):
    """
    Fit the model matching the dataset: KRR for press datasets, with (gamma, lambda) picked by episode-grouped
    cross-validation unless `krr_cv` is off, and the MLP for stirring.

    :return: (model, training summary)
    """
    cfg = rig.learn
    if dataset.classes:
        labels = class_labels(dataset)
        model, losses = mlp_train(
            dataset.X_train,
            labels[dataset.train],
            seeded_rng(seed),
            classes=dataset.classes,
            epochs=cfg.mlp_epochs,
            lr=cfg.mlp_lr,
            batch_size=cfg.mlp_batch_size,
            restarts=cfg.mlp_restarts,
        )
        return model, {"kind": "mlp", "final_loss": losses[-1], "epochs": len(losses)}
    gamma, lam = cfg.krr_gamma, cfg.krr_lambda
    if cfg.krr_cv:
        gamma, lam, _ = krr_cv(dataset.X_train, dataset.y_train, groups=dataset.groups[dataset.train])
    try:
        model = krr_fit(dataset.X_train, dataset.y_train, lam, gamma)
    except LearnError as e:
        if not cfg.krr_cv:
            raise
        log.warning(f"Cross-validated fit failed ({e}), falling back to gamma={cfg.krr_gamma} lambda={cfg.krr_lambda}")
        gamma, lam = cfg.krr_gamma, cfg.krr_lambda
        model = krr_fit(dataset.X_train, dataset.y_train, lam, gamma)
    return model, {"kind": "krr", "gamma": gamma, "lambda": lam}


def evaluate_model(model, dataset: Dataset) -> Dict[str, Any]:
    """
    Score a model on the dataset's test split.

    :return: class report (MLP) or RMSE and force range (KRR) as a JSON-ready mapping
    """
    if isinstance(model, MlpModel):
        report: ClassReport = mlp_eval(model, dataset.X_test, class_labels(dataset, model.classes)[~dataset.train])
        return {"kind": "mlp", "report": report.to_dict(), "table": report.to_text()}
    predicted = krr_predict(model, dataset.X_test)
    error = rmse(predicted, dataset.y_test)
    return {"kind": "krr", "rmse": error, "force_range": dataset.force_range, "relative": error / dataset.force_range}


def save_model(model, filepath: str):
    write_json(filepath, model.to_dict())


def read_log_records(filepath: str) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    header, records, _ = read_episode_log(filepath)
    return header, records
