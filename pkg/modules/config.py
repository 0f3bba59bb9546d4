"""
Handle configuration file.
"""
import configparser
import dataclasses
import logging
from typing import Any, Dict, Optional

import yaml

from modules.core import SensorGeometry, build_geometry
from modules.learn import LearnConfig, LearnError
from modules.percept import PerceptConfig
from modules.sim import SimError, SkinModel
from modules.skills import (
    ArmRotConfig,
    DescendConfig,
    ForceTrackConfig,
    GentleGraspConfig,
    HandoverConfig,
    HoldConfig,
    InHandRotConfig,
    LeakyConfig,
    ObjectTrackConfig,
    PressConfig,
    SkillError,
    SkillSettings,
    VisScanConfig,
)
from modules.tracking import BlobParams, KalmanConfig, TrackingError

DEFAULT_CONFIG_FILE = "config.ini"
REQUIRED_CONFIG_STRUCT = {
    "geometry": ["image_width", "image_height", "ring_counts", "ring_spacing", "marker_radius", "frame_rate_hz"],
    "skin": ["c_shear", "c_rot", "c_normal", "noise_sigma", "max_force", "max_torque"],
    "tracking": ["q", "r", "calibration_frames", "blob_threshold", "blob_min_area", "blob_max_area", "settle_frames"],
    "percept": ["z_gain", "slip_threshold", "slip_block", "slip_search", "slip_coverage"],
    "force_track": ["f_min", "f_max", "v_min", "v_max", "eps", "speed_ctrl"],
    "object_track": ["delta", "x_max", "y_max", "xbar_eps", "ybar_eps", "area_eps", "mm_per_px"],
    "leaky": ["leak_alpha"],
    "skills": [
        "arm_rot_gain",
        "arm_rot_eps",
        "handover_threshold",
        "in_hand_eps",
        "scan_area_floor",
        "scan_speed",
        "scan_limit",
        "grasp_target",
        "hold_increment",
        "descend_speed",
        "descend_threshold",
        "press_target",
        "press_gain",
        "press_tolerance",
    ],
    "learn": ["krr_gamma", "krr_lambda", "mlp_epochs", "mlp_lr", "mlp_batch_size", "pooling"],
    "output": ["directory"],
}

log = logging.getLogger()


class ConfigException(Exception):
    """Generic configuration exception."""

    ...


def _load_configuration(config_file: str) -> configparser.ConfigParser:
    """
    Read the configuration file and return an initialized ConfigParser object.

    :param config_file: path to configuration file.
    :return: ConfigParser object.
    """
    log.info(f"Loading configuration from {config_file}")
    config = configparser.ConfigParser()
    if not config.read(config_file):
        log.error(f"Configuration file {config_file} not found")
        raise ConfigException(f"Cannot read {config_file}")
    _validate_configuration(config)
    return config


def _validate_configuration(config: configparser.ConfigParser):
    """
    Assert the configuration file contains REQUIRED_CONFIG_STRUCT.

    :param config: initialized ConfigParser object.
    :raise ConfigException: on validation failure.
    """
    for section in REQUIRED_CONFIG_STRUCT:
        if section not in config:
            log.error(f"Missing required section '{section}' in configuration file.")
            raise ConfigException(f"Section '{section}' missing")

    for section in REQUIRED_CONFIG_STRUCT:
        for key in REQUIRED_CONFIG_STRUCT[section]:
            if not config[section].get(key):
                log.error(f"Missing required key '{key}' in section '{section}' in configuration file.")
                raise ConfigException(f"Key '{key}' missing in section '{section}'")


def get_configuration(from_file: str = DEFAULT_CONFIG_FILE) -> configparser.ConfigParser:
    """
    Return configuration loaded from target file.

    :param from_file: configuration file to read
    :return: ConfigParser object
    """
    return _load_configuration(from_file)


def _number(config: configparser.ConfigParser, section: str, key: str, kind=float):
    try:
        return kind(config[section][key])
    except (KeyError, ValueError) as e:
        log.error(f"Bad value for '{key}' in section '{section}': {e}")
        raise ConfigException(f"Key '{key}' in section '{section}' must be a {kind.__name__}")


def _flag(config: configparser.ConfigParser, section: str, key: str) -> bool:
    try:
        return config.getboolean(section, key)
    except ValueError:
        raise ConfigException(f"Key '{key}' in section '{section}' must be a boolean")


def _build(factory, section: str, **values):
    # Dataclass validation errors become configuration errors naming the section
    try:
        return factory(**values)
    except (SkillError, SimError, TrackingError, LearnError, ValueError) as e:
        log.error(f"Invalid values in section '{section}': {e}")
        raise ConfigException(f"Section '{section}': {e}")


def get_geometry(config: configparser.ConfigParser) -> SensorGeometry:
    """
    Build the marker layout described in the geometry section.

    :param config: initialized ConfigParser object
    :return: SensorGeometry
    """
    try:
        rings = tuple(int(v) for v in config["geometry"]["ring_counts"].split(","))
    except ValueError:
        raise ConfigException("Key 'ring_counts' in section 'geometry' must be a comma separated list of integers")
    return _build(
        build_geometry,
        "geometry",
        image_width=_number(config, "geometry", "image_width", int),
        image_height=_number(config, "geometry", "image_height", int),
        ring_counts=rings,
        ring_spacing=_number(config, "geometry", "ring_spacing"),
        nominal_marker_radius=_number(config, "geometry", "marker_radius"),
        frame_rate_hz=_number(config, "geometry", "frame_rate_hz"),
    )


def get_skin_model(config: configparser.ConfigParser) -> SkinModel:
    keys = REQUIRED_CONFIG_STRUCT["skin"]
    return _build(SkinModel, "skin", **{key: _number(config, "skin", key) for key in keys})


def get_kalman_config(config: configparser.ConfigParser) -> KalmanConfig:
    """
    The filter period follows the camera frame rate of the geometry section.
    """
    return _build(
        KalmanConfig,
        "tracking",
        q=_number(config, "tracking", "q"),
        r=_number(config, "tracking", "r"),
        dt=1.0 / _number(config, "geometry", "frame_rate_hz"),
        calibration_frames=_number(config, "tracking", "calibration_frames", int),
    )


def get_blob_params(config: configparser.ConfigParser) -> BlobParams:
    return BlobParams(
        threshold=_number(config, "tracking", "blob_threshold"),
        min_area=_number(config, "tracking", "blob_min_area"),
        max_area=_number(config, "tracking", "blob_max_area"),
    )


def get_settle_frames(config: configparser.ConfigParser) -> int:
    return _number(config, "tracking", "settle_frames", int)


def get_percept_config(config: configparser.ConfigParser) -> PerceptConfig:
    return PerceptConfig(
        z_gain=_number(config, "percept", "z_gain"),
        slip_threshold=_number(config, "percept", "slip_threshold"),
        slip_block=_number(config, "percept", "slip_block", int),
        slip_search=_number(config, "percept", "slip_search", int),
        slip_coverage=_number(config, "percept", "slip_coverage"),
        dark_threshold=_number(config, "tracking", "blob_threshold"),
    )


def get_force_track_config(config: configparser.ConfigParser) -> ForceTrackConfig:
    values: Dict[str, Any] = {key: _number(config, "force_track", key) for key in ("f_min", "f_max", "v_min", "v_max")}
    return _build(
        ForceTrackConfig,
        "force_track",
        eps=_number(config, "force_track", "eps"),
        speed_ctrl=_flag(config, "force_track", "speed_ctrl"),
        **values,
    )


def get_object_track_config(
    config: configparser.ConfigParser, geometry: Optional[SensorGeometry] = None
) -> ObjectTrackConfig:
    """
    :param config: initialized ConfigParser object
    :param geometry: sensor geometry providing the image center and frame period
    :return: ObjectTrackConfig
    """
    geometry = geometry or get_geometry(config)
    keys = REQUIRED_CONFIG_STRUCT["object_track"]
    return _build(
        ObjectTrackConfig,
        "object_track",
        image_center=geometry.image_center,
        dt=geometry.dt,
        **{key: _number(config, "object_track", key) for key in keys},
    )


def get_leaky_config(config: configparser.ConfigParser) -> LeakyConfig:
    return _build(LeakyConfig, "leaky", leak_alpha=_number(config, "leaky", "leak_alpha"))


def get_skill_config(config: configparser.ConfigParser, geometry: Optional[SensorGeometry] = None) -> SkillSettings:
    """
    Collect every skill's parameters.

    :param config: initialized ConfigParser object
    :param geometry: sensor geometry, read from the configuration when missing
    :return: SkillSettings
    """

    def skill(key: str) -> float:
        return _number(config, "skills", key)

    return SkillSettings(
        force_track=get_force_track_config(config),
        object_track=get_object_track_config(config, geometry),
        arm_rot=ArmRotConfig(k_tau=skill("arm_rot_gain"), eps_tau=skill("arm_rot_eps")),
        handover=HandoverConfig(
            force_threshold=skill("handover_threshold"), leak_alpha=get_leaky_config(config).leak_alpha
        ),
        in_hand_rot=InHandRotConfig(eps_tau=skill("in_hand_eps")),
        vis_scan=VisScanConfig(
            area_floor=skill("scan_area_floor"), speed=skill("scan_speed"), limit=skill("scan_limit")
        ),
        gentle_grasp=GentleGraspConfig(target=skill("grasp_target")),
        hold=HoldConfig(increment=skill("hold_increment")),
        descend=DescendConfig(speed=skill("descend_speed"), threshold=skill("descend_threshold")),
        press=PressConfig(target=skill("press_target"), gain=skill("press_gain"), tolerance=skill("press_tolerance")),
    )


def get_learn_config(config: configparser.ConfigParser) -> LearnConfig:
    learn = config["learn"]
    restarts = _number(config, "learn", "mlp_restarts", int) if learn.get("mlp_restarts") else LearnConfig.mlp_restarts
    return _build(
        LearnConfig,
        "learn",
        krr_gamma=_number(config, "learn", "krr_gamma"),
        krr_lambda=_number(config, "learn", "krr_lambda"),
        krr_cv=_flag(config, "learn", "krr_cv") if learn.get("krr_cv") else LearnConfig.krr_cv,
        mlp_epochs=_number(config, "learn", "mlp_epochs", int),
        mlp_lr=_number(config, "learn", "mlp_lr"),
        mlp_batch_size=_number(config, "learn", "mlp_batch_size", int),
        mlp_restarts=restarts,
        pooling=learn["pooling"],
    )


def get_output_directory(config: configparser.ConfigParser) -> str:
    """
    Retrieve the directory runs are written to.

    :param config: initialized ConfigParser object
    :return: user-specified path
    """
    return config["output"]["directory"]


def load_document(text: str, source: str = "<string>") -> Dict[str, Any]:
    """
    Parse a JSON or YAML override document.

    :param text: document text
    :param source: file name used in error messages
    :return: top-level mapping
    :raise ConfigException: on syntax errors (with the line number) or a non-mapping document
    """
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark is not None else "?"
        log.error(f"Syntax error in {source} at line {line}: {e.problem}")
        raise ConfigException(f"{source}, line {line}: {e.problem}")
    except yaml.YAMLError as e:
        raise ConfigException(f"{source}: {e}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigException(f"{source}: expected a mapping at the top level")
    return data


def load_document_file(filepath: str) -> Dict[str, Any]:
    try:
        with open(filepath) as fd:
            return load_document(fd.read(), filepath)
    except OSError as e:
        raise ConfigException(f"Cannot read {filepath}: {e}")


def apply_overrides(settings: SkillSettings, overrides: Dict[str, Dict[str, Any]]) -> SkillSettings:
    """
    Replace individual skill parameters, e.g. {"force_track": {"eps": 0.3}}.

    :raise ConfigException: naming the first unknown skill or field
    """
    for skill, values in overrides.items():
        if not hasattr(settings, skill):
            raise ConfigException(f"Unknown skill '{skill}' in overrides")
        if not isinstance(values, dict):
            raise ConfigException(f"Overrides for '{skill}' must be a mapping")
        current = getattr(settings, skill)
        known = {f.name: f for f in dataclasses.fields(current)}
        updated = dict(current.__dict__)
        for key, value in values.items():
            if key not in known:
                raise ConfigException(f"Unknown field '{skill}.{key}'")
            # YAML reads "1e-05" as a string
            if isinstance(value, str) and known[key].type in (float, "float"):
                try:
                    value = float(value)
                except ValueError:
                    raise ConfigException(f"Field '{skill}.{key}' must be a number")
            updated[key] = value
        settings = dataclasses.replace(settings, **{skill: _build(current.__class__, skill, **updated)})
    return settings
