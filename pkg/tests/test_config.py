from pathlib import Path

import pytest

from modules import config
from modules.harness import Rig
from modules.skills import ForceTrackConfig, SkillSettings

CONFIG_FILE = Path(__file__).resolve().parent.parent / "config.ini"


@pytest.fixture
def configuration():
    return config.get_configuration(str(CONFIG_FILE))


def test_shipped_configuration_matches_the_defaults(configuration):
    rig = Rig.from_configuration(configuration)
    assert rig.geometry.n_markers == 37
    assert rig.kalman.q == 0.01
    assert rig.kalman.dt == pytest.approx(1.0 / 15.0)
    assert rig.skin.max_force == 20.0
    assert rig.skills.force_track == ForceTrackConfig()
    assert rig.skills.object_track.image_center == (160.0, 120.0)
    assert rig.skills.vis_scan.area_floor == 32000.0
    assert rig.learn.pooling == "mean_std"
    assert rig.learn.krr_cv
    assert rig.learn.mlp_restarts == 3
    assert rig.output_directory == "runs"


def test_missing_file():
    with pytest.raises(config.ConfigException):
        config.get_configuration("no-such-file.ini")


def test_missing_section(tmp_path):
    path = tmp_path / "broken.ini"
    path.write_text(CONFIG_FILE.read_text().replace("[percept]", "[perception]"))
    with pytest.raises(config.ConfigException, match="percept"):
        config.get_configuration(str(path))


def test_missing_key(tmp_path):
    path = tmp_path / "broken.ini"
    path.write_text(CONFIG_FILE.read_text().replace("z_gain = 10", "z_gain ="))
    with pytest.raises(config.ConfigException, match="z_gain"):
        config.get_configuration(str(path))


def test_bad_values_name_the_section(tmp_path):
    path = tmp_path / "broken.ini"
    path.write_text(CONFIG_FILE.read_text().replace("eps = 0.2", "eps = -1"))
    with pytest.raises(config.ConfigException, match="force_track"):
        Rig.from_configuration(config.get_configuration(str(path)))

    path.write_text(CONFIG_FILE.read_text().replace("ring_counts = 6,12,18", "ring_counts = six"))
    with pytest.raises(config.ConfigException, match="ring_counts"):
        Rig.from_configuration(config.get_configuration(str(path)))

    path.write_text(CONFIG_FILE.read_text().replace("speed_ctrl = yes", "speed_ctrl = maybe"))
    with pytest.raises(config.ConfigException, match="speed_ctrl"):
        Rig.from_configuration(config.get_configuration(str(path)))


def test_load_document_reports_the_line():
    with pytest.raises(config.ConfigException, match="line 3"):
        config.load_document("seed: 1\nskill: run\n  bad: [\n", "run.yaml")


def test_load_document_shapes():
    assert config.load_document("") == {}
    assert config.load_document('{"seed": 3}') == {"seed": 3}
    with pytest.raises(config.ConfigException):
        config.load_document("- 1\n- 2\n")


def test_overrides_replace_single_fields():
    settings = config.apply_overrides(SkillSettings(), {"force_track": {"eps": 0.3}, "press": {"target": "1e-1"}})
    assert settings.force_track.eps == 0.3
    assert settings.force_track.f_max == 3.1
    assert settings.press.target == 0.1


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"juggle": {"speed": 1}}, "juggle"),
        ({"force_track": {"gain": 1}}, "force_track.gain"),
        ({"force_track": 3}, "mapping"),
        ({"force_track": {"eps": -1.0}}, "force_track"),
        ({"press": {"target": "lots"}}, "press.target"),
    ],
)
def test_bad_overrides(overrides, message):
    with pytest.raises(config.ConfigException, match=message):
        config.apply_overrides(SkillSettings(), overrides)
