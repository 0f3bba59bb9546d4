import json
from pathlib import Path

import pytest

import tactile
from modules import harness
from modules.logs import parse_episode_log
from modules.skills import SkillError

CONFIG_FILE = str(Path(__file__).resolve().parent.parent / "config.ini")


def cli(*argv):
    return tactile.run([*argv, "--ini", CONFIG_FILE])


def test_run_succeeds_and_writes_the_log(tmp_path, capsys):
    assert cli("run", "descend", "--seed", "5", "--out", str(tmp_path)) == harness.EXIT_SUCCESS
    assert json.loads(capsys.readouterr().out)["status"] == "success"
    header, _, summary = parse_episode_log((tmp_path / "descend-descend-seed5.jsonl").read_text())
    assert header["seed"] == 5
    assert summary["status"] == "success"


def test_object_track_stalls_on_a_normal_pull():
    assert cli("run", "followme-pull-z", "--skill", "object-track") == harness.EXIT_FAILURE


def test_set_and_param_reach_the_run(tmp_path):
    code = cli(
        "run",
        "descend",
        "--set",
        "descend.max_frames=2",
        "--param",
        "contact_depth=30",
        "--out",
        str(tmp_path),
    )
    assert code == harness.EXIT_FAILURE
    header, records, summary = parse_episode_log((tmp_path / "descend-descend-seed0.jsonl").read_text())
    assert header["overrides"] == {"descend": {"max_frames": 2}}
    assert header["scene_params"] == {"contact_depth": 30}
    assert summary["status"] == "timeout"
    assert len(records) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "descend", "--param", "wobble=1"],
        ["run", "descend", "--set", "max_frames=2"],
        ["run", "descend", "--param", "contact_depth"],
        ["run"],
        ["train", "missing.csv", "--out", "model.json"],
    ],
)
def test_usage_errors(argv):
    assert cli(*argv) == harness.EXIT_USAGE


def test_missing_configuration_file():
    assert tactile.run(["run", "descend", "--ini", "no-such-file.ini"]) == harness.EXIT_USAGE


def test_unknown_option_in_a_config_document(tmp_path):
    document = tmp_path / "run.yaml"
    document.write_text("scenario: descend\nwobble: 1\n")
    assert cli("run", "--config", str(document)) == harness.EXIT_USAGE


def test_config_document_fills_the_command(tmp_path, capsys):
    document = tmp_path / "run.yaml"
    document.write_text("scenario: descend\nseed: 5\nset:\n  descend:\n    max_frames: 2\n")
    assert cli("run", "--config", str(document)) == harness.EXIT_FAILURE
    assert json.loads(capsys.readouterr().out)["status"] == "timeout"


def test_unknown_scenario_is_rejected_by_the_parser():
    with pytest.raises(SystemExit) as excinfo:
        cli("run", "followme-pull-w")
    assert excinfo.value.code == harness.EXIT_USAGE


def test_skill_errors_are_failures(monkeypatch):
    def abort(args, rig):
        raise SkillError("no_object")

    monkeypatch.setitem(tactile.COMMANDS, "run", abort)
    assert cli("run", "descend") == harness.EXIT_FAILURE


def test_unexpected_errors_are_internal(monkeypatch):
    def crash(args, rig):
        raise RuntimeError("boom")

    monkeypatch.setitem(tactile.COMMANDS, "run", crash)
    assert cli("run", "descend") == harness.EXIT_INTERNAL


def test_assembly(tmp_path, capsys):
    assert cli("assembly", "--out", str(tmp_path)) == harness.EXIT_SUCCESS
    assert json.loads(capsys.readouterr().out)["success"]
    assert (tmp_path / "assembly-default-seed0.jsonl").exists()


def test_plotdata_from_a_run_log(tmp_path):
    assert cli("run", "descend", "--seed", "5", "--out", str(tmp_path)) == harness.EXIT_SUCCESS
    views = tmp_path / "views"
    log = str(tmp_path / "descend-descend-seed5.jsonl")
    assert cli("plotdata", log, "--view", "torque", "--out", str(views)) == harness.EXIT_SUCCESS
    assert (views / "descend-descend-seed5-torque.csv").read_text().startswith("frame,torque,")
    assert cli("plotdata", log, "--view", "spectrum") == harness.EXIT_USAGE
