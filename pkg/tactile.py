#! /usr/bin/env python3
"""
Simulated tactile skill bench.

Run scenarios through the marker tracker, percepts and skills, generate learning datasets, train and evaluate
models, run the scripted assembly and extract plot data from episode logs.
"""
import argparse
import logging
import os
import sys
from typing import Any, Dict, List

import yaml

from modules import config, harness
from modules.datasets import DatasetError, read_dataset
from modules.learn import LearnError
from modules.logs import LogFormatError, LogWriteFailed, dumps, make_directory, write_json, write_text
from modules.percept import PerceptError
from modules.scenarios import scene_names
from modules.sim import SimError
from modules.skills import SkillError
from modules.tracking import TrackingError

# Logging setup
log = logging.getLogger()
logging.basicConfig(format="%(asctime)s [%(levelname)s] %(module)s:%(lineno)d %(message)s", datefmt="%Y-%m-%d %H:%M:%S")

# Errors caused by the user's input rather than by the program
USAGE_ERRORS = (
    config.ConfigException,
    harness.HarnessError,
    SimError,
    DatasetError,
    LearnError,
    LogFormatError,
)


def parse_args(argv: List[str] = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--debug", action="store_true", help="set logging to DEBUG level")
    common.add_argument("--ini", default=config.DEFAULT_CONFIG_FILE, help="sensor and skill configuration file")
    common.add_argument("--config", help="JSON or YAML file with values for any of this command's options")
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--frames", type=int, help="frame limit")

    parser = argparse.ArgumentParser(description="Simulated tactile sensing and skill bench.")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", parents=[common], help="record the percept stream of a scenario")
    simulate.add_argument("scenario", nargs="?", choices=scene_names())
    simulate.add_argument("--pgm", action="store_true", help="also dump every sensor frame as PGM")

    run = commands.add_parser("run", parents=[common], help="run a skill on a scenario")
    run.add_argument("scenario", nargs="?", choices=scene_names())
    run.add_argument("--skill", choices=harness.SKILLS, help="skill to run (default depends on the scenario)")
    run.add_argument("--model", help="force regression model for the press skill")
    run.add_argument(
        "--set", action="append", default=[], metavar="SKILL.FIELD=VALUE", help="override one skill parameter"
    )
    run.add_argument("--param", action="append", default=[], metavar="KEY=VALUE", help="scenario parameter")

    dataset = commands.add_parser("gen-dataset", parents=[common], help="generate a learning dataset as CSV")
    dataset.add_argument("kind", nargs="?", choices=("press", "stir"))
    dataset.add_argument("--material", help="object material of the press dataset (default wood)")

    train = commands.add_parser("train", parents=[common], help="fit a model to a dataset")
    train.add_argument("dataset", nargs="?", help="dataset CSV")

    evaluate = commands.add_parser("eval", parents=[common], help="score a model on a dataset's test split")
    evaluate.add_argument("model", nargs="?", help="model JSON")
    evaluate.add_argument("dataset", nargs="?", help="dataset CSV")

    assembly = commands.add_parser("assembly", parents=[common], help="run the scripted assembly")
    assembly.add_argument("--variant", choices=harness.ASSEMBLY_VARIANTS, help="scene variant (default default)")

    plotdata = commands.add_parser("plotdata", parents=[common], help="project an episode log onto a plot view")
    plotdata.add_argument("log", nargs="?", help="episode log JSONL")
    plotdata.add_argument("--view", action="append", help="view to emit, repeatable (default all)")

    return parser.parse_args(argv)


def merge_config_file(args: argparse.Namespace) -> argparse.Namespace:
    """
    Fill options not given on the command line from the --config document. Keys use the option names with dashes
    replaced by underscores.

    :raise ConfigException: on unknown keys
    """
    if not args.config:
        return args
    document = config.load_document_file(args.config)
    for key, value in document.items():
        name = key.replace("-", "_")
        if name in ("command", "config") or not hasattr(args, name):
            raise config.ConfigException(f"{args.config}: unknown option '{key}' for {args.command}")
        if getattr(args, name) in (None, [], False):
            setattr(args, name, value)
    return args


def _assignments(items: List[str], option: str) -> Dict[str, Any]:
    values = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise config.ConfigException(f"{option} expects KEY=VALUE, got '{item}'")
        values[key] = yaml.safe_load(raw)
    return values


def _overrides(items: List[str]) -> Dict[str, Dict[str, Any]]:
    overrides: Dict[str, Dict[str, Any]] = {}
    for key, value in _assignments(items, "--set").items():
        skill, sep, name = key.partition(".")
        if not sep:
            raise config.ConfigException(f"--set expects SKILL.FIELD=VALUE, got '{key}'")
        overrides.setdefault(skill, {})[name] = value
    return overrides


def _require(args: argparse.Namespace, *names: str):
    for name in names:
        if getattr(args, name) is None:
            raise config.ConfigException(f"{args.command}: missing '{name}'")


def command_simulate(args: argparse.Namespace, rig: harness.Rig) -> int:
    _require(args, "scenario")
    harness.simulate(rig, args.scenario, args.seed or 0, args.frames, args.out, args.pgm)
    return harness.EXIT_SUCCESS


def command_run(args: argparse.Namespace, rig: harness.Rig) -> int:
    if isinstance(args.set, dict):
        overrides = args.set
    else:
        overrides = _overrides(args.set)
    scene_params = args.param if isinstance(args.param, dict) else _assignments(args.param, "--param")
    _require(args, "scenario")
    cfg = harness.RunConfig(
        scenario=args.scenario,
        seed=args.seed or 0,
        skill=args.skill,
        overrides=overrides,
        scene_params=scene_params,
        output=args.out,
        frames=args.frames,
        model=args.model,
        verbose=args.debug,
    )
    outcome = harness.run_scenario(cfg, rig)
    print(dumps(outcome.result.to_dict()))
    return outcome.exit_code


def command_gen_dataset(args: argparse.Namespace, rig: harness.Rig) -> int:
    _require(args, "kind", "out")
    dataset = harness.generate_dataset(rig, args.kind, args.seed or 0, args.material or "wood")
    harness.write_dataset(dataset, args.out)
    return harness.EXIT_SUCCESS


def command_train(args: argparse.Namespace, rig: harness.Rig) -> int:
    _require(args, "dataset", "out")
    model, summary = harness.train_model(rig, read_dataset(args.dataset), args.seed or 0)
    harness.save_model(model, args.out)
    log.info(f"Model written to {args.out}")
    print(dumps(summary))
    return harness.EXIT_SUCCESS


def command_eval(args: argparse.Namespace, rig: harness.Rig) -> int:
    _require(args, "model", "dataset")
    scores = harness.evaluate_model(harness.load_model(args.model), read_dataset(args.dataset))
    table = scores.pop("table", None)
    if table:
        print(table)
    print(dumps(scores))
    if args.out:
        write_json(args.out, scores)
    return harness.EXIT_SUCCESS


def command_assembly(args: argparse.Namespace, rig: harness.Rig) -> int:
    seed = args.seed or 0
    variant = args.variant or "default"
    report = harness.run_assembly(rig, seed, variant)
    if args.out:
        make_directory(args.out)
        write_text(os.path.join(args.out, f"assembly-{variant}-seed{seed}.jsonl"), report.log_text)
    print(dumps(report.to_dict()))
    return harness.EXIT_SUCCESS if report.success else harness.EXIT_FAILURE


def command_plotdata(args: argparse.Namespace, rig: harness.Rig) -> int:
    _require(args, "log")
    _, records = harness.read_log_records(args.log)
    views = args.view or sorted(harness.PLOT_VIEWS)
    stem = os.path.splitext(os.path.basename(args.log))[0]
    for view in views:
        text = harness.emit_plotdata(records, view)
        if args.out:
            make_directory(args.out)
            write_text(os.path.join(args.out, f"{stem}-{view}.csv"), text)
        else:
            sys.stdout.write(text)
    return harness.EXIT_SUCCESS


COMMANDS = {
    "simulate": command_simulate,
    "run": command_run,
    "gen-dataset": command_gen_dataset,
    "train": command_train,
    "eval": command_eval,
    "assembly": command_assembly,
    "plotdata": command_plotdata,
}


def main(args: argparse.Namespace) -> int:
    args = merge_config_file(args)
    rig = harness.Rig.from_configuration(config.get_configuration(args.ini))
    return COMMANDS[args.command](args, rig)


def run(argv: List[str] = None) -> int:
    """
    Parse the command line, run the command and map errors to exit codes.

    :return: EXIT_SUCCESS, EXIT_FAILURE (skill failure or stall), EXIT_USAGE or EXIT_INTERNAL
    """
    args = parse_args(argv)
    if args.debug:
        log.setLevel(logging.DEBUG)
    else:
        log.setLevel(logging.INFO)

    try:
        return main(args)
    except USAGE_ERRORS as e:
        log.error(f"{e}")
        return harness.EXIT_USAGE
    except (SkillError, PerceptError, TrackingError, LogWriteFailed) as e:
        log.error(f"Run failed: {e}")
        return harness.EXIT_FAILURE
    except Exception as e:
        log.error(f"Uncaught error while processing request: {e}")
        return harness.EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(run())
