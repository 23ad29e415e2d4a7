"""Command-line entry point: ``python -m handsynth.cli <subcommand>``.

Logs go to standard error; reports and JSON go to standard output or files.
Exit codes: 0 success, 2 usage, 3 I/O, 4 validation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from typing import Callable

from .codec import encode_angles, parse_angles, record_paths, write_record
from .config import (
    CliConfig,
    Option,
    UsageError,
    boolean,
    choice,
    non_negative_int,
    path_value,
    positive_float,
    positive_int,
    resolve,
    seed_value,
)
from .evaluation import ReportFormat, Units, best_checkpoint, emit_report, sweep_checkpoints
from .kinematics import DEFAULT_DEFINITION, load_joint_space
from .pipeline import build_manifest, generate_dataset, load_split, render_sample, verify_dataset
from .regressor import TrainConfig, train
from .renderer import DEFAULT_CAMERA, CameraConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VALIDATION = 4
EXIT_INTERRUPTED = 130

_DEFAULTS = TrainConfig()

JOINT_DEF = Option("joint_def", path_value, "Joint definition file", DEFAULT_DEFINITION)
WIDTH = Option("width", positive_int, "Image width in pixels", DEFAULT_CAMERA.width)
HEIGHT = Option("height", positive_int, "Image height in pixels", DEFAULT_CAMERA.height)
SEED = Option("seed", seed_value, "Master seed (unsigned 64-bit)", 0)
DEBUG = Option("debug", boolean, "Enable debug logging", False)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen(config: CliConfig) -> int:
    space = load_joint_space(config["joint_def"])
    count = config["count"]
    val_count = None
    if config["train_count"] is not None:
        if config["train_count"] > count:
            raise UsageError(f"--train-count {config['train_count']} exceeds --count {count}")
        val_count = count - config["train_count"]
    camera = CameraConfig(width=config["width"], height=config["height"])
    manifest = build_manifest(space, config["seed"], count, val_count, camera=camera)
    generate_dataset(space, manifest, config["out"], workers=config["workers"])
    return EXIT_OK


def cmd_train(config: CliConfig) -> int:
    train_config = TrainConfig(
        steps=config["steps"],
        batch_size=config["batch_size"],
        learning_rate=config["learning_rate"],
        hidden_size=config["hidden_size"],
        checkpoint_every=config["checkpoint_every"],
        seed=config["train_seed"],
    )
    checkpoints = train(config["dataset"], train_config, config["out"])
    final = checkpoints[-1]
    logging.info(
        "Training finished checkpoints=%d final_step=%d final_train_loss=%.6g",
        len(checkpoints),
        final.step,
        final.train_loss,
    )
    return EXIT_OK


def cmd_eval(config: CliConfig) -> int:
    val = load_split(config["dataset"], "val")
    report = sweep_checkpoints(config["checkpoints"], val, Units(config["units"]))
    emit_report(report, ReportFormat(config["format"]), config["out"])
    logging.info("Best checkpoint step=%d", best_checkpoint(report))
    return EXIT_OK


def cmd_verify(config: CliConfig) -> int:
    report = verify_dataset(config["dataset"])
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_parse(config: CliConfig) -> int:
    space = load_joint_space(config["joint_def"])
    text = config["file"].read_bytes().decode("utf8")
    if text.endswith("\n"):
        text = text[:-1]
    report = parse_angles(space, text, config["mode"])
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.vector is not None else EXIT_VALIDATION


def cmd_render_one(config: CliConfig) -> int:
    space = load_joint_space(config["joint_def"])
    index = config["index"]
    camera = CameraConfig(width=config["width"], height=config["height"])
    manifest = build_manifest(space, config["seed"], index + 1, val_count=0, camera=camera)
    sample = render_sample(space, manifest, index)
    write_record(config["out"], index, sample.image, encode_angles(space, sample.angles))
    image_path, label_path = record_paths(config["out"], index)
    logging.info("Rendered record index=%d image=%s label=%s", index, image_path, label_path)
    return EXIT_OK


@dataclass(frozen=True)
class Command:
    name: str
    help: str
    options: list[Option]
    run: Callable[[CliConfig], int]


COMMANDS = [
    Command(
        "gen",
        "Generate a synthetic image/joint-angle dataset",
        [
            SEED,
            Option("count", non_negative_int, "Number of records", 1000),
            Option("out", path_value, "Dataset output directory", required=True),
            Option("workers", positive_int, "Worker processes", 1),
            JOINT_DEF,
            WIDTH,
            HEIGHT,
            Option(
                "train_count",
                non_negative_int,
                "Records in the train split, the rest are validation; "
                "unset keeps min(500, count // 5) for validation",
            ),
        ],
        cmd_gen,
    ),
    Command(
        "train",
        "Train the regressor and write checkpoints",
        [
            Option("dataset", path_value, "Dataset directory", required=True),
            Option("out", path_value, "Checkpoint output directory", required=True),
            Option("steps", non_negative_int, "Training steps", _DEFAULTS.steps),
            Option("batch_size", positive_int, "Mini-batch size", _DEFAULTS.batch_size),
            Option("learning_rate", positive_float, "SGD learning rate", _DEFAULTS.learning_rate),
            Option("hidden_size", positive_int, "Hidden units", _DEFAULTS.hidden_size),
            Option(
                "checkpoint_every",
                positive_int,
                "Steps between checkpoints",
                _DEFAULTS.checkpoint_every,
            ),
            Option("train_seed", seed_value, "Initialization and shuffling seed", _DEFAULTS.seed),
        ],
        cmd_train,
    ),
    Command(
        "eval",
        "Evaluate every checkpoint on the validation split",
        [
            Option("checkpoints", path_value, "Checkpoint directory", required=True),
            Option("dataset", path_value, "Dataset directory", required=True),
            Option("format", choice("csv", "json"), "Report format", "csv"),
            Option(
                "units",
                choice(*(u.value for u in Units)),
                "Error units",
                Units.RADIANS_SQUARED.value,
            ),
            Option("out", path_value, "Report file, '-' for standard output", "-"),
        ],
        cmd_eval,
    ),
    Command(
        "verify",
        "Check dataset records and re-derive a sample from seeds",
        [Option("dataset", path_value, "Dataset directory", required=True)],
        cmd_verify,
    ),
    Command(
        "parse",
        "Parse a label file and print the report as JSON",
        [
            Option("file", path_value, "Label file", required=True),
            Option("mode", choice("strict", "lenient"), "Parser mode", "strict"),
            JOINT_DEF,
        ],
        cmd_parse,
    ),
    Command(
        "render-one",
        "Regenerate a single record from seeds",
        [
            SEED,
            Option("index", non_negative_int, "Record index", 0),
            Option("out", path_value, "Output directory", required=True),
            JOINT_DEF,
            WIDTH,
            HEIGHT,
        ],
        cmd_render_one,
    ),
]


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        type=path_value,
        default=None,
        help="Dotenv file of HANDSYNTH_* settings (env HANDSYNTH_CONFIG)",
    )
    common.add_argument(
        "--debug",
        action="store_true",
        default=None,
        help="Enable debug logging (env HANDSYNTH_DEBUG)",
    )

    parser = argparse.ArgumentParser(
        prog="handsynth", description="Synthetic hand images labelled with joint angles"
    )
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    by_name: dict[str, argparse.ArgumentParser] = {}
    for command in COMMANDS:
        sub = subparsers.add_parser(command.name, parents=[common], help=command.help)
        for option in command.options:
            option.add_to(sub)
        by_name[command.name] = sub
    return parser, by_name


def main(argv: list[str] | None = None) -> int:
    parser, subparsers = build_parser()
    try:
        args = parser.parse_args(argv)
        command = next(c for c in COMMANDS if c.name == args.command)
        try:
            config = resolve(command.name, [*command.options, DEBUG], args)
        except UsageError as exc:
            subparsers[command.name].error(str(exc))
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if config["debug"] else logging.INFO, stream=sys.stderr
    )
    config.log()

    try:
        return command.run(config)
    except UsageError as exc:
        logging.error("Usage error: %s", exc)
        return EXIT_USAGE
    except OSError as exc:
        logging.error("I/O error: %s", exc)
        return EXIT_IO
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        logging.error("Validation error: %s", exc)
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        logging.info("Interrupted")
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
