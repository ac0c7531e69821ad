"""Command-line interface.

Subcommands:

    train   --config <file> [--seed N] [--set key=value ...]
    eval    --checkpoint <file> --data <root> --manifest <file> --split test
    split   --data <root> --seed N --out <manifest>
    inspect --checkpoint <file>

Exit codes: 0 on success, 2 on usage errors, 1 otherwise. Failures print
one machine-parseable line to stderr: ``<category>: <message>``.
Set CNNKIT_LOG_LEVEL (DEBUG/INFO/WARNING/...) to control verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .data import save_manifest, scan_dataset, stratified_split
from .errors import CnnKitError, ConfigError
from .model import buffer_count, model_size_mb, param_count
from .train import TrainConfig, run_eval, run_train


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cnnkit",
                                     description="Compact CNN training and benchmarking")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the full training pipeline")
    p_train.add_argument("--config", required=True, help="JSON config file (flat key-value)")
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="override any config field (repeatable)")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True, help="dataset root directory")
    p_eval.add_argument("--manifest", required=True, help="split manifest JSON")
    p_eval.add_argument("--split", default="test", choices=["train", "val", "test"])

    p_split = sub.add_parser("split", help="write a stratified split manifest")
    p_split.add_argument("--data", required=True)
    p_split.add_argument("--seed", type=int, required=True)
    p_split.add_argument("--out", required=True)

    p_inspect = sub.add_parser("inspect", help="print checkpoint accounting")
    p_inspect.add_argument("--checkpoint", required=True)
    return parser


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text  # bare strings need no quoting


def _load_train_config(args) -> TrainConfig:
    path = Path(args.config)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a flat JSON object")
    if args.seed is not None:
        doc["seed"] = args.seed
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        doc[key] = _parse_value(value)
    return TrainConfig.from_dict(doc)


def _cmd_train(args) -> int:
    artifacts = run_train(_load_train_config(args))
    print(f"run complete: {len(artifacts.records)} epochs"
          f"{' (early stop)' if artifacts.stopped_early else ''}")
    print(f"artifacts in {artifacts.output_dir}")
    print(f"test accuracy: {artifacts.test_metrics.accuracy:.4f}")
    return 0


def _cmd_eval(args) -> int:
    report = run_eval(args.checkpoint, args.data, args.split, args.manifest)
    print(json.dumps(report.to_dict(), indent=1))
    return 0


def _cmd_split(args) -> int:
    index = scan_dataset(args.data)
    assignment = stratified_split(index, args.seed)
    save_manifest(assignment, index, args.out)
    print(f"wrote {args.out}: {len(assignment.train)} train / "
          f"{len(assignment.val)} val / {len(assignment.test)} test")
    return 0


def _cmd_inspect(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    print(f"classes: {len(ck.class_names)} ({', '.join(ck.class_names)})")
    print(f"parameters: {param_count(ck.model):,}")
    print(f"buffers: {buffer_count(ck.model):,}")
    print(f"size_mb: {model_size_mb(ck.model):.2f}")
    print(f"reference_architecture: {ck.model.config.is_reference}")
    return 0


_COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "split": _cmd_split,
             "inspect": _cmd_inspect}


def cli(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CNNKIT_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(message)s",
    )
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return _COMMANDS[args.command](args)
    except CnnKitError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
