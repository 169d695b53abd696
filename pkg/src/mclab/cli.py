"""Command-line front end.

One JSON config document drives everything; every field has a default, so an
empty document is a complete (toy-scale) experiment. Dotted --set overrides
are type-checked against the same schema. Exit codes: 0 success, 1 invalid
configuration or arguments (the message names the field), 2 runtime failure
(the message names the pipeline stage).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .composer import read_prediction_log
from .datagen import save_dataset
from .harness import (
    ConfigError,
    ExperimentConfig,
    StageError,
    build_dataset,
    default_config_dict,
    load_sweep,
    normalize_config,
    render_report,
    run_single,
    run_sweep,
)
from .metrics import PairedPredictions, evaluate, report_to_csv, report_to_text

__all__ = ["main", "build_parser", "load_config"]

SEED_ENV = "MCLAB_SEED"


def _parse_set(assignment: str) -> tuple[list[str], object]:
    if "=" not in assignment:
        raise ConfigError(assignment, "--set expects dotted.path=value")
    raw_path, raw_value = assignment.split("=", 1)
    path = raw_path.strip().split(".")
    if not all(path):
        raise ConfigError(raw_path, "empty path component")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value  # bare string
    return path, value


def _apply_set(doc: dict, path: list[str], value: object) -> None:
    # the path must exist in the schema; intermediate objects are created
    schema: object = default_config_dict()
    for i, part in enumerate(path):
        full = ".".join(path[: i + 1])
        if not isinstance(schema, dict) or part not in schema:
            raise ConfigError(full, "unknown field")
        schema = schema[part]
    node = doc
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(".".join(path), "path crosses a non-object value")
    node[path[-1]] = value


def load_config(
    config_path: str | None,
    sets: list[str] | None = None,
    env: dict | None = None,
) -> ExperimentConfig:
    """Read, override, and validate the experiment configuration.

    Precedence: --set > file > MCLAB_SEED (seed only) > defaults.
    """
    env = os.environ if env is None else env
    doc: dict = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError("config", f"no such file: {config_path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config", "top level must be a JSON object")
        doc = loaded
    overrides = [_parse_set(s) for s in (sets or [])]
    if "seed" not in doc and not any(p == ["seed"] for p, _ in overrides):
        raw = env.get(SEED_ENV)
        if raw is not None:
            try:
                doc["seed"] = int(raw)
            except ValueError:
                raise ConfigError("seed", f"{SEED_ENV} must be an integer") from None
    for path_parts, value in overrides:
        _apply_set(doc, path_parts, value)
    return normalize_config(doc)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mclab",
        description="Train, correct, compose, and evaluate staged classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file (defaults apply if omitted)")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="PATH=VALUE",
            help="override a config field, e.g. --set policy.tau=0.7",
        )

    p = sub.add_parser("gen", help="generate the configured dataset and save it")
    common(p)
    p.add_argument("--out", help="output file (.bin for binary, else text)")

    p = sub.add_parser("train", help="train the base model only")
    common(p)

    p = sub.add_parser("correct", help="one full exclusion run (train, correct, compose)")
    common(p)

    p = sub.add_parser("eval", help="recompute metrics from a prediction log")
    p.add_argument("--preds", required=True, help="prediction log (preds.csv)")
    p.add_argument("--out", help="write metrics CSV here instead of text to stdout")

    p = sub.add_parser("sweep", help="baseline plus one run per excluded class")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("report", help="re-render tables from persisted run artifacts")
    p.add_argument("--run", required=True, help="sweep root (…/<name>)")
    return parser


def _cmd_gen(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set)
    try:
        data = build_dataset(config)
        out = args.out or str(Path(config.output_dir) / config.name / "dataset.csv")
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        save_dataset(data, out)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("data", str(exc)) from exc
    counts = ", ".join(str(int(c)) for c in data.class_counts)
    print(f"wrote {len(data)} samples ({counts}) to {out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set)
    result = run_single(config, base_only=True)
    history = result.history
    print(
        f"trained {len(history.rows)} epochs, best val_acc "
        f"{history.best_val_acc:.4f} at epoch {history.best_epoch}; "
        f"model saved to {Path(result.run_dir) / 'model.bin'}"
    )
    return 0


def _cmd_correct(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set)
    if config.excluded_class is None:
        raise ConfigError("excluded_class", "required for the correct command")
    result = run_single(config)
    agg = result.report.aggregate
    ret = "n/a" if agg.retention_macro is None else f"{agg.retention_macro:.4f}"
    print(
        f"run complete: val_acc {result.val_accuracy:.4f}, "
        f"retention_macro {ret}, accuracy {agg.accuracy_base:.4f} -> "
        f"{agg.accuracy_corrected:.4f}; artifacts in {result.run_dir}"
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    try:
        log = read_prediction_log(args.preds)
        report = evaluate(PairedPredictions.from_log(log))
    except FileNotFoundError:
        raise StageError("metrics", f"no such prediction log: {args.preds}") from None
    except ValueError as exc:
        raise StageError("metrics", str(exc)) from exc
    if args.out:
        Path(args.out).write_text(report_to_csv(report), encoding="ascii")
        print(f"wrote metrics to {args.out}")
    else:
        print(report_to_text(report), end="")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set)
    if args.jobs < 1:
        raise ConfigError("jobs", "must be >= 1")
    sweep = run_sweep(config, jobs=args.jobs)
    for excluded in [None] + sorted(sweep.runs):
        result = sweep.baseline if excluded is None else sweep.runs[excluded]
        agg = result.report.aggregate
        tag = "baseline " if excluded is None else f"excl_{excluded}   "
        ret = "   n/a" if agg.retention_macro is None else f"{agg.retention_macro:.4f}"
        print(
            f"{tag} val_acc {result.val_accuracy:.4f}  retention_macro {ret}  "
            f"accuracy {agg.accuracy_base:.4f} -> {agg.accuracy_corrected:.4f}"
        )
    print(f"report written to {sweep.root}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    sweep = load_sweep(args.run)
    render_report(sweep)
    print(f"re-rendered tables under {sweep.root}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "correct": _cmd_correct,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
