"""Command-line entry point: ``graphmoe <command> [--config run.json] [--set key=value ...]``.

Config files are JSON with these sections (every key optional)::

    {
      "seed": 0,
      "data":   {"K": 5, "length": 4000, "noise_std": 0.1, "n_spikes": 8, "n_shifts": 2,
                 "spike_len": 4, "shift_len": 64, "spike_mag": 1.0, "shift_mag": 0.8},
      "train":  {... any TrainConfig field except seed ...},
      "ablate": {"seeds": [0, 1, 2], "experts": [1, 2, 3, 4]},
      "paths":  {"data": "run/data.csv", "checkpoint": "run/model.ckpt", "out_dir": "run"}
    }

The single ``seed`` drives both the generator and the model; each module
derives its own stream from it. Failures print one JSON line to stderr and
exit with 2 (missing file), 3 (bad config or input) or 4 (numeric failure).
"""

from __future__ import annotations

import argparse
import copy
import csv
import inspect
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .autodiff import NumericError
from .data import EmptyInputError, InsufficientDataError, ParseError, SplitConfigError, load_csv, write_csv
from .metrics import UndefinedMetricError, score_report
from .model import ConfigError, TrainConfig
from .synth import GenConfigError, default_config, generate
from .trainer import (
    Checkpoint, CheckpointError, TrainingDiverged, ablate, evaluate, prepare, train, write_ablation,
    write_trace,
)

DEFAULTS = {
    "seed": 0,
    "data": {},
    "train": {},
    "ablate": {"seeds": [0, 1, 2], "experts": [1, 2, 3, 4]},
    "paths": {"data": "run/data.csv", "checkpoint": "run/model.ckpt", "out_dir": "run"},
}
DATA_KEYS = set(inspect.signature(default_config).parameters) - {"seed"}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}
SECTION_KEYS = {"data": DATA_KEYS, "train": TRAIN_KEYS, "ablate": {"seeds", "experts"},
                "paths": {"data", "checkpoint", "out_dir"}}


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: str | None, overrides=()) -> dict:
    """Merge defaults, an optional JSON file and ``key=value`` overrides; reject unknown keys."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise CliError(2, "missing_file", f"config file not found: {p}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as err:
            raise CliError(3, "config", f"{p}: invalid JSON ({err})") from None
        if not isinstance(user, dict):
            raise CliError(3, "config", f"{p}: top level must be an object")
        for key, value in user.items():
            if key == "seed":
                cfg["seed"] = value
            elif key in SECTION_KEYS and isinstance(value, dict):
                cfg[key].update(value)
            else:
                raise CliError(3, "config", f"unknown config key {key!r}")
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise CliError(3, "config", f"override {item!r} is not key=value")
        section, _, name = key.partition(".")
        if section == "seed" and not name:
            cfg["seed"] = _parse_value(raw)
        elif section in SECTION_KEYS and name:
            cfg[section][name] = _parse_value(raw)
        else:
            raise CliError(3, "config", f"unknown config key {key!r}")
    for section, allowed in SECTION_KEYS.items():
        unknown = set(cfg[section]) - allowed
        if unknown:
            raise CliError(3, "config", f"unknown keys in {section!r}: {sorted(unknown)}")
    if not isinstance(cfg["seed"], int):
        raise CliError(3, "config", "seed must be an integer")
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**cfg["train"], seed=cfg["seed"])


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise CliError(2, "missing_file", f"file not found: {path}")
    return path


def _out(cfg: dict) -> Path:
    out = Path(cfg["paths"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _series(cfg: dict):
    return load_csv(_require(cfg["paths"]["data"]))


def cmd_gen_data(cfg: dict) -> None:
    series = generate(default_config(seed=cfg["seed"], **cfg["data"]))
    write_csv(series, cfg["paths"]["data"])
    print(cfg["paths"]["data"])


def cmd_train(cfg: dict) -> None:
    tc = train_config(cfg)
    series = _series(cfg)
    out = _out(cfg)
    splits = prepare(series, tc)
    try:
        result = train(tc, splits.train, splits.val)
    except TrainingDiverged as err:
        if err.checkpoint is not None:
            err.checkpoint.save(out / "last_good.ckpt")
        write_trace(err.trace, out / "loss_trace.csv")
        raise
    result.checkpoint.save(cfg["paths"]["checkpoint"])
    write_trace(result.trace, out / "loss_trace.csv")
    print(cfg["paths"]["checkpoint"])


def _scored(cfg: dict):
    ckpt = Checkpoint.load(_require(cfg["paths"]["checkpoint"]))
    series = _series(cfg)
    splits = prepare(series, ckpt.config)
    scores, R, roc = evaluate(ckpt, splits.test)
    return splits.test, scores, R, roc


def _write_scores(out: Path, test, scores, R) -> None:
    with (out / "scores.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_index", "start_index", "score", "label"])
        for i, (s, v, lab) in enumerate(zip(test.starts, scores, test.window_labels)):
            w.writerow([i, int(s), repr(float(v)), int(lab)])
    with (out / "router_trace.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_index"] + [f"R_{l + 1}" for l in range(R.shape[1])])
        for i, row in enumerate(R):
            w.writerow([i] + [repr(float(r)) for r in row])


def cmd_score(cfg: dict) -> None:
    test, scores, R, _ = _scored(cfg)
    out = _out(cfg)
    _write_scores(out, test, scores, R)
    print(out / "scores.csv")


def cmd_eval(cfg: dict) -> None:
    test, scores, R, roc = _scored(cfg)
    if roc is None:
        raise UndefinedMetricError("test split contains a single class; AUROC is undefined")
    out = _out(cfg)
    _write_scores(out, test, scores, R)
    score_report(scores, test.window_labels, out, starts=test.starts)
    result = {"auroc": roc.auroc, "n_pos": roc.n_pos, "n_neg": roc.n_neg}
    (out / "roc.json").write_text(json.dumps(result, indent=2) + "\n")
    print(json.dumps(result))


def cmd_ablate(cfg: dict) -> None:
    tc = train_config(cfg)
    series = _series(cfg)
    seeds = list(cfg["ablate"]["seeds"])
    if len(seeds) < 1:
        raise ConfigError("ablate.seeds must be non-empty")
    rows, sweep = ablate(tc, series, seeds=seeds, experts=tuple(cfg["ablate"]["experts"]))
    a, _ = write_ablation(rows, sweep, _out(cfg))
    print(a)


def cmd_plot(cfg: dict) -> None:
    out = Path(cfg["paths"]["out_dir"])
    path = _require(out / "scores.csv")
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise EmptyInputError(f"{path} has no rows")
    scores = np.array([float(r["score"]) for r in rows])
    labels = np.array([int(r["label"]) for r in rows])
    starts = np.array([int(r["start_index"]) for r in rows])
    paths = score_report(scores, labels, out, starts=starts)
    print(paths["histogram_svg"])
    print(paths["timeline_svg"])


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "score": cmd_score,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphmoe", description="Graph mixture-of-experts anomaly detection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help="JSON run config")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key, e.g. train.epochs=5 (repeatable)")
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "exit": code, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        COMMANDS[args.command](cfg)
    except CliError as err:
        return _fail(err.code, err.kind, str(err))
    except FileNotFoundError as err:
        return _fail(2, "missing_file", f"file not found: {err.filename}")
    except (ConfigError, GenConfigError, SplitConfigError) as err:
        return _fail(3, "config", str(err))
    except (ParseError, EmptyInputError, InsufficientDataError, CheckpointError, UndefinedMetricError) as err:
        return _fail(3, "input", str(err))
    except (NumericError, TrainingDiverged) as err:
        return _fail(4, "numeric", str(err))
    return 0


if __name__ == "__main__":
    sys.exit(main())
