"""Run orchestration: configuration, the round loop, persistence and reports.

A run directory holds::

    run_config.yaml   copy of the configuration
    trials.jsonl      one line per finished trial (resumable)
    rounds.csv        one row per finished round
    ensemble/         manifest.json + round_NN/{model,pipeline}.npz
    predictions.txt   test predictions, when a test set is configured
    run.log
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .. import hyperboost as hb
from ..optimizer import TpeParams, append_trial, read_trials
from ..pipeline import FEATURE_CAP, FeatureCache
from ..searchspace import MalformedSpaceError, builtin_space_path, load_space
from .data import DataError, Dataset, load_expression_csv, make_synthetic, split

logger = logging.getLogger(__name__)

ROUND_FIELDS = ("round", "accepted", "n_completed", "n_degenerate", "n_failed", "best_trial",
                "candidate_valid_accuracy", "standalone_valid_accuracy", "ensemble_valid_accuracy",
                "accuracy_min", "accuracy_median", "accuracy_max", "wall_time")
REPORT_FIELDS = ("round", "accepted", "candidate_valid_accuracy", "standalone_valid_accuracy",
                 "ensemble_valid_accuracy")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    out: str
    space: str = "image"
    data: dict = field(default_factory=dict)
    n_fit: int = 20709
    n_valid: int = 8000
    split_seed: int = 0
    rounds: int = 4
    budget: int = 1000
    parallelism: int = 1
    seed: int = 0
    strategy: str = "tpe"
    feature_cap: int = FEATURE_CAP
    c_grid: list = field(default_factory=lambda: list(hb.C_GRID))
    continue_on_reject: bool = False
    tpe: dict = field(default_factory=dict)
    test: dict | None = None

    def __post_init__(self):
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.strategy not in ("tpe", "random"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.n_fit < 1 or self.n_valid < 1:
            raise ConfigError("split sizes must be positive")
        if not self.c_grid or any(float(c) <= 0 for c in self.c_grid):
            raise ConfigError("c_grid must hold positive values")
        try:
            TpeParams(**self.tpe)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"tpe: {e}") from None

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("run config must be a mapping")
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown run config keys: {sorted(extra)}")
        if "out" not in d:
            raise ConfigError("run config needs 'out'")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                d = yaml.safe_load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read {path}: {e}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from None
        return cls.from_dict(d)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def resolve_space(name_or_path, base=None):
    p = Path(name_or_path)
    if not p.suffix:
        try:
            p = builtin_space_path(name_or_path)
        except FileNotFoundError:
            raise ConfigError(f"no built-in space {name_or_path!r}") from None
    elif base is not None and not p.is_absolute():
        p = Path(base) / p
    try:
        return load_space(p)
    except (OSError, MalformedSpaceError, yaml.YAMLError) as e:
        raise ConfigError(f"space {p}: {e}") from None


def load_data(data, base=None):
    """Labelled dataset described by a run config's ``data`` block."""
    source = data.get("source", "synthetic")
    if source == "synthetic":
        return make_synthetic(data.get("spec", {}), seed=int(data.get("seed", 0)))
    if "path" not in data:
        raise ConfigError(f"data source {source!r} needs a path")
    path = Path(data["path"])
    if base is not None and not path.is_absolute():
        path = Path(base) / path
    if source == "csv":
        return load_expression_csv(path, side=int(data.get("side", 48)), class_count=int(data.get("class_count", 7)))
    if source == "npz":
        return load_npz(path)
    raise ConfigError(f"unknown data source {source!r}")


def load_npz(path):
    try:
        with np.load(path) as z:
            labels = z["labels"] if "labels" in z else None
            k = int(z["class_count"]) if "class_count" in z else int(labels.max() + 1)
            return Dataset(z["images"], labels, k)
    except (OSError, KeyError) as e:
        raise DataError(f"{path}: {e}") from None


def save_npz(dataset, path):
    arrays = {"images": dataset.images, "class_count": dataset.class_count}
    if dataset.labels is not None:
        arrays["labels"] = dataset.labels
    np.savez_compressed(path, **arrays)


def read_rounds(path):
    if not Path(path).exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _append_round(path, row):
    new = not Path(path).exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ROUND_FIELDS)
        if new:
            w.writeheader()
        w.writerow(row)


def export_predictions(state, images, path):
    """Write one predicted class index per line, in input order."""
    if state.J == 0:
        raise hb.EmptyEnsembleError("cannot export predictions from an empty ensemble")
    pred = hb.predict_ensemble(state, images)
    Path(path).write_text("".join(f"{int(p)}\n" for p in pred))
    return pred


def run(config, base=None, on_trial=None):
    """Execute (or resume) a run; returns the run directory.

    ``base`` resolves relative paths in the config. The test set, if any, is
    locked for the whole search and only read when exporting predictions.
    """
    if isinstance(config, dict):
        config = RunConfig.from_dict(config)
    out = Path(config.out)
    if base is not None and not out.is_absolute():
        out = Path(base) / out
    space = resolve_space(config.space, base)
    data = split(load_data(config.data, base), config.n_fit, config.n_valid, config.split_seed)
    test = None
    if config.test:
        test = load_data(config.test, base)
        test.partition = {"test": np.arange(len(test))}
        test.lock_test()

    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "run_config.yaml"
    if cfg_path.exists():
        previous = yaml.safe_load(cfg_path.read_text())
        if previous != config.to_dict():
            raise ConfigError(f"{out} holds a run with a different configuration")
    else:
        cfg_path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
    _attach_log(out)

    fit = hb.Split(*data.subset("fit"), "fit")
    valid = hb.Split(*data.subset("valid"), "valid")

    ens_dir = out / "ensemble"
    trials_path = out / "trials.jsonl"
    rounds_path = out / "rounds.csv"
    state = hb.EnsembleState(data.class_count)
    if (ens_dir / "manifest.json").exists():
        state = hb.refresh_margins(hb.load_ensemble(ens_dir), fit, valid)
    stores = read_trials(trials_path, space) if trials_path.exists() else {}
    done_rows = read_rounds(rounds_path)
    params = TpeParams(**config.tpe)
    cache = FeatureCache()

    def log_trial(t):
        append_trial(trials_path, t)
        if on_trial is not None:
            on_trial(t)

    stopped = any(r["accepted"] == "0" for r in done_rows) and not config.continue_on_reject
    for rnd in range(len(done_rows) + 1, config.rounds + 1):
        if stopped:
            break
        state, report = hb.run_round(
            state, space, config.strategy, config.budget, fit, valid, config.parallelism,
            params=params, seed=config.seed, store=stores.get(rnd), c_grid=config.c_grid,
            cap=config.feature_cap, on_trial=log_trial, cache=cache, round_index=rnd,
        )
        if report.accepted:
            hb.save_ensemble(state, ens_dir)
        _append_round(rounds_path, report.row())
        if not report.accepted and not config.continue_on_reject:
            stopped = True

    if test is not None and state.J:
        test.unlock_test()
        images, _ = test.subset("test")
        export_predictions(state, images, out / "predictions.txt")
    return out


def report(run_dir):
    """Per-round accuracy table as CSV text."""
    rows = read_rounds(Path(run_dir) / "rounds.csv")
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _attach_log(out):
    root = logging.getLogger("nullboost")
    target = str((out / "run.log").resolve())
    for h in root.handlers:
        if isinstance(h, logging.FileHandler) and h.baseFilename == target:
            return
    h = logging.FileHandler(target)
    h.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root.addHandler(h)
    root.setLevel(logging.INFO)
