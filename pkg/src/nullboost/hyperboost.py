"""Greedy ensemble construction with hyperparameter search as the base learner.

Each round searches the configuration space for the feature block that, fit
jointly with a rescaling of the frozen margins of all earlier rounds, gives
the best validation accuracy. The ensemble is one linear classifier over the
concatenated feature blocks, trained one block at a time.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import svm
from .optimizer import COMPLETED, DEGENERATE, FAILED, PENDING, TpeParams, Trial, TrialStore, suggest
from .pipeline import (FEATURE_CAP, DegenerateConfigError, FittedPipeline, InsufficientPatchesError,
                       PipelineConfig, feature_length, fit_pipeline)
from .searchspace import Configuration

logger = logging.getLogger(__name__)

C_GRID = (0.01, 0.1, 1.0, 10.0)
ATTEMPTS_PER_TRIAL = 50
ENSEMBLE_VERSION = 1


class EmptyEnsembleError(ValueError):
    pass


class BudgetExhaustedError(RuntimeError):
    """No non-degenerate candidate turned up within the attempt limit."""


class Split(NamedTuple):
    images: np.ndarray
    labels: np.ndarray
    name: str = ""


@dataclass
class Round:
    config: Configuration
    seed: int
    pipeline: FittedPipeline
    model: svm.SvmModel
    valid_accuracy: float
    standalone_accuracy: float | None = None


@dataclass
class EnsembleState:
    class_count: int
    rounds: list = field(default_factory=list)
    fit_margins: np.ndarray | None = None
    valid_margins: np.ndarray | None = None
    history: list = field(default_factory=list)

    @property
    def J(self):
        return len(self.rounds)

    @property
    def best_accuracy(self):
        return max(self.history) if self.history else -np.inf


@dataclass
class RoundReport:
    round_index: int
    n_completed: int
    n_degenerate: int
    n_failed: int
    best_config: Configuration | None
    best_trial: int | None
    best_accuracy: float
    accuracy_min: float
    accuracy_median: float
    accuracy_max: float
    accepted: bool
    ensemble_accuracy: float
    standalone_accuracy: float | None = None
    wall_time: float = 0.0

    def row(self):
        return {
            "round": self.round_index,
            "accepted": int(self.accepted),
            "n_completed": self.n_completed,
            "n_degenerate": self.n_degenerate,
            "n_failed": self.n_failed,
            "best_trial": self.best_trial,
            "candidate_valid_accuracy": round(self.best_accuracy, 6),
            "standalone_valid_accuracy": "" if self.standalone_accuracy is None else round(self.standalone_accuracy, 6),
            "ensemble_valid_accuracy": round(self.ensemble_accuracy, 6),
            "accuracy_min": round(self.accuracy_min, 6),
            "accuracy_median": round(self.accuracy_median, 6),
            "accuracy_max": round(self.accuracy_max, 6),
            "wall_time": round(self.wall_time, 3),
        }


def trial_seed(seed, round_index, index):
    return int(np.random.SeedSequence([seed, round_index, index]).generate_state(1)[0])


def _c_values(config, c_grid):
    cs = set(float(c) for c in c_grid)
    if "svm_C" in config:
        cs.add(float(config["svm_C"]))
    return sorted(cs)


def _features(fitted, split, seed, cache):
    if cache is not None and split.name:
        hit = cache.get(fitted.config, seed, split.name)
        if hit is not None:
            return hit
    f = fitted.transform(split.images)
    if cache is not None and split.name:
        cache.put(fitted.config, seed, split.name, f)
    return f


def evaluate_candidate(config, state, fit, valid, c_grid=C_GRID, *, seed=0, cap=FEATURE_CAP, round_index=None,
                       index=None, cache=None):
    """Score one configuration as the next ensemble block.

    The loss is one minus the best validation accuracy over the C values
    tried. Degenerate geometry is detected before any pixel work. On success
    ``trial.info["artifact"]`` holds the fitted pipeline, the SVM and the
    updated fit/validation margins.
    """
    t0 = time.perf_counter()
    rnd = round_index if round_index is not None else state.J + 1

    def done(**kw):
        return Trial(config, round=rnd, seed=seed, index=index, wall_time=time.perf_counter() - t0, **kw)

    try:
        pcfg = PipelineConfig.from_assignments(config.values)
        feature_length(pcfg, cap)
    except DegenerateConfigError as e:
        return done(status=DEGENERATE, reason=str(e))
    except (KeyError, ValueError) as e:
        return done(status=FAILED, reason=f"invalid pipeline config: {e}")
    try:
        fitted = fit_pipeline(pcfg, fit.images, np.random.default_rng(seed), cap)
        ff = _features(fitted, fit, seed, cache)
        fv = _features(fitted, valid, seed, cache)
    except InsufficientPatchesError as e:
        return done(status=FAILED, reason=str(e))

    best = None
    model = None
    for C in _c_values(config, c_grid):
        model = svm.fit(ff, fit.labels, C, state.fit_margins, state.class_count, init=model)
        acc = svm.accuracy(svm.predict(model, fv, state.valid_margins), valid.labels)
        if best is None or acc > best[0]:
            best = (acc, C, model)
    acc, C, model = best
    fit_acc = svm.accuracy(svm.predict(model, ff, state.fit_margins), fit.labels)
    trial = done(status=COMPLETED, loss=1.0 - acc)
    trial.info.update(valid_accuracy=acc, fit_accuracy=fit_acc, C=C, n_features=ff.shape[1])
    trial.info["artifact"] = (fitted, model, svm.margins(model, ff, state.fit_margins),
                              svm.margins(model, fv, state.valid_margins))
    return trial


def _standalone_accuracy(fitted, C, fit, valid, k):
    ff, fv = fitted.transform(fit.images), fitted.transform(valid.images)
    m = svm.fit(ff, fit.labels, C, class_count=k)
    return svm.accuracy(svm.predict(m, fv), valid.labels)


def run_round(state, space, strategy, budget, fit, valid, parallelism=1, *, params=None, seed=0, store=None,
              c_grid=C_GRID, cap=FEATURE_CAP, on_trial=None, cache=None, standalone=True, round_index=None):
    """Search for the next block until ``budget`` completed trials.

    ``store`` resumes a partially-run round. Trial ``i`` is suggested from
    the trials before index ``(i // parallelism) * parallelism`` only, so
    results depend neither on completion order nor on where a run was
    interrupted. ``on_trial`` is called with each finished
    trial in index order.

    Returns ``(state', report)``; ``state'`` is ``state`` itself when the
    best candidate does not strictly beat the current ensemble.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    params = params or TpeParams()
    rnd = round_index if round_index is not None else state.J + 1
    store = store if store is not None else TrialStore()
    t0 = time.perf_counter()
    max_attempts = ATTEMPTS_PER_TRIAL * budget
    best = _best_completed(store)
    held = None  # artifacts of the current best

    def work(trial):
        return evaluate_candidate(trial.config, state, fit, valid, c_grid, seed=trial.seed, cap=cap,
                                  round_index=rnd, index=trial.index, cache=cache)

    pool = ThreadPoolExecutor(max_workers=parallelism) if parallelism > 1 else None
    try:
        while store.n_completed < budget and len(store) < max_attempts:
            start = len(store)
            base = (start // parallelism) * parallelism
            stop = min(base + parallelism, start + budget - store.n_completed, max_attempts)
            history = store.head(base)
            batch = []
            for i in range(start, stop):
                rng = np.random.default_rng([seed, rnd, i, 1])
                cfg = suggest(history, space, params, strategy, rng)
                pending = Trial(cfg, PENDING, round=rnd, seed=trial_seed(seed, rnd, i))
                store.report(pending)
                batch.append(pending)
            results = list(pool.map(work, batch)) if pool else [work(t) for t in batch]
            for t in results:
                store.report(t)
                if t.status == COMPLETED and (best is None or t.loss < best.loss):
                    best, held = t, t.info.get("artifact")
                t.info.pop("artifact", None)
                if on_trial is not None:
                    on_trial(t)
    finally:
        if pool:
            pool.shutdown()

    if best is None:
        raise BudgetExhaustedError(f"round {rnd}: no non-degenerate candidate in {len(store)} attempts")
    if held is None:
        # best came from a resumed log; recompute it deterministically
        again = evaluate_candidate(best.config, state, fit, valid, c_grid, seed=best.seed, cap=cap,
                                   round_index=rnd, index=best.index, cache=cache)
        held = again.info["artifact"]
        best.info.update({k: v for k, v in again.info.items() if k != "artifact"})

    accs = np.array([1.0 - t.loss for t in store.completed()])
    acc = 1.0 - best.loss
    accepted = acc > state.best_accuracy
    new_state = state
    standalone_acc = None
    if accepted:
        fitted, model, fit_m, valid_m = held
        if standalone:
            standalone_acc = _standalone_accuracy(fitted, model.C, fit, valid, state.class_count)
        new_state = replace(
            state,
            rounds=state.rounds + [Round(best.config, best.seed, fitted, model, acc, standalone_acc)],
            fit_margins=fit_m,
            valid_margins=valid_m,
            history=state.history + [acc],
        )
    report = RoundReport(
        round_index=rnd,
        n_completed=store.n_completed,
        n_degenerate=store.count(DEGENERATE),
        n_failed=store.count(FAILED),
        best_config=best.config,
        best_trial=best.index,
        best_accuracy=acc,
        accuracy_min=float(accs.min()),
        accuracy_median=float(np.median(accs)),
        accuracy_max=float(accs.max()),
        accepted=accepted,
        ensemble_accuracy=new_state.best_accuracy,
        standalone_accuracy=standalone_acc,
        wall_time=time.perf_counter() - t0,
    )
    logger.info("round %d: best %.4f (trial %s), accepted=%s", rnd, acc, best.index, accepted)
    return new_state, report


def _best_completed(store):
    best = None
    for t in store:
        if t.status == COMPLETED and (best is None or t.loss < best.loss):
            best = t
    return best


# ---------------------------------------------------------------------------
# prediction


def ensemble_margins(state, images):
    """Chain every round's margins through its alpha and weights."""
    if state.J == 0:
        raise EmptyEnsembleError("ensemble has no rounds")
    m = None
    for r in state.rounds:
        m = svm.margins(r.model, r.pipeline.transform(images), m)
    return m


def predict_ensemble(state, images):
    return np.argmax(ensemble_margins(state, images), axis=1)


def monolithic(state):
    """The ensemble as one linear map over concatenated raw feature blocks.

    Returns ``(W, b)`` with ``W`` of shape (classes, total features) such that
    ``concat(features) @ W.T + b`` equals :func:`ensemble_margins`.
    """
    if state.J == 0:
        raise EmptyEnsembleError("ensemble has no rounds")
    k = state.class_count
    blocks = []
    bias = np.zeros(k)
    scale = np.ones(k)
    for r in reversed(state.rounds):
        w, b = r.model.raw_weights()
        blocks.append(w * scale[:, None])
        bias += b * scale
        if r.model.alpha is not None:
            scale = scale * r.model.alpha
    return np.concatenate(blocks[::-1], axis=1), bias


def refresh_margins(state, fit, valid):
    """Recompute the frozen fit/validation margins (after loading from disk)."""
    if state.J == 0:
        return replace(state, fit_margins=None, valid_margins=None)
    return replace(state, fit_margins=ensemble_margins(state, fit.images),
                   valid_margins=ensemble_margins(state, valid.images))


# ---------------------------------------------------------------------------
# persistence


def save_ensemble(state, directory):
    """Write ``manifest.json`` plus one sub-directory per round."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for j, r in enumerate(state.rounds, 1):
        rd = d / f"round_{j:02d}"
        rd.mkdir(exist_ok=True)
        svm.save_model(r.model, rd / "model.npz")
        np.savez(rd / "pipeline.npz", **r.pipeline.to_arrays())
        entries.append({
            "round": j,
            "seed": int(r.seed),
            "config": {k: (v.item() if isinstance(v, np.generic) else v) for k, v in r.config.values.items()},
            "valid_accuracy": r.valid_accuracy,
            "standalone_accuracy": r.standalone_accuracy,
            "model": f"{rd.name}/model.npz",
            "pipeline": f"{rd.name}/pipeline.npz",
        })
    manifest = {"version": ENSEMBLE_VERSION, "class_count": state.class_count, "history": state.history,
                "rounds": entries}
    tmp = d / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2))
    tmp.replace(d / "manifest.json")


def load_ensemble(directory):
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("version") != ENSEMBLE_VERSION:
        raise ValueError(f"unsupported ensemble version {manifest.get('version')}")
    rounds = []
    for e in manifest["rounds"]:
        cfg = Configuration(e["config"])
        pcfg = PipelineConfig.from_assignments(cfg.values)
        with np.load(d / e["pipeline"]) as z:
            fitted = FittedPipeline.from_arrays(pcfg, z)
        model = svm.load_model(d / e["model"])
        rounds.append(Round(cfg, e["seed"], fitted, model, e["valid_accuracy"], e.get("standalone_accuracy")))
    return EnsembleState(manifest["class_count"], rounds, history=list(manifest["history"]))
