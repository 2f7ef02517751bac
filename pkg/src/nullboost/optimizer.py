"""Random search and the tree-structured Parzen estimator (TPE).

TPE splits completed trials into a good fraction ``gamma`` and the rest, fits
one Parzen density per active parameter to each group, and proposes the prior-
smoothed good-density draw that maximises the good/bad likelihood ratio.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .searchspace import Configuration, _same

PENDING, COMPLETED, DEGENERATE, FAILED = "pending", "completed", "degenerate", "failed"
STATUSES = (PENDING, COMPLETED, DEGENERATE, FAILED)


class UnknownPendingTrialError(KeyError):
    pass


class NoCompletedTrialsError(ValueError):
    pass


@dataclass
class Trial:
    config: Configuration
    status: str = PENDING
    loss: float | None = None
    round: int = 1
    wall_time: float = 0.0
    seed: int = 0
    index: int | None = None
    reason: str | None = None
    # in-memory extras (accuracies, chosen C, fitted artifacts); never logged
    info: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"bad status {self.status!r}")
        if (self.loss is not None) != (self.status == COMPLETED):
            raise ValueError("loss must be present iff status is completed")
        if self.status == DEGENERATE and not self.reason:
            raise ValueError("degenerate trials need a reason")


class TrialStore:
    """Append-only, index-stable sequence of trials."""

    def __init__(self, trials=()):
        self.trials = []
        for t in trials:
            self.report(t)

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    def __getitem__(self, i):
        return self.trials[i]

    def count(self, status):
        return sum(t.status == status for t in self.trials)

    @property
    def n_completed(self):
        return self.count(COMPLETED)

    def completed(self):
        return [t for t in self.trials if t.status == COMPLETED]

    def head(self, n):
        """A store holding only the first ``n`` trials."""
        s = TrialStore()
        s.trials = self.trials[:n]
        return s

    def report(self, trial):
        """Append ``trial``, or complete the pending trial with its index."""
        if trial.index is None:
            trial.index = len(self.trials)
            self.trials.append(trial)
            return self
        if trial.index == len(self.trials):
            self.trials.append(trial)
            return self
        if not (0 <= trial.index < len(self.trials)) or self.trials[trial.index].status != PENDING:
            raise UnknownPendingTrialError(trial.index)
        self.trials[trial.index] = trial
        return self


def report(store, trial):
    return store.report(trial)


@dataclass(frozen=True)
class TpeParams:
    gamma: float = 0.25
    n_candidates: int = 24
    n_startup: int = 20
    bandwidth: str = "neighbor"

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        if self.n_startup < 0:
            raise ValueError("n_startup must be >= 0")
        if self.bandwidth != "neighbor":
            raise ValueError(f"unknown bandwidth rule {self.bandwidth!r}")


# ---------------------------------------------------------------------------
# split


def tpe_split(store, gamma):
    done = [t for t in store if t.status == COMPLETED]
    if not done:
        raise NoCompletedTrialsError("tpe_split needs at least one completed trial")
    order = sorted(range(len(done)), key=lambda i: (done[i].loss, done[i].index if done[i].index is not None else i))
    n_good = math.ceil(gamma * len(done))
    good = [done[i] for i in order[:n_good]]
    bad = [done[i] for i in order[n_good:]]
    return good, bad


# ---------------------------------------------------------------------------
# per-parameter Parzen densities


class _NumericDensity:
    """Equal-weight mixture of one uniform prior component and one truncated
    Gaussian per observation, in the parameter's sampling coordinate."""

    def __init__(self, spec, observations):
        self.spec = spec
        self.lo, self.hi = spec.bounds()
        span = self.hi - self.lo
        mus = np.sort(np.array([spec.to_internal(v) for v in observations], dtype=float))
        n = len(mus)
        if n == 0:
            sigmas = np.empty(0)
        elif n == 1:
            sigmas = np.array([span])
        else:
            gaps = np.diff(mus)
            left = np.concatenate([[gaps[0]], gaps])
            right = np.concatenate([gaps, [gaps[-1]]])
            sigmas = np.maximum(left, right)
        if n:
            sigmas = np.clip(sigmas, span / min(100.0, n), span)
        self.mus, self.sigmas = mus, sigmas
        self.weight = 1.0 / (n + 1)
        if n:
            self.mass = ndtr((self.hi - mus) / sigmas) - ndtr((self.lo - mus) / sigmas)

    def log_pdf(self, value):
        u = self.spec.to_internal(value)
        p = 1.0 / (self.hi - self.lo)
        if len(self.mus):
            z = (u - self.mus) / self.sigmas
            k = np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * self.sigmas * self.mass)
            p += float(k.sum())
        return math.log(p * self.weight)

    def sample(self, rng):
        j = int(rng.integers(len(self.mus) + 1))
        if j == len(self.mus):
            u = rng.uniform(self.lo, self.hi)
        else:
            mu, sd = self.mus[j], self.sigmas[j]
            for _ in range(100):
                u = rng.normal(mu, sd)
                if self.lo <= u <= self.hi:
                    break
            else:
                u = min(max(u, self.lo), self.hi)
        return self.spec.from_internal(float(u))


class _CategoricalDensity:
    """Add-one smoothed option counts (uniform prior weights)."""

    def __init__(self, spec, observations):
        self.spec = spec
        self.options = spec.choices
        counts = np.ones(len(self.options))
        for v in observations:
            for i, o in enumerate(self.options):
                if _same(o, v):
                    counts[i] += 1
                    break
        self.probs = counts / counts.sum()

    def _index(self, value):
        for i, o in enumerate(self.options):
            if _same(o, value):
                return i
        raise KeyError(value)

    def log_pdf(self, value):
        return math.log(self.probs[self._index(value)])

    def sample(self, rng):
        return self.options[int(rng.choice(len(self.options), p=self.probs))]


class TreeDensity:
    """Product of per-node densities over the active nodes of a configuration.

    A trial contributes to a node's density only when that node was active in
    the trial; nodes nobody visited fall back to the prior.
    """

    def __init__(self, space, trials):
        self.space = space
        obs = {}
        for t in trials:
            for name, p in space.active(t.config.values).items():
                if name in t.config.values:
                    obs.setdefault(p.path, []).append(t.config.values[name])
        self._obs = obs
        self._cache = {}

    def node(self, p):
        d = self._cache.get(p.path)
        if d is None:
            data = self._obs.get(p.path, [])
            d = _CategoricalDensity(p, data) if p.is_discrete else _NumericDensity(p, data)
            self._cache[p.path] = d
        return d

    def log_pdf(self, config):
        values = config.values if isinstance(config, Configuration) else config
        return sum(self.node(p).log_pdf(values[name]) for name, p in self.space.active(values).items())

    def sample(self, rng):
        values = {}
        stack = list(reversed(self.space.root))
        while stack:
            p = stack.pop()
            values[p.name] = self.node(p).sample(rng)
            if p.kind == "choice":
                stack.extend(reversed(p.branches[values[p.name]]))
        return Configuration(values, self.space.space_id)


def tpe_log_score(candidate, good, bad):
    return good.log_pdf(candidate) - bad.log_pdf(candidate)


def tpe_score(candidate, good, bad):
    """Good/bad likelihood ratio over the candidate's active parameters."""
    return math.exp(tpe_log_score(candidate, good, bad))


# ---------------------------------------------------------------------------
# suggestion


def suggest(store, space, params=None, strategy="tpe", rng=None):
    """Propose one configuration.

    Pending, degenerate and failed trials are ignored. With ``strategy="random"``
    or fewer than ``params.n_startup`` completed trials this is a prior draw.
    """
    params = params or TpeParams()
    rng = rng if rng is not None else np.random.default_rng()
    if strategy == "random" or store.n_completed < max(params.n_startup, 1):
        if strategy not in ("random", "tpe"):
            raise ValueError(f"unknown strategy {strategy!r}")
        return space.sample(rng)
    if strategy != "tpe":
        raise ValueError(f"unknown strategy {strategy!r}")
    good_trials, bad_trials = tpe_split(store, params.gamma)
    good = TreeDensity(space, good_trials)
    bad = TreeDensity(space, bad_trials)
    best, best_score = None, -math.inf
    for _ in range(params.n_candidates):
        cand = good.sample(rng)
        s = tpe_log_score(cand, good, bad)
        if s > best_score:
            best, best_score = cand, s
    return best


def minimize(objective, space, n_trials, strategy="tpe", params=None, seed=0):
    """Sequential optimisation of ``objective(config) -> loss``; returns the store."""
    store = TrialStore()
    for i in range(n_trials):
        rng = np.random.default_rng([seed, i])
        cfg = suggest(store, space, params, strategy, rng)
        store.report(Trial(cfg, COMPLETED, float(objective(cfg)), seed=seed))
    return store


# ---------------------------------------------------------------------------
# trial log (one JSON object per line)

LOG_FIELDS = ("index", "round", "status", "loss", "wall_time", "seed", "config")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


def trial_record(trial):
    return {
        "index": trial.index,
        "round": trial.round,
        "status": trial.status,
        "loss": trial.loss,
        "wall_time": round(float(trial.wall_time), 6),
        "seed": int(trial.seed),
        "config": {k: _jsonable(v) for k, v in trial.config.values.items()},
    }


def append_trial(path, trial):
    with open(path, "a") as fh:
        fh.write(json.dumps(trial_record(trial)) + "\n")


def read_trials(path, space=None):
    """Rebuild per-round trial stores from a log: ``{round: TrialStore}``.

    A torn final line (interrupted write) is ignored.
    """
    stores = {}
    sid = space.space_id if space is not None else ""
    with open(path) as fh:
        lines = fh.read().splitlines()
    for n, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            if n == len(lines) - 1:
                break
            raise
        status = rec["status"]
        t = Trial(
            Configuration(rec["config"], sid),
            status=status,
            loss=rec["loss"],
            round=rec["round"],
            wall_time=rec["wall_time"],
            seed=rec["seed"],
            index=rec["index"],
            reason="recorded in trial log" if status == DEGENERATE else None,
        )
        stores.setdefault(t.round, TrialStore()).report(t)
    return stores
