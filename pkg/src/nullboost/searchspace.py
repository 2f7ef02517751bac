"""Tree-structured conditional hyperparameter spaces.

A space is a list of :class:`ParamSpec` nodes. A ``choice`` node owns one
sub-list of nodes per option; those nodes are active only when that option is
drawn. Configurations map parameter *names* to values; names are unique along
every root-to-leaf path, so the active names of any configuration never
collide.

Space description files are YAML (JSON is accepted, being a YAML subset)::

    - name: resolution
      kind: quniform
      args: {lo: 8, hi: 48, q: 4}
    - name: depth
      kind: choice
      branches:
        1: []
        2:
          - {name: l2_nfilters, kind: quniform, args: {lo: 4, hi: 32, q: 1}}

Kinds and their ``args``: ``uniform``/``loguniform`` take ``lo``, ``hi``;
``quniform``/``qloguniform`` additionally take ``q``; ``categorical`` takes
``options`` (a list). ``choice`` takes ``branches`` (a mapping from option to
a list of nodes) instead of ``args``. Nested lists of nodes are flattened, so
a branch can reuse a YAML anchor and add to it: ``[*layer2, [...]]``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

RANGED = ("uniform", "loguniform", "quniform", "qloguniform")
KINDS = RANGED + ("categorical", "choice")


class MalformedSpaceError(ValueError):
    """Raised by :func:`define_space`; ``node`` is the offending node path."""

    def __init__(self, node, reason):
        super().__init__(f"{node}: {reason}")
        self.node = node
        self.reason = reason


@dataclass(frozen=True, eq=False)
class ParamSpec:
    name: str
    kind: str
    lo: float | None = None
    hi: float | None = None
    q: float | None = None
    options: tuple = ()
    branches: dict = field(default_factory=dict)
    path: str = ""

    @property
    def is_log(self):
        return self.kind in ("loguniform", "qloguniform")

    @property
    def is_quantized(self):
        return self.kind in ("quniform", "qloguniform")

    @property
    def is_discrete(self):
        return self.kind in ("categorical", "choice")

    @property
    def choices(self):
        """Options of a categorical or choice node, in declaration order."""
        return tuple(self.branches) if self.kind == "choice" else self.options

    @property
    def integral(self):
        return self.is_quantized and all(float(x).is_integer() for x in (self.lo, self.hi, self.q))

    def bounds(self):
        """Range in the sampling coordinate (log-space for log kinds)."""
        if self.is_log:
            return math.log(self.lo), math.log(self.hi)
        return float(self.lo), float(self.hi)

    def to_internal(self, value):
        return math.log(value) if self.is_log else float(value)

    def from_internal(self, u):
        """Map a sampling-coordinate value back to a legal parameter value."""
        x = math.exp(u) if self.is_log else u
        if self.is_quantized:
            x = round(x / self.q) * self.q
        x = min(max(x, self.lo), self.hi)
        if self.integral:
            return int(round(x))
        return float(x)

    def contains(self, value):
        if self.is_discrete:
            return any(_same(value, o) for o in self.choices)
        if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
            return False
        value = float(value)
        if not (self.lo <= value <= self.hi) or not math.isfinite(value):
            return False
        if self.is_quantized:
            k = value / self.q
            on_grid = abs(k - round(k)) <= 1e-9 * max(1.0, abs(k))
            return on_grid or value in (self.lo, self.hi)
        return True

    def describe(self):
        d = {"name": self.name, "kind": self.kind}
        if self.kind == "choice":
            d["branches"] = {k: [p.describe() for p in v] for k, v in self.branches.items()}
        elif self.kind == "categorical":
            d["args"] = {"options": list(self.options)}
        else:
            d["args"] = {"lo": self.lo, "hi": self.hi}
            if self.is_quantized:
                d["args"]["q"] = self.q
        return d


def _same(a, b):
    if isinstance(a, bool) or isinstance(b, bool):
        return a is b or (type(a) is type(b) and a == b)
    try:
        return a == b
    except Exception:
        return False


@dataclass(frozen=True)
class Configuration:
    values: dict
    space_id: str = ""

    def __getitem__(self, name):
        return self.values[name]

    def get(self, name, default=None):
        return self.values.get(name, default)

    def __contains__(self, name):
        return name in self.values


class SearchSpace:
    """Immutable tree of :class:`ParamSpec` nodes."""

    def __init__(self, root, description):
        self.root = tuple(root)
        self._description = description
        blob = json.dumps(description, sort_keys=True, default=str).encode()
        self.space_id = hashlib.sha1(blob).hexdigest()[:12]
        self.nodes = {}
        self._names = set()
        self._walk_register(self.root)

    def _walk_register(self, nodes):
        for p in nodes:
            self.nodes[p.path] = p
            self._names.add(p.name)
            for sub in p.branches.values():
                self._walk_register(sub)

    @property
    def names(self):
        return frozenset(self._names)

    def __len__(self):
        return len(self.nodes)

    def describe(self):
        return self._description

    def active(self, values):
        """Active nodes for an assignment, as ``{name: ParamSpec}``.

        Walks the tree following the assigned choice options; a choice without
        a legal value stops the descent below it.
        """
        out = {}
        stack = list(reversed(self.root))
        while stack:
            p = stack.pop()
            out[p.name] = p
            if p.kind == "choice" and p.name in values:
                key = _branch_key(p, values[p.name])
                if key is not None:
                    stack.extend(reversed(p.branches[key]))
        return out

    def sample(self, rng):
        """Draw a configuration from the prior, depth-first."""
        values = {}
        stack = list(reversed(self.root))
        while stack:
            p = stack.pop()
            values[p.name] = sample_param(p, rng)
            if p.kind == "choice":
                stack.extend(reversed(p.branches[values[p.name]]))
        return Configuration(values, self.space_id)

    def validate(self, config):
        """Violation messages; an empty list means the configuration is valid."""
        values = config.values if isinstance(config, Configuration) else dict(config)
        act = self.active(values)
        problems = []
        for name, p in act.items():
            if name not in values:
                problems.append(f"missing active parameter: {name}")
            elif not p.contains(values[name]):
                problems.append(f"value out of domain: {name}={values[name]!r}")
        for name in values:
            if name in act:
                continue
            if name in self._names:
                problems.append(f"inactive parameter assigned: {name}")
            else:
                problems.append(f"unknown parameter: {name}")
        return problems


def _branch_key(p, value):
    for k in p.branches:
        if _same(k, value):
            return k
    return None


def sample_param(p, rng):
    if p.is_discrete:
        opts = p.choices
        return opts[int(rng.integers(len(opts)))]
    lo, hi = p.bounds()
    return p.from_internal(float(rng.uniform(lo, hi)))


def sample(space, rng):
    return space.sample(rng)


def validate(space, config):
    return space.validate(config)


# ---------------------------------------------------------------------------
# construction


def define_space(spec):
    """Build a validated :class:`SearchSpace` from a list of node dicts."""
    if isinstance(spec, dict):
        spec = spec.get("space", spec.get("params"))
    if not isinstance(spec, (list, tuple)) or not spec:
        raise MalformedSpaceError("<root>", "space must be a non-empty list of nodes")
    root = _parse_nodes(spec, "", frozenset())
    return SearchSpace(root, [p.describe() for p in root])


def load_space(path):
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return define_space(data)


def _flatten(nodes):
    for n in nodes:
        if isinstance(n, (list, tuple)):
            yield from _flatten(n)
        else:
            yield n


def _parse_nodes(nodes, prefix, seen):
    nodes = list(_flatten(nodes))
    out = []
    local = set()
    for i, raw in enumerate(nodes):
        where = f"{prefix}[{i}]"
        if not isinstance(raw, dict):
            raise MalformedSpaceError(where, "node must be a mapping")
        name = raw.get("name")
        if not isinstance(name, str) or not name:
            raise MalformedSpaceError(where, "missing name")
        where = f"{prefix}/{name}" if prefix else name
        if name in seen or name in local:
            raise MalformedSpaceError(where, f"duplicate name {name!r} on one path")
        local.add(name)
        out.append(_parse_node(raw, name, where, seen | local))
    # nested names must not clash with siblings either (they share a path)
    for p in out:
        for other in out:
            for sub_name in _descendant_names(p):
                if sub_name == other.name:
                    raise MalformedSpaceError(f"{p.path}", f"duplicate name {sub_name!r} on one path")
    return out


def _descendant_names(p):
    for sub in p.branches.values():
        for q in sub:
            yield q.name
            yield from _descendant_names(q)


def _parse_node(raw, name, where, seen):
    kind = raw.get("kind")
    if kind not in KINDS:
        raise MalformedSpaceError(where, f"unknown kind {kind!r}")
    args = raw.get("args") or {}
    if not isinstance(args, dict):
        raise MalformedSpaceError(where, "args must be a mapping")
    if kind == "choice":
        branches = raw.get("branches")
        if not isinstance(branches, dict) or not branches:
            raise MalformedSpaceError(where, "choice needs at least one branch")
        parsed = {}
        for key, sub in branches.items():
            if sub is None:
                sub = []
            if not isinstance(sub, (list, tuple)):
                raise MalformedSpaceError(f"{where}={key}", "branch must be a list of nodes")
            parsed[key] = tuple(_parse_nodes(sub, f"{where}={key}", seen)) if sub else ()
        return ParamSpec(name, kind, branches=parsed, path=where)
    if kind == "categorical":
        options = args.get("options")
        if not isinstance(options, (list, tuple)) or not options:
            raise MalformedSpaceError(where, "categorical needs at least one option")
        return ParamSpec(name, kind, options=tuple(options), path=where)
    try:
        lo, hi = float(args["lo"]), float(args["hi"])
    except (KeyError, TypeError, ValueError):
        raise MalformedSpaceError(where, "ranged kinds need numeric lo and hi") from None
    if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
        raise MalformedSpaceError(where, "need lo < hi")
    if kind in ("loguniform", "qloguniform") and lo <= 0:
        raise MalformedSpaceError(where, "log kinds need lo > 0")
    q = None
    if kind in ("quniform", "qloguniform"):
        try:
            q = float(args["q"])
        except (KeyError, TypeError, ValueError):
            raise MalformedSpaceError(where, "quantized kinds need numeric q") from None
        if not q > 0:
            raise MalformedSpaceError(where, "need q > 0")
    return ParamSpec(name, kind, lo=lo, hi=hi, q=q, path=where)


def builtin_space_path(name):
    """Path of a space file shipped with the package (``image`` or ``two_view``)."""
    p = Path(__file__).parent / "spaces" / f"{name}.yaml"
    if not p.exists():
        raise FileNotFoundError(p)
    return p
