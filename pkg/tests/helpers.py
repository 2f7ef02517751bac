"""Shared builders for tests: random conditional spaces and tiny datasets."""
import numpy as np

from nullboost.searchspace import define_space


def random_space_spec(rng, max_depth=3, width=4, _prefix="p", _depth=0):
    """Random well-formed nested space description with unique names."""
    nodes = []
    n = int(rng.integers(1, width + 1))
    for i in range(n):
        name = f"{_prefix}{i}"
        kind = rng.choice(["uniform", "loguniform", "quniform", "qloguniform", "categorical", "choice"])
        if kind == "choice" and _depth < max_depth:
            k = int(rng.integers(1, 4))
            branches = {}
            for b in range(k):
                if rng.random() < 0.3:
                    branches[f"b{b}"] = []
                else:
                    branches[f"b{b}"] = random_space_spec(rng, max_depth, width, f"{name}_{b}_", _depth + 1)
            nodes.append({"name": name, "kind": "choice", "branches": branches})
            continue
        if kind in ("choice", "categorical"):
            opts = list(rng.choice([1, 2, 3, "a", "b", True, 0.5], size=int(rng.integers(1, 5)), replace=False))
            opts = [o.item() if hasattr(o, "item") else o for o in opts]
            nodes.append({"name": name, "kind": "categorical", "args": {"options": opts}})
            continue
        lo = float(rng.uniform(0.01, 5))
        hi = lo + float(rng.uniform(0.5, 50))
        args = {"lo": lo, "hi": hi}
        if kind.startswith("q"):
            args["q"] = float(rng.choice([0.1, 0.5, 1.0, 2.0]))
        nodes.append({"name": name, "kind": kind, "args": args})
    return nodes


def random_space(seed, **kw):
    return define_space(random_space_spec(np.random.default_rng(seed), **kw))


def blobs(n=200, k=2, side=16, seed=0):
    from nullboost.harness.data import make_synthetic
    return make_synthetic({"n": n, "side": side, "class_count": k, "generator": "blobs"}, seed)


BASIN_SPACE = [
    {"name": "x", "kind": "uniform", "args": {"lo": -5.0, "hi": 10.0}},
    {"name": "y", "kind": "uniform", "args": {"lo": 0.0, "hi": 15.0}},
]


def basin(cfg):
    """Smooth single-basin bowl, minimum 0 at (1.5, 11.0)."""
    x, y = cfg["x"], cfg["y"]
    return ((x - 1.5) / 15.0) ** 2 + ((y - 11.0) / 15.0) ** 2 + 0.5 * ((x - 1.5) * (y - 11.0) / 225.0)


def median_best(strategy, n_seeds=20, n_trials=50):
    from nullboost.optimizer import minimize
    space = define_space(BASIN_SPACE)
    best = []
    for s in range(n_seeds):
        store = minimize(basin, space, n_trials, strategy=strategy, seed=s)
        best.append(min(t.loss for t in store))
    return float(np.median(best))


def svm_oracle(xs, labels, k, C, frozen=None):
    """Per-class squared-hinge objective minimised by an interior-point solver."""
    import cvxpy as cp
    total = 0.0
    for c in range(k):
        y = np.where(labels == c, 1.0, -1.0)
        w, b = cp.Variable(xs.shape[1]), cp.Variable()
        m = xs @ w + b
        obj = 0.5 * cp.sum_squares(w)
        if frozen is not None:
            a = cp.Variable()
            m = m + a * frozen[:, c]
            obj = obj + 0.5 * cp.square(a)
        obj = obj + C * cp.sum_squares(cp.pos(1 - cp.multiply(y, m)))
        prob = cp.Problem(cp.Minimize(obj))
        prob.solve(solver="CLARABEL", tol_gap_abs=1e-10, tol_gap_rel=1e-10)
        total += prob.value
    return total


def oracle_instances(n_instances=50, seed=0):
    """Random small problems: up to 30 examples, 8 features, 4 classes."""
    rng = np.random.default_rng(seed)
    for i in range(n_instances):
        n = int(rng.integers(5, 31))
        d = int(rng.integers(1, 9))
        k = int(rng.integers(2, 5))
        x = rng.normal(size=(n, d)) * rng.uniform(0.1, 5, size=d)
        labels = rng.integers(0, k, size=n)
        C = float(10 ** rng.uniform(-2, 2))
        frozen = rng.normal(size=(n, k)) * 2 if i % 2 else None
        yield x, labels, k, C, frozen


def oracle_gaps(n_instances=50, seed=0):
    from nullboost import svm
    gaps = []
    for x, labels, k, C, frozen in oracle_instances(n_instances, seed):
        model = svm.fit(x, labels, C, frozen=frozen, class_count=k)
        ours = svm.total_objective(model, x, labels, frozen)
        ref = svm_oracle((x - model.mean) / model.scale, labels, k, C, frozen)
        gaps.append((ours - ref) / abs(ref))
    return np.array(gaps)


def two_view_splits(n=600, n_fit=300, seed=0):
    from nullboost.harness.data import make_synthetic, split
    from nullboost.hyperboost import Split
    ds = split(make_synthetic({"n": n, "side": 16, "class_count": 4, "generator": "two-view"}, seed),
               n_fit, n - n_fit, seed)
    return Split(*ds.subset("fit"), "fit"), Split(*ds.subset("valid"), "valid")


def chained_blocks(n=60, k=3, widths=(5, 7, 4), seed=0):
    """Fit three blocks in sequence on random features; returns (blocks, models)."""
    from nullboost import svm
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, k, size=n)
    blocks, models, frozen = [], [], None
    for w in widths:
        x = rng.normal(size=(n, w)) * rng.uniform(0.5, 3, size=w) + rng.normal(size=w) + labels[:, None] * 0.3
        m = svm.fit(x, labels, float(rng.uniform(0.1, 5)), frozen=frozen, class_count=k)
        frozen = svm.margins(m, x, frozen)
        blocks.append(x)
        models.append(m)
    return blocks, models, frozen
