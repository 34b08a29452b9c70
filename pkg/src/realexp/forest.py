"""Bagged regression trees used as the surrogate model.

Trees are grown on variance: each node takes the (feature, threshold) pair
that minimises ``w_left * Var(left) + w_right * Var(right)`` with ``w`` the
fraction of node samples going each way.  Candidate thresholds are midpoints
between consecutive distinct feature values.  Leaves predict the mean target.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .coalition import Attribution, Method, ValueFunction
from .errors import ValidationError
from .evaluation import r_squared

# relative slack under which two split objectives count as tied
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Leaf:
    prediction: float
    count: int


@dataclass(frozen=True)
class Internal:
    feature: int
    threshold: float
    left: "Leaf | Internal"
    right: "Leaf | Internal"
    count: int = 0
    gain: float = 0.0  # drop in SSE from this split


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 50
    max_depth: int = 12
    min_leaf: int = 2
    seed: int = 0
    bootstrap: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth < 0:
            raise ValidationError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.min_leaf < 1:
            raise ValidationError(f"min_leaf must be >= 1, got {self.min_leaf}")
        if self.n_jobs < 1:
            raise ValidationError(f"n_jobs must be >= 1, got {self.n_jobs}")


def best_split(X: np.ndarray, y: np.ndarray, min_leaf: int = 1):
    """Lowest weighted child variance over all features and midpoints.

    Returns ``(feature, threshold, objective)`` or ``None`` when no split
    leaves ``min_leaf`` samples on both sides.  Among candidates within a
    relative ``1e-12`` of the minimum, the lowest feature index wins, then the
    lowest threshold.
    """
    m = X.shape[0]
    if m < 2:
        return None
    yc = y - y.mean()
    scale = float(np.dot(yc, yc)) + 1e-300
    left_n = np.arange(1, m, dtype=float)[:, None]
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ys = yc[order]
    valid = (xs[1:] > xs[:-1]) & (left_n >= min_leaf) & (m - left_n >= min_leaf)
    if not valid.any():
        return None
    s = np.cumsum(ys, axis=0)
    q = np.cumsum(ys * ys, axis=0)
    sl, ql = s[:-1], q[:-1]
    sr, qr = s[-1] - sl, q[-1] - ql
    sse = (ql - sl * sl / left_n) + (qr - sr * sr / (m - left_n))
    sse = np.where(valid, sse, np.inf)
    near = sse <= sse.min() + _TIE_RTOL * scale
    f = int(np.flatnonzero(near.any(axis=0))[0])
    p = int(np.flatnonzero(near[:, f])[0])
    return f, 0.5 * (xs[p, f] + xs[p + 1, f]), max(float(sse[p, f]), 0.0) / m


def _grow(X, y, depth, params, n_root):
    m = len(y)
    mean = float(np.mean(y))
    if depth >= params.max_depth or m < 2 * params.min_leaf or np.ptp(y) == 0.0:
        return Leaf(mean, m)
    split = best_split(X, y, params.min_leaf)
    if split is None:
        return Leaf(mean, m)
    f, t, obj = split
    go_left = X[:, f] <= t
    parent = float(np.var(y))
    return Internal(
        feature=f,
        threshold=float(t),
        left=_grow(X[go_left], y[go_left], depth + 1, params, n_root),
        right=_grow(X[~go_left], y[~go_left], depth + 1, params, n_root),
        count=m,
        gain=max(parent - obj, 0.0) * m / n_root,
    )


class RegressionTree:
    """A fitted tree; ``sample_index`` records the rows it was grown on."""

    def __init__(self, root, n_features: int, sample_index=None):
        self.root = root
        self.n_features = n_features
        self.sample_index = sample_index
        self._compile()

    def _compile(self):
        feat, thr, left, right, value = [], [], [], [], []

        def visit(node):
            k = len(feat)
            feat.append(-1)
            thr.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            if isinstance(node, Leaf):
                value[k] = node.prediction
            else:
                feat[k], thr[k] = node.feature, node.threshold
                left[k] = visit(node.left)
                right[k] = visit(node.right)
            return k

        visit(self.root)
        self._feat = np.array(feat, dtype=np.int64)
        self._thr = np.array(thr, dtype=float)
        self._left = np.array(left, dtype=np.int64)
        self._right = np.array(right, dtype=np.int64)
        self._value = np.array(value, dtype=float)

    def apply(self, X) -> np.ndarray:
        """Index (in pre-order) of the leaf each row lands in."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self._feat[node] >= 0
        while active.any():
            r, k = rows[active], node[active]
            go_left = X[r, self._feat[k]] <= self._thr[k]
            node[r] = np.where(go_left, self._left[k], self._right[k])
            active = self._feat[node] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return self._value[self.apply(X)]

    @property
    def depth(self) -> int:
        def d(node):
            return 0 if isinstance(node, Leaf) else 1 + max(d(node.left), d(node.right))
        return d(self.root)

    def nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if isinstance(node, Internal):
                stack.extend((node.right, node.left))

    def to_dict(self):
        def enc(node):
            if isinstance(node, Leaf):
                return {"p": node.prediction, "c": node.count}
            return {"f": node.feature, "t": node.threshold, "l": enc(node.left),
                    "r": enc(node.right), "c": node.count, "g": node.gain}
        return enc(self.root)

    @classmethod
    def from_dict(cls, data, n_features: int):
        def dec(d):
            if "p" in d:
                return Leaf(float(d["p"]), int(d["c"]))
            return Internal(int(d["f"]), float(d["t"]), dec(d["l"]), dec(d["r"]),
                            int(d.get("c", 0)), float(d.get("g", 0.0)))
        return cls(dec(data), n_features)


def fit_tree(X, y, params: ForestParams = ForestParams(), sample_index=None) -> RegressionTree:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    return RegressionTree(_grow(X, y, 0, params, len(y)), X.shape[1], sample_index)


@dataclass
class FitReport:
    r2_train: float
    per_tree_depth: list
    oob_available: bool
    r2_holdout: float | None = None

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class EnsembleForest:
    trees: list
    n: int
    params: ForestParams
    baseline: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.trees:
            raise ValidationError("a forest needs at least one tree")
        self.baseline = np.zeros(self.n) if self.baseline is None else np.asarray(self.baseline, float)
        if self.baseline.shape != (self.n,):
            raise ValidationError(f"baseline must have {self.n} entries")

    def predict(self, x):
        """Mean tree prediction for one row (returns float) or many rows."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.n:
            raise ValidationError(f"expected rows of {self.n} features, got shape {x.shape}")
        if not np.all(np.isfinite(X)):
            raise ValidationError("prediction input must be finite")
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.predict(X)
        out = total / len(self.trees)
        return float(out[0]) if single else out

    def to_dict(self):
        return {
            "n": self.n,
            "params": asdict(self.params),
            "baseline": [float(b) for b in self.baseline],
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data):
        n = int(data["n"])
        return cls([RegressionTree.from_dict(t, n) for t in data["trees"]], n,
                   ForestParams(**data["params"]), data.get("baseline"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_arrays(X, y, params: ForestParams = ForestParams(), baseline=None):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValidationError(f"design shape {X.shape} does not match {y.shape[0]} targets")
    K = X.shape[0]
    if K < 2 * params.min_leaf:
        raise ValidationError(f"need at least {2 * params.min_leaf} samples, got {K}")
    seeds = np.random.SeedSequence(params.seed).spawn(params.n_trees)

    def one(ss):
        idx = np.random.default_rng(ss).integers(0, K, K) if params.bootstrap else np.arange(K)
        return fit_tree(X[idx], y[idx], params, idx)

    if params.n_jobs > 1:
        with ThreadPoolExecutor(params.n_jobs) as pool:
            trees = list(pool.map(one, seeds))
    else:
        trees = [one(ss) for ss in seeds]
    forest = EnsembleForest(trees, X.shape[1], params, baseline)
    r2, _ = r_squared(y, forest.predict(X), return_flag=True)
    report = FitReport(r2, [t.depth for t in trees], oob_available=params.bootstrap)
    return forest, report


def fit(design, params: ForestParams = ForestParams(), baseline=None):
    """Fit the surrogate to a :class:`~realexp.perturbation.PerturbationSet`."""
    if design.scores is None:
        raise ValidationError("design has no scores to fit")
    return fit_arrays(design.matrix, design.scores, params, baseline)


def coalition_rows(instance, baseline, masks) -> np.ndarray:
    """One row per coalition mask: instance values where present, baseline elsewhere."""
    instance = np.asarray(instance, dtype=float)
    baseline = np.asarray(baseline, dtype=float)
    n = instance.size
    masks = np.asarray(masks, dtype=np.int64)
    present = (masks[:, None] >> np.arange(n)) & 1
    return np.where(present.astype(bool), instance, baseline)


def coalition_value(forest: EnsembleForest, instance, coalition) -> float:
    from .coalition import to_mask
    mask = coalition if isinstance(coalition, (int, np.integer)) else to_mask(coalition)
    if mask >> forest.n:
        raise ValidationError(f"coalition uses features beyond n={forest.n}")
    return float(forest.predict(coalition_rows(instance, forest.baseline, [mask]))[0])


class ForestGame(ValueFunction):
    """The surrogate viewed as a cooperative game around one instance."""

    _BATCH = 1 << 16

    def __init__(self, forest: EnsembleForest, instance=None):
        super().__init__(forest.n)
        self.forest = forest
        self.instance = np.ones(forest.n) if instance is None else np.asarray(instance, float)
        if self.instance.shape != (forest.n,):
            raise ValidationError(f"instance must have {forest.n} entries")

    def _evaluate(self, masks):
        out = np.empty(len(masks))
        for a in range(0, len(masks), self._BATCH):
            rows = coalition_rows(self.instance, self.forest.baseline, masks[a:a + self._BATCH])
            out[a:a + self._BATCH] = self.forest.predict(rows)
        return out


def tree_gain_importance(forest: EnsembleForest) -> Attribution:
    """Variance-reduction importance, averaged over trees and normalised to sum 1."""
    total = np.zeros(forest.n)
    for tree in forest.trees:
        for node in tree.nodes():
            if isinstance(node, Internal):
                total[node.feature] += node.gain
    total /= len(forest.trees)
    s = total.sum()
    if s > 0:
        total = total / s
    return Attribution(total, Method.TREE_GAIN)
