"""Coalitions, value functions and attribution routines.

A coalition is a subset of ``{0, ..., n-1}`` stored as an ``int`` bit mask
(bit ``i`` set means feature ``i`` is present).  Every routine here pulls the
payoffs it needs from a :class:`ValueFunction` in one vectorised call and then
works on plain arrays, so the reduction order never depends on how the value
function itself is evaluated.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    CapacityError,
    EvaluationError,
    InsufficientDataError,
    ValidationError,
)

MAX_EXACT_FEATURES = 20
MAX_EXHAUSTIVE_FEATURES = 10
_PERM_CHUNK = 50_000


# -- coalitions ---------------------------------------------------------------

def to_mask(members: Iterable[int]) -> int:
    mask = 0
    for j in members:
        j = int(j)
        if j < 0:
            raise ValidationError(f"negative feature index {j}")
        mask |= 1 << j
    return mask


def members(mask: int, n: int | None = None) -> tuple[int, ...]:
    mask = int(mask)
    n = mask.bit_length() if n is None else n
    return tuple(j for j in range(n) if mask >> j & 1)


def popcount(masks: np.ndarray, n: int) -> np.ndarray:
    masks = np.asarray(masks, dtype=np.int64)
    out = np.zeros(masks.shape, dtype=np.int64)
    for b in range(n):
        out += (masks >> b) & 1
    return out


@dataclass(frozen=True)
class FeatureSet:
    n: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValidationError(f"feature count must be >= 1, got {self.n}")
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != self.n:
                raise ValidationError(f"expected {self.n} labels, got {len(labels)}")
            if len(set(labels)) != len(labels):
                raise ValidationError("feature labels must be distinct")
            object.__setattr__(self, "labels", labels)


# -- value functions ------------------------------------------------------------

class ValueFunction:
    """Deterministic payoff ``v(S)`` for every coalition ``S`` over ``n`` features.

    Subclasses implement :meth:`_evaluate`, which receives an int64 array of
    coalition masks and returns one payoff per mask.
    """

    def __init__(self, n: int):
        n = int(n)
        if n < 1:
            raise ValidationError(f"feature count must be >= 1, got {n}")
        self.n = n

    def _evaluate(self, masks: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def values(self, masks) -> np.ndarray:
        masks = np.asarray(masks, dtype=np.int64).ravel()
        if masks.size and (masks.min() < 0 or masks.max() >= 1 << self.n):
            raise ValidationError(f"coalition mask out of range for n={self.n}")
        out = np.asarray(self._evaluate(masks), dtype=float).ravel()
        if out.shape != masks.shape:
            raise EvaluationError(
                f"value function returned {out.size} values for {masks.size} coalitions"
            )
        bad = ~np.isfinite(out)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise EvaluationError(
                f"non-finite payoff {out[k]} for coalition {set(members(masks[k], self.n)) or '{}'}"
            )
        return out

    def __call__(self, coalition) -> float:
        mask = coalition if isinstance(coalition, (int, np.integer)) else to_mask(coalition)
        return float(self.values([mask])[0])

    def table(self) -> np.ndarray:
        """Payoffs of all ``2**n`` coalitions, indexed by mask."""
        if self.n > MAX_EXACT_FEATURES:
            raise CapacityError(
                f"cannot tabulate 2^{self.n} coalitions (cap is n={MAX_EXACT_FEATURES})"
            )
        return self.values(np.arange(1 << self.n, dtype=np.int64))


class TableGame(ValueFunction):
    """Game given by an explicit table of all ``2**n`` payoffs."""

    def __init__(self, n: int, table):
        super().__init__(n)
        if self.n > MAX_EXACT_FEATURES:
            raise CapacityError(f"table games are limited to n <= {MAX_EXACT_FEATURES}")
        table = np.array(table, dtype=float)
        if table.shape != (1 << self.n,):
            raise ValidationError(f"table must hold 2^{self.n} values, got shape {table.shape}")
        table.setflags(write=False)
        self._table = table

    def _evaluate(self, masks):
        return self._table[masks]

    def table(self):
        self.values(np.arange(1 << self.n))  # finiteness check
        return self._table

    @classmethod
    def from_function(cls, n: int, fn: Callable[[frozenset], float]) -> "TableGame":
        return cls(n, [fn(frozenset(members(m, n))) for m in range(1 << n)])

    @classmethod
    def from_dict(cls, data: dict) -> "TableGame":
        try:
            n = int(data["n"])
            raw = data["values"]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"game fixture needs 'n' and 'values': {exc}") from None
        size = 1 << n
        keys = {int(k) for k in raw}
        if keys != set(range(size)):
            missing = sorted(set(range(size)) - keys)[:5]
            raise ValidationError(f"game fixture must cover all {size} coalitions; missing {missing}")
        table = np.empty(size)
        for k, val in raw.items():
            table[int(k)] = float(val)
        return cls(n, table)

    @classmethod
    def load(cls, path) -> "TableGame":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {"n": self.n, "values": {str(m): float(x) for m, x in enumerate(self._table)}}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")


class FunctionGame(ValueFunction):
    """Wrap a Python callable taking a ``frozenset`` of feature indices."""

    def __init__(self, n: int, fn: Callable[[frozenset], float]):
        super().__init__(n)
        self.fn = fn

    def _evaluate(self, masks):
        return np.array([self.fn(frozenset(members(m, self.n))) for m in masks], dtype=float)


def _check_arity(v: ValueFunction, n: int | None) -> int:
    if not isinstance(v, ValueFunction):
        raise ValidationError(f"expected a ValueFunction, got {type(v).__name__}")
    if n is not None and int(n) != v.n:
        raise ValidationError(f"feature count {n} does not match value function arity {v.n}")
    return v.n


# -- similarity -----------------------------------------------------------------

def check_similarity(s, n: int | None = None, atol: float = 1e-12) -> np.ndarray:
    """Validate a pairwise similarity matrix and return a read-only float copy."""
    s = np.array(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValidationError(f"similarity must be a square matrix, got shape {s.shape}")
    if n is not None and s.shape[0] != n:
        raise ValidationError(f"similarity is {s.shape[0]}x{s.shape[0]}, expected {n}x{n}")
    if not np.all(np.isfinite(s)):
        raise ValidationError("similarity has non-finite entries")
    if np.any(s < -atol) or np.any(s > 1 + atol):
        raise ValidationError("similarity entries must lie in [0, 1]")
    if not np.allclose(s, s.T, atol=atol, rtol=0):
        raise ValidationError("similarity must be symmetric")
    if not np.allclose(np.diag(s), 1.0, atol=atol, rtol=0):
        raise ValidationError("similarity diagonal must be 1")
    s = np.clip(s, 0.0, 1.0)
    s.setflags(write=False)
    return s


def zero_similarity(n: int) -> np.ndarray:
    """Similarity with no correlation between distinct features."""
    return check_similarity(np.eye(n))


def estimate_similarity(design, weights=None) -> np.ndarray:
    """Absolute weighted Pearson correlation between mask columns.

    ``design`` is either a :class:`~realexp.perturbation.PerturbationSet`,
    whose binary masks are correlated under its sample weights ``adj_k``, or
    a ``(samples, n)`` array with optional ``weights`` (uniform by default).
    Zero-variance columns get similarity 0 to every other column.
    """
    if hasattr(design, "masks") and hasattr(design, "weight"):
        x = np.asarray(design.masks, dtype=float)
        w = np.asarray(design.weight, dtype=float)
    else:
        x = np.asarray(design, dtype=float)
        w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=float)
    if x.ndim != 2:
        raise ValidationError("design must be two-dimensional")
    k, n = x.shape
    if w.shape != (k,) or not np.all(np.isfinite(w)) or np.any(w < 0) or w.sum() <= 0:
        raise ValidationError("weights must be finite, non-negative and not all zero")
    if k < 2:
        raise InsufficientDataError(f"need at least 2 samples to estimate similarity, got {k}")
    if n == 1:
        return check_similarity([[1.0]], 1)
    w = w / w.sum()
    xc = x - w @ x
    cov = (xc * w[:, None]).T @ xc
    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    live = sd > 1e-12 * max(1.0, float(np.abs(x).max()))
    s = np.zeros((n, n))
    if live.any():
        s[np.ix_(live, live)] = np.abs(cov[np.ix_(live, live)] / np.outer(sd[live], sd[live]))
    s = np.clip((s + s.T) / 2.0, 0.0, 1.0)
    np.fill_diagonal(s, 1.0)
    s.setflags(write=False)
    return s


# -- attribution result -------------------------------------------------------

class Method(str, Enum):
    EXACT_SHAPLEY = "ExactShapley"
    PERM_SHAPLEY = "PermSampledShapley"
    REALEXP_DECOUPLED = "RealExpDecoupled"
    REALEXP_PERMUTATION = "RealExpPermutation"
    TREE_GAIN = "TreeGain"


def _frozen(a) -> np.ndarray | None:
    if a is None:
        return None
    a = np.array(a, dtype=float).ravel()
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Attribution:
    """Per-feature importance scores plus how they were produced.

    ``phi_independent``/``phi_margin`` are filled for the decoupled RealExp
    score only.  ``stderr`` holds Monte-Carlo standard errors for sampled
    estimators and ``degenerate`` the features whose interaction weights had a
    zero denominator.
    """

    phi: np.ndarray
    method: Method
    phi_independent: np.ndarray | None = None
    phi_margin: np.ndarray | None = None
    labels: tuple[str, ...] | None = None
    stderr: np.ndarray | None = None
    degenerate: tuple[int, ...] = field(default=())

    def __post_init__(self):
        method = Method(self.method)
        object.__setattr__(self, "method", method)
        phi = _frozen(self.phi)
        if phi.size == 0:
            raise ValidationError("attribution needs at least one feature")
        if not np.all(np.isfinite(phi)):
            raise EvaluationError("attribution contains non-finite values")
        object.__setattr__(self, "phi", phi)
        ind, mar = _frozen(self.phi_independent), _frozen(self.phi_margin)
        has_parts = ind is not None or mar is not None
        if has_parts != (method is Method.REALEXP_DECOUPLED):
            raise ValidationError("components are present exactly for RealExpDecoupled")
        if has_parts:
            if ind is None or mar is None or ind.shape != phi.shape or mar.shape != phi.shape:
                raise ValidationError("both components must match phi in length")
            if not np.array_equal(ind + mar, phi):
                raise ValidationError("phi must equal phi_independent + phi_margin")
        object.__setattr__(self, "phi_independent", ind)
        object.__setattr__(self, "phi_margin", mar)
        object.__setattr__(self, "stderr", _frozen(self.stderr))
        if self.labels is not None:
            labels = FeatureSet(phi.size, self.labels).labels
            object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "degenerate", tuple(int(i) for i in self.degenerate))

    @property
    def n(self) -> int:
        return self.phi.size

    def ranking(self) -> list[int]:
        """Indices by descending score; ties go to the lower index."""
        return sorted(range(self.n), key=lambda i: (-self.phi[i], i))

    def with_labels(self, labels) -> "Attribution":
        return Attribution(self.phi, self.method, self.phi_independent, self.phi_margin,
                           labels, self.stderr, self.degenerate)

    def to_dict(self) -> dict:
        def lst(a):
            return None if a is None else [float(x) for x in a]

        return {
            "method": self.method.value,
            "phi": lst(self.phi),
            "phi_independent": lst(self.phi_independent),
            "phi_margin": lst(self.phi_margin),
            "labels": None if self.labels is None else list(self.labels),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Attribution":
        return cls(
            phi=data["phi"],
            method=data["method"],
            phi_independent=data.get("phi_independent"),
            phi_margin=data.get("phi_margin"),
            labels=data.get("labels"),
        )


# -- exact Shapley ----------------------------------------------------------------

def _subset_weights(n: int) -> np.ndarray:
    f = [math.factorial(k) for k in range(n + 1)]
    return np.array([f[s] * f[n - s - 1] / f[n] for s in range(n)])


def exact_shapley(v: ValueFunction, n: int | None = None) -> Attribution:
    """Shapley values by direct summation over all coalitions without ``i``.

    Each marginal gain ``v(S + i) - v(S)`` is weighted by
    ``|S|! (n - |S| - 1)! / n!``.  Needs ``2**n`` payoffs, so ``n`` is capped
    at :data:`MAX_EXACT_FEATURES`.
    """
    n = _check_arity(v, n)
    if n > MAX_EXACT_FEATURES:
        raise CapacityError(f"exact Shapley needs 2^{n} evaluations; cap is n={MAX_EXACT_FEATURES}")
    table = v.table()
    masks = np.arange(1 << n, dtype=np.int64)
    sizes = popcount(masks, n)
    zeta = _subset_weights(n)
    phi = np.empty(n)
    for i in range(n):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        phi[i] = np.dot(zeta[sizes[without]], table[without | bit] - table[without])
    return Attribution(phi, Method.EXACT_SHAPLEY)


# -- permutation forms --------------------------------------------------------------

EXHAUSTIVE = "exhaustive"


@dataclass(frozen=True)
class Sampled:
    """Monte-Carlo mode: ``count`` uniform permutations drawn from ``seed``."""

    count: int
    seed: int

    def __post_init__(self):
        if int(self.count) < 1:
            raise ValidationError(f"sample count must be >= 1, got {self.count}")
        if self.seed is None:
            raise ValidationError("sampled mode needs a seed")


def _parse_mode(mode):
    if isinstance(mode, Sampled):
        return mode
    if isinstance(mode, str) and mode.lower() == EXHAUSTIVE:
        return EXHAUSTIVE
    raise ValidationError(f"unknown permutation mode {mode!r}")


def _permutation_contributions(v, perms, one_minus_s=None, table=None):
    """Per-permutation marginal gains, arranged by feature.

    Returns ``(P, n)`` with entry ``[p, i]`` equal to
    ``(v(S + i) - v(S)) * Upsilon(S, i)`` where ``S`` precedes ``i`` in
    permutation ``p``.  ``Upsilon`` is 1 when ``one_minus_s`` is None.
    """
    count, n = perms.shape
    bits = np.left_shift(np.int64(1), perms.astype(np.int64))
    after = np.cumsum(bits, axis=1)
    before = after - bits
    if table is not None:
        delta = table[after] - table[before]
    else:
        both = np.concatenate([after.ravel(), before.ravel()])
        uniq, inv = np.unique(both, return_inverse=True)
        vals = v.values(uniq)[inv]
        delta = (vals[: after.size] - vals[after.size:]).reshape(count, n)
    if one_minus_s is not None:
        ups = np.ones((count, n))
        for k in range(1, n):
            fk = perms[:, k]
            for prev in range(k):
                ups[:, k] *= one_minus_s[fk, perms[:, prev]]
        delta = delta * ups
    out = np.empty_like(delta)
    out[np.arange(count)[:, None], perms] = delta
    return out


def _permutation_estimate(v, n, mode, one_minus_s):
    mode = _parse_mode(mode)
    if mode == EXHAUSTIVE:
        if n > MAX_EXHAUSTIVE_FEATURES:
            raise CapacityError(
                f"exhaustive enumeration needs {n}! permutations; cap is n={MAX_EXHAUSTIVE_FEATURES}"
            )
        table = v.table()
        total = np.zeros(n)
        it = itertools.permutations(range(n))
        while True:
            chunk = np.array(list(itertools.islice(it, _PERM_CHUNK)), dtype=np.int64)
            if chunk.size == 0:
                break
            total += _permutation_contributions(v, chunk, one_minus_s, table).sum(axis=0)
        return total / math.factorial(n), None
    rng = np.random.default_rng(mode.seed)
    perms = rng.permuted(np.tile(np.arange(n, dtype=np.int64), (mode.count, 1)), axis=1)
    table = v.table() if n <= 12 else None
    parts = [
        _permutation_contributions(v, perms[a:a + _PERM_CHUNK], one_minus_s, table)
        for a in range(0, mode.count, _PERM_CHUNK)
    ]
    contrib = np.concatenate(parts)
    mean = contrib.mean(axis=0)
    if mode.count > 1:
        stderr = contrib.std(axis=0, ddof=1) / math.sqrt(mode.count)
    else:
        stderr = np.full(n, np.inf)
    return mean, stderr


def permutation_shapley(v: ValueFunction, n: int | None = None, mode=EXHAUSTIVE) -> Attribution:
    """Shapley values as the mean marginal gain over feature orderings.

    ``mode`` is ``"exhaustive"`` (all ``n!`` orderings, ``n <= 10``) or a
    :class:`Sampled` instance.
    """
    n = _check_arity(v, n)
    phi, stderr = _permutation_estimate(v, n, mode, None)
    if stderr is not None and not np.all(np.isfinite(stderr)):
        stderr = None
    return Attribution(phi, Method.PERM_SHAPLEY, stderr=stderr)


def dilution_game(delta: float, epsilon: float, n: int = 2) -> TableGame:
    """Game in which feature 1 duplicates feature 0.

    Adding feature 0 gains ``delta`` when feature 1 is absent and ``epsilon``
    when it is already present (and symmetrically for feature 1).  Features
    ``2..n-1`` are null players.
    """
    n = int(n)
    if n < 2:
        raise ValidationError("the duplicate-feature game needs n >= 2")
    delta, epsilon = float(delta), float(epsilon)

    def payoff(mask):
        a, b = mask & 1, mask >> 1 & 1
        return delta * a + delta * b + (epsilon - delta) * a * b

    return TableGame(n, [payoff(m) for m in range(1 << n)])


def dilution_demo(delta: float, epsilon: float, n: int = 2) -> Attribution:
    """Exact Shapley values of :func:`dilution_game`; feature 0 gets ``(delta + epsilon) / 2``."""
    return exact_shapley(dilution_game(delta, epsilon, n))


# -- RealExp ------------------------------------------------------------------------

def interaction_weights(s) -> tuple[np.ndarray, tuple[int, ...]]:
    """Row-normalised dissimilarity weights ``w[i, j]``.

    ``w[i, j] = (1 - s[i, j]) / sum_{k != i} (1 - s[i, k])`` and ``w[i, i] = 0``.
    Rows whose denominator vanishes (feature identical to all others) are
    left at zero and reported in the second return value.
    """
    s = check_similarity(s)
    n = s.shape[0]
    dis = 1.0 - s
    np.fill_diagonal(dis, 0.0)
    denom = dis.sum(axis=1)
    w = np.zeros((n, n))
    degenerate = []
    for i in range(n):
        if denom[i] > 0.0:
            w[i] = dis[i] / denom[i]
        elif n > 1:
            degenerate.append(i)
    return w, tuple(degenerate)


def realexp_decoupled(v: ValueFunction, n: int | None, s) -> Attribution:
    """Score = stand-alone gain + similarity-weighted pairwise surplus.

    ``phi_independent[i] = v({i}) - v({})`` and
    ``phi_margin[i] = sum_j w[i, j] * (v({i, j}) - v({j}) - phi_independent[i])``
    with weights from :func:`interaction_weights`.  Only the empty set,
    singletons and pairs are queried, so this scales to large ``n``.
    """
    n = _check_arity(v, n)
    s = check_similarity(s, n)
    w, degenerate = interaction_weights(s)
    for i in degenerate:
        warnings.warn(
            f"feature {i} is fully similar to every other feature; its margin term is set to 0",
            RuntimeWarning,
            stacklevel=2,
        )
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    masks = [0] + [1 << i for i in range(n)] + [(1 << i) | (1 << j) for i, j in pairs]
    vals = v.values(masks)
    v0, single = vals[0], vals[1:n + 1]
    pair = np.zeros((n, n))
    for (i, j), x in zip(pairs, vals[n + 1:]):
        pair[i, j] = pair[j, i] = x
    independent = single - v0
    surplus = pair - single[None, :] - independent[:, None]
    np.fill_diagonal(surplus, 0.0)
    margin = np.einsum("ij,ij->i", w, surplus)
    return Attribution(
        independent + margin,
        Method.REALEXP_DECOUPLED,
        phi_independent=independent,
        phi_margin=margin,
        degenerate=degenerate,
    )


def adjustment_factor(prefix: Iterable[int], i: int, s) -> float:
    """``prod_{j in prefix} (1 - s[i, j])``; 1 for an empty prefix."""
    s = np.asarray(s, dtype=float)
    prefix = sorted({int(j) for j in prefix})
    i = int(i)
    if i in prefix:
        raise ValidationError(f"feature {i} cannot precede itself")
    if not prefix:
        return 1.0
    return float(np.prod(1.0 - s[i, prefix]))


def realexp_permutation(v: ValueFunction, n: int | None, s, mode=EXHAUSTIVE) -> Attribution:
    """Permutation average of marginal gains damped by :func:`adjustment_factor`.

    Normalised by ``n!`` (or the sample count); the damping is not
    renormalised, so the scores need not sum to ``v(F) - v({})``.
    """
    n = _check_arity(v, n)
    s = check_similarity(s, n)
    phi, stderr = _permutation_estimate(v, n, mode, 1.0 - s)
    if stderr is not None and not np.all(np.isfinite(stderr)):
        stderr = None
    return Attribution(phi, Method.REALEXP_PERMUTATION, stderr=stderr)


def ranking(phi: Sequence[float]) -> list[int]:
    """Stable descending argsort; ties go to the lower index."""
    return sorted(range(len(phi)), key=lambda i: (-float(phi[i]), i))
