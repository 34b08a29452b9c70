"""Agreement with expert rankings, explanation stability and surrogate fidelity."""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError


def _as_items(items, name) -> list[int]:
    items = [int(i) for i in items]
    if len(set(items)) != len(items):
        raise ValidationError(f"{name} ranking contains duplicate indices: {items}")
    return items


@dataclass(frozen=True)
class ExpertAnnotation:
    """Indices the expert marked as important, most important first."""

    items: tuple[int, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(_as_items(self.items, "expert")))
        if not self.items:
            raise ValidationError("expert annotation is empty")

    @classmethod
    def load(cls, path) -> "ExpertAnnotation":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        labels = data.get("labels")
        return cls(tuple(data["items"]), None if labels is None else tuple(labels))


def model_ranking(phi, m: int | None = None) -> list[int]:
    """Top-``m`` indices by descending score; ties go to the lower index."""
    order = sorted(range(len(phi)), key=lambda i: (-float(phi[i]), i))
    return order if m is None else order[:m]


def h_score(expert, model) -> tuple[int, float]:
    """Size of the overlap between the two top lists and its share of ``m``."""
    u = _as_items(getattr(expert, "items", expert), "expert")
    k = _as_items(getattr(model, "items", model), "model")
    if not u or not k:
        raise ValidationError("rankings must be non-empty")
    if len(u) != len(k):
        raise ValidationError(f"expert lists {len(u)} items but model lists {len(k)}")
    matched = len(set(u) & set(k))
    return matched, matched / len(u)


def concordance(expert, model) -> tuple[int, int, int]:
    """``(C, D, |H|)`` over items present in both lists.

    Pairs are ordered by the expert list; a pair is concordant when the model
    list puts them in the same order.
    """
    u = _as_items(getattr(expert, "items", expert), "expert")
    k = _as_items(getattr(model, "items", model), "model")
    pos = {item: r for r, item in enumerate(k)}
    shared = [item for item in u if item in pos]
    c = d = 0
    for a, b in itertools.combinations(shared, 2):
        if pos[a] < pos[b]:
            c += 1
        else:
            d += 1
    return c, d, len(shared)


def kendall_tau(expert, model) -> float:
    """``2 (C - D) / (|H| (|H| - 1))``; 0 when fewer than two items match."""
    c, d, h = concordance(expert, model)
    if h < 2:
        return 0.0
    return 2.0 * (c - d) / (h * (h - 1))


@dataclass(frozen=True)
class ConsistencyReport:
    match_count: int
    accuracy: float
    tau: float
    tau_defined: bool
    concordant: int
    discordant: int

    def to_dict(self, **extra) -> dict:
        return {**asdict(self), **extra}


def consistency_report(expert, model) -> ConsistencyReport:
    matched, accuracy = h_score(expert, model)
    c, d, h = concordance(expert, model)
    return ConsistencyReport(matched, accuracy, kendall_tau(expert, model), h >= 2, c, d)


def digest(obj) -> str:
    """Short content hash used to tie reports back to their inputs."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        raise ValidationError("Jaccard of two empty sets is undefined")
    return len(a & b) / len(a | b)


def jaccard_stability(runs) -> float:
    """Mean pairwise Jaccard index over repeated top-k sets."""
    runs = [set(int(i) for i in r) for r in runs]
    if len(runs) < 2:
        raise ValidationError("need at least two runs")
    if any(not r for r in runs):
        raise ValidationError("top-k sets must be non-empty")
    if len({len(r) for r in runs}) != 1:
        raise ValidationError("all runs must have the same k")
    pairs = list(itertools.combinations(runs, 2))
    return sum(jaccard(a, b) for a, b in pairs) / len(pairs)


def r_squared(actual, predicted, return_flag: bool = False):
    """Coefficient of determination.

    Constant ``actual`` gives 0; with ``return_flag`` the result is
    ``(r2, degenerate)``.
    """
    y = np.asarray(actual, dtype=float).ravel()
    yhat = np.asarray(predicted, dtype=float).ravel()
    if y.size == 0 or y.shape != yhat.shape:
        raise ValidationError(f"length mismatch: {y.size} actual vs {yhat.size} predicted")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return (0.0, True) if return_flag else 0.0
    r2 = 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot
    return (r2, False) if return_flag else r2
