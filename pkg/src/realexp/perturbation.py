"""Mask generation, sample weighting and the masking-variance study.

Masks are boolean arrays of shape ``(K, n)``; ``True`` keeps a block and
``False`` masks it out.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .errors import ValidationError

DEFAULT_ALPHA = 0.3
DEFAULT_LAMBDA = 0.25
DEFAULT_SAMPLES = 500
MAX_ALPHA = 0.3


class Policy(str, Enum):
    FIXED_COUNT = "FixedCount"
    BERNOULLI = "Bernoulli"
    MONTE_CARLO = "MonteCarloRate"


def masked_count(n: int, alpha: float) -> int:
    # the epsilon keeps e.g. 0.3 * 10 from flooring to 2
    return int(math.floor(alpha * n + 1e-9))


def _check_alpha(alpha):
    alpha = float(alpha)
    if not 0.0 < alpha <= MAX_ALPHA:
        raise ValidationError(f"mask ratio must be in (0, {MAX_ALPHA}], got {alpha}")
    return alpha


def beta_parameters(mean: float, var: float) -> tuple[float, float]:
    """Beta(a, b) shape parameters with the given mean and variance."""
    limit = mean * (1.0 - mean)
    if not 0.0 < var < limit:
        raise ValidationError(f"rate variance must lie in (0, {limit:.4g}) for mean {mean}, got {var}")
    common = limit / var - 1.0
    return mean * common, (1.0 - mean) * common


def generate_masks(
    n: int,
    K: int,
    alpha: float = DEFAULT_ALPHA,
    policy: Policy | str = Policy.FIXED_COUNT,
    seed: int = 0,
    sigma_q2: float = 0.05,
) -> np.ndarray:
    """Draw ``K`` keep/mask patterns over ``n`` blocks.

    FixedCount masks exactly ``floor(alpha * n)`` blocks chosen uniformly
    without replacement.  Bernoulli masks each block independently with
    probability ``alpha``.  MonteCarloRate first draws a per-mask rate from a
    Beta law with mean ``alpha`` and variance ``sigma_q2``, then masks each
    block with that rate.  Only FixedCount honours the ``alpha * n`` cap by
    construction.
    """
    n, K = int(n), int(K)
    alpha = _check_alpha(alpha)
    policy = Policy(policy)
    if n < 1:
        raise ValidationError(f"need at least one block, got n={n}")
    if K < 1:
        raise ValidationError(f"need at least one mask, got K={K}")
    rng = np.random.default_rng(seed)
    if policy is Policy.FIXED_COUNT:
        m = masked_count(n, alpha)
        if m < 1:
            raise ValidationError(
                f"floor({alpha} * {n}) = 0 blocks to mask; raise n or alpha for FixedCount"
            )
        order = np.argsort(rng.random((K, n)), axis=1, kind="stable")
        keep = np.ones((K, n), dtype=bool)
        np.put_along_axis(keep, order[:, :m], False, axis=1)
        return keep
    if policy is Policy.BERNOULLI:
        return rng.random((K, n)) >= alpha
    sigma_q2 = float(sigma_q2)
    if sigma_q2 == 0.0:
        rate = np.full(K, alpha)
    else:
        a, b = beta_parameters(alpha, sigma_q2)
        rate = rng.beta(a, b, size=K)
    return rng.random((K, n)) >= rate[:, None]


def similarity(mask) -> float:
    """Fraction of blocks kept."""
    mask = np.asarray(mask, dtype=bool)
    return float(mask.sum() / mask.size)


def exp_weight(sim, lam: float = DEFAULT_LAMBDA):
    """``exp(-lam * (1 - sim))``: 1 for an untouched sample, smaller as more is masked."""
    lam = float(lam)
    if not lam > 0.0:
        raise ValidationError(f"lambda must be positive, got {lam}")
    sim_arr = np.asarray(sim, dtype=float)
    if np.any(sim_arr < 0.0) or np.any(sim_arr > 1.0):
        raise ValidationError("similarity must lie in [0, 1]")
    out = np.exp(-lam * (1.0 - sim_arr))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class PerturbationSet:
    """Masks, their weights and (optionally) the model's scores.

    ``matrix`` is the surrogate's input: row ``k`` is ``weight[k] * masks[k]``.
    """

    masks: np.ndarray
    sim: np.ndarray
    weight: np.ndarray
    scores: np.ndarray | None
    n: int
    lam: float
    seed: int | None = None

    @property
    def K(self) -> int:
        return self.masks.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self.weight[:, None] * self.masks

    def subset(self, rows) -> "PerturbationSet":
        rows = np.asarray(rows)
        scores = None if self.scores is None else self.scores[rows]
        return build_design(self.masks[rows], scores, self.lam, self.seed)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "lambda": self.lam,
            "seed": self.seed,
            "masks": self.masks.astype(int).tolist(),
            "scores": None if self.scores is None else [float(y) for y in self.scores],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PerturbationSet":
        masks = np.asarray(data["masks"], dtype=int)
        if masks.ndim != 2 or masks.shape[1] != int(data["n"]):
            raise ValidationError("mask rows must all have length n")
        if not np.isin(masks, (0, 1)).all():
            raise ValidationError("mask entries must be 0 or 1")
        return build_design(masks.astype(bool), data.get("scores"), data["lambda"], data.get("seed"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def build_design(masks, scores=None, lam: float = DEFAULT_LAMBDA, seed=None) -> PerturbationSet:
    masks = np.array(masks, dtype=bool)
    if masks.ndim == 1:
        masks = masks[None, :]
    if masks.ndim != 2 or masks.shape[0] < 1 or masks.shape[1] < 1:
        raise ValidationError("masks must be a non-empty (K, n) array")
    sim = masks.mean(axis=1)
    weight = exp_weight(sim, lam)
    weight = np.atleast_1d(np.asarray(weight, dtype=float))
    if scores is not None:
        scores = np.array(scores, dtype=float).ravel()
        if scores.shape[0] != masks.shape[0]:
            raise ValidationError(f"{scores.shape[0]} scores for {masks.shape[0]} masks")
        if not np.all(np.isfinite(scores)):
            raise ValidationError("scores must be finite")
        scores.setflags(write=False)
    for a in (masks, sim, weight):
        a.setflags(write=False)
    return PerturbationSet(masks, sim, weight, scores, masks.shape[1], float(lam), seed)


# -- variance study ---------------------------------------------------------------

@dataclass
class VarianceReport:
    n: int
    alpha: float
    sigma_q2: float
    analytic_fixed: float
    analytic_random: float
    analytic_mc: float
    empirical_fixed: float | None = None
    empirical_random: float | None = None
    empirical_mc: float | None = None
    sample_count: int | None = None
    seed: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def analytic_variance(c, f0: float = 0.0, n: int | None = None, alpha: float = DEFAULT_ALPHA,
                      sigma_q2: float = 0.05) -> VarianceReport:
    """Closed-form variance of ``f0 + sum_j c_j mu_j`` under the three policies.

    fixed:  a(1-a) * ((1 + 1/(n-1)) sum c^2 - (sum c)^2 / (n-1))
    random: a(1-a) * sum c^2
    mc:     (a(1-a) + sigma_q2) * sum c^2

    ``f0`` shifts ``f`` and therefore does not enter.
    """
    c = np.asarray(c, dtype=float)
    n = c.size if n is None else int(n)
    if c.size != n:
        raise ValidationError(f"{c.size} contributions for n={n}")
    if n < 2:
        raise ValidationError("variance formulas need n >= 2")
    alpha, sigma_q2 = float(alpha), float(sigma_q2)
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    if sigma_q2 < 0.0:
        raise ValidationError("sigma_q2 must be >= 0")
    sq, total = float(np.sum(c * c)), float(np.sum(c))
    base = alpha * (1.0 - alpha)
    fixed = base * ((1.0 + 1.0 / (n - 1)) * sq - total * total / (n - 1))
    return VarianceReport(
        n=n,
        alpha=alpha,
        sigma_q2=sigma_q2,
        analytic_fixed=max(fixed, 0.0),
        analytic_random=base * sq,
        analytic_mc=(base + sigma_q2) * sq,
    )


def mc_variance_total(c, alpha: float, sigma_q2: float) -> float:
    """Variance of the linear score under the Beta-rate policy, by total variance.

    Conditioning on the drawn rate ``q`` gives
    ``E[q(1-q)] sum c^2 + Var(q) (sum c)^2``.
    """
    c = np.asarray(c, dtype=float)
    return (alpha * (1 - alpha) - sigma_q2) * float(np.sum(c * c)) + sigma_q2 * float(np.sum(c)) ** 2


def empirical_variance(c, f0: float = 0.0, n: int | None = None, alpha: float = DEFAULT_ALPHA,
                       sigma_q2: float = 0.05, samples: int = 100_000, seed: int = 0) -> VarianceReport:
    """Sample variance of ``f0 + c . mu`` for masks drawn under each policy."""
    report = analytic_variance(c, f0, n, alpha, sigma_q2)
    samples = int(samples)
    if samples < 1000:
        raise ValidationError(f"need at least 1000 samples, got {samples}")
    c = np.asarray(c, dtype=float)
    seeds = np.random.SeedSequence(seed).spawn(3)
    out = {}
    for policy, ss in zip(Policy, seeds):
        masks = generate_masks(report.n, samples, alpha, policy, np.random.default_rng(ss), sigma_q2)
        f = f0 + masks.astype(float) @ c
        out[policy] = float(np.var(f, ddof=1))
    report.empirical_fixed = out[Policy.FIXED_COUNT]
    report.empirical_random = out[Policy.BERNOULLI]
    report.empirical_mc = out[Policy.MONTE_CARLO]
    report.sample_count = samples
    report.seed = seed
    return report
