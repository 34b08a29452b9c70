"""End-to-end explanation runs: perturb, score, weight, fit, attribute."""

from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import adapters
from .blackbox import ModelEndpoint, mask_and_score
from .coalition import (
    MAX_EXACT_FEATURES,
    EXHAUSTIVE,
    Attribution,
    Sampled,
    check_similarity,
    estimate_similarity,
    exact_shapley,
    permutation_shapley,
    realexp_decoupled,
    realexp_permutation,
)
from .errors import CapacityError, RealExpError, ValidationError
from .evaluation import (
    ConsistencyReport,
    ExpertAnnotation,
    consistency_report,
    jaccard_stability,
    r_squared,
)
from .forest import FitReport, ForestGame, ForestParams, fit, tree_gain_importance
from .perturbation import (
    DEFAULT_ALPHA,
    DEFAULT_LAMBDA,
    DEFAULT_SAMPLES,
    Policy,
    build_design,
    generate_masks,
)

METHODS = ("RealExpDecoupled", "RealExpPermutation", "ExactShapley", "PermSampledShapley", "TreeGain")


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one explanation.

    ``instance`` describes the input, e.g. ``{"modality": "tabular",
    "values": [...]}``, ``{"modality": "text", "tokens": [...]}`` or
    ``{"modality": "image", "image": "cat.ppm", "segments": {"grid": [7, 7]}}``.
    ``similarity`` is None (estimate from the run's design), "background"
    (column correlation of ``background``, tabular only) or an explicit matrix.
    """

    endpoint: ModelEndpoint
    instance: dict
    K: int = DEFAULT_SAMPLES
    alpha: float = DEFAULT_ALPHA
    lam: float = DEFAULT_LAMBDA
    n_trees: int = 50
    max_depth: int = 12
    min_leaf: int = 2
    method: str = "RealExpDecoupled"
    perm_mode: object = EXHAUSTIVE
    policy: str = Policy.FIXED_COUNT.value
    sigma_q2: float = 0.05
    holdout: float = 0.2
    similarity: object = None
    background: object = None
    seed: int = 0
    n_jobs: int = 1
    base_dir: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown attribution method {self.method!r}")
        if int(self.K) < 1:
            raise ValidationError("K must be >= 1")
        if not 0.0 <= self.holdout < 1.0:
            raise ValidationError("holdout fraction must be in [0, 1)")
        Policy(self.policy)

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "RunConfig":
        data = dict(data)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known - {"lambda"}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        data["endpoint"] = ModelEndpoint.from_dict(data["endpoint"])
        mode = data.get("perm_mode", EXHAUSTIVE)
        if isinstance(mode, dict):
            data["perm_mode"] = Sampled(int(mode["count"]), int(mode["seed"]))
        data.setdefault("base_dir", None if base_dir is None else str(base_dir))
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, base_dir=path.parent)

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            if name in ("base_dir", "n_jobs"):  # execution detail, not part of the result
                continue
            val = getattr(self, name)
            if name == "endpoint":
                val = val.to_dict()
            elif isinstance(val, Sampled):
                val = {"count": val.count, "seed": val.seed}
            elif isinstance(val, np.ndarray):
                val = val.tolist()
            out["lambda" if name == "lam" else name] = val
        return out

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() or self.base_dir is None else Path(self.base_dir) / p


def adapt_instance(config: RunConfig) -> adapters.AdaptedInstance:
    desc = dict(config.instance)
    modality = desc.get("modality")
    if modality == "tabular":
        if "csv" in desc:
            return adapters.load_csv(config.resolve(desc["csv"]), int(desc.get("row", 0)),
                                     desc.get("baseline", "mean"))
        return adapters.tabular(desc["values"], desc.get("baseline"), desc.get("labels"))
    if modality == "text":
        if "tokens_file" in desc:
            return adapters.load_tokens(config.resolve(desc["tokens_file"]))
        return adapters.text(desc["tokens"])
    if modality == "image":
        seg = desc["segments"]
        if not isinstance(seg, dict):
            seg = config.resolve(seg)
        return adapters.load_image(config.resolve(desc["image"]), seg, desc.get("fill", "mean"))
    raise ValidationError(f"unknown modality {modality!r}")


@dataclass
class ImportanceReport:
    attribution: Attribution
    ranking: list
    fit: FitReport
    similarity: np.ndarray
    similarity_source: str
    config: dict
    n: int
    timing: dict = field(default_factory=dict)

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "n": self.n,
            "attribution": self.attribution.to_dict(),
            "ranking": list(self.ranking),
            "fit": self.fit.to_dict(),
            "similarity": {"source": self.similarity_source,
                           "matrix": np.asarray(self.similarity).tolist()},
            "config": self.config,
        }
        if timing:
            out["timing"] = self.timing
        return out

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ImportanceReport":
        return cls(
            attribution=Attribution.from_dict(data["attribution"]),
            ranking=list(data["ranking"]),
            fit=FitReport(**data["fit"]),
            similarity=np.asarray(data["similarity"]["matrix"]),
            similarity_source=data["similarity"]["source"],
            config=data["config"],
            n=int(data["n"]),
            timing=data.get("timing", {}),
        )

    @classmethod
    def load(cls, path) -> "ImportanceReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@contextmanager
def _step(name, timing):
    t0 = time.perf_counter()
    try:
        yield
    except RealExpError as exc:
        if exc.step is None:
            exc.step = name
        raise
    finally:
        timing[name] = round(time.perf_counter() - t0, 6)


def _seeds(seed):
    """Independent integer seeds for mask generation and forest fitting."""
    return [int(ss.generate_state(1)[0]) for ss in np.random.SeedSequence(seed).spawn(2)]


def _similarity(config, instance, train, n):
    if n == 1:
        return check_similarity([[1.0]]), "trivial"
    src = config.similarity
    if src is None or (isinstance(src, str) and src == "design"):
        return estimate_similarity(train), "design"
    if isinstance(src, str) and src == "background":
        bg = config.background
        if bg is None:
            raise ValidationError("similarity 'background' needs background data")
        data = adapters.read_csv(config.resolve(bg))[1] if isinstance(bg, str) else np.asarray(bg, float)
        if data.shape[1] != n:
            raise ValidationError(f"background has {data.shape[1]} columns for {n} features")
        return estimate_similarity(data), "background"
    return check_similarity(src, n), "explicit"


def _attribute(config, forest, n, s):
    game = ForestGame(forest)
    method = config.method
    if method == "RealExpDecoupled":
        return realexp_decoupled(game, n, s)
    if method == "RealExpPermutation":
        return realexp_permutation(game, n, s, config.perm_mode)
    if method == "ExactShapley":
        if n > MAX_EXACT_FEATURES:
            raise CapacityError(f"ExactShapley needs n <= {MAX_EXACT_FEATURES}, got {n}")
        return exact_shapley(game)
    if method == "PermSampledShapley":
        return permutation_shapley(game, n, config.perm_mode)
    return tree_gain_importance(forest)


def explain(config: RunConfig, instance: adapters.AdaptedInstance | None = None) -> ImportanceReport:
    """Run the full explanation pipeline for one instance."""
    timing = {}
    mask_seed, forest_seed = _seeds(config.seed)
    with _step("adapt", timing):
        instance = adapt_instance(config) if instance is None else instance
        n = instance.n
    with _step("perturb", timing):
        masks = generate_masks(n, config.K, config.alpha, config.policy, mask_seed, config.sigma_q2)
    with _step("score", timing):
        scores = mask_and_score(config.endpoint, instance, masks)
    with _step("weight", timing):
        design = build_design(masks, scores, config.lam, config.seed)
        n_hold = int(math.ceil(config.holdout * config.K)) if config.K >= 10 else 0
        train = design.subset(np.arange(config.K - n_hold))
    with _step("fit", timing):
        params = ForestParams(config.n_trees, config.max_depth, config.min_leaf, forest_seed,
                              n_jobs=config.n_jobs)
        forest, report = fit(train, params)
        if n_hold:
            held = design.subset(np.arange(config.K - n_hold, config.K))
            report.r2_holdout = r_squared(held.scores, forest.predict(held.matrix))
    with _step("similarity", timing):
        s, source = _similarity(config, instance, train, n)
    with _step("attribute", timing):
        attribution = _attribute(config, forest, n, s)
        if instance.labels is not None:
            attribution = attribution.with_labels(instance.labels)
    return ImportanceReport(
        attribution=attribution,
        ranking=attribution.ranking(),
        fit=report,
        similarity=s,
        similarity_source=source,
        config=config.to_dict(),
        n=n,
        timing=timing,
    )


def stability_study(config: RunConfig, repeats: int = 10, top_k: int = 5, policies=None,
                    seeds=None) -> dict:
    """Mean pairwise top-k Jaccard per masking policy over repeated runs."""
    if repeats < 2:
        raise ValidationError("stability needs at least two repeats")
    seeds = [config.seed + r for r in range(repeats)] if seeds is None else list(seeds)
    if len(seeds) != repeats:
        raise ValidationError(f"{len(seeds)} seeds for {repeats} repeats")
    policies = list(Policy) if policies is None else [Policy(p) for p in policies]
    instance = adapt_instance(config)
    k = min(top_k, instance.n)
    out = {}
    for policy in policies:
        tops = []
        for seed in seeds:
            rep = explain(replace(config, policy=policy.value, seed=seed), instance)
            tops.append(rep.ranking[:k])
        out[policy.value] = {"jaccard": jaccard_stability(tops), "top_k": tops}
    return out


def consistency_eval(report: ImportanceReport, expert: ExpertAnnotation) -> ConsistencyReport:
    bad = [i for i in expert.items if not 0 <= i < report.n]
    if bad:
        raise ValidationError(f"expert indices {bad} outside 0..{report.n - 1}")
    m = len(expert.items)
    if m > report.n:
        raise ValidationError(f"expert lists {m} items but only {report.n} features exist")
    return consistency_report(expert.items, report.ranking[:m])


def sweep(config: RunConfig, param: str, values, expert: ExpertAnnotation | None = None) -> list[dict]:
    """Re-run ``explain`` for each value of ``lambda`` or ``alpha``."""
    field_name = {"lambda": "lam", "alpha": "alpha"}.get(param)
    if field_name is None:
        raise ValidationError(f"can only sweep 'lambda' or 'alpha', not {param!r}")
    rows = []
    for val in values:
        rep = explain(replace(config, **{field_name: float(val)}))
        row = {
            "param": param,
            "value": float(val),
            "r2_train": rep.fit.r2_train,
            "r2_holdout": rep.fit.r2_holdout,
            "ranking": " ".join(str(i) for i in rep.ranking),
        }
        if expert is not None:
            c = consistency_eval(rep, expert)
            row.update(accuracy=c.accuracy, tau=c.tau)
        rows.append(row)
    return rows
