"""Correlation-aware Shapley attributions over perturbation surrogates."""

from .coalition import (
    EXHAUSTIVE,
    Attribution,
    FeatureSet,
    FunctionGame,
    Method,
    Sampled,
    TableGame,
    ValueFunction,
    adjustment_factor,
    dilution_demo,
    dilution_game,
    estimate_similarity,
    exact_shapley,
    interaction_weights,
    permutation_shapley,
    realexp_decoupled,
    realexp_permutation,
)
from .errors import (
    CapacityError,
    EvaluationError,
    ProtocolError,
    RealExpError,
    TransportError,
    ValidationError,
)
from .evaluation import h_score, jaccard_stability, kendall_tau, r_squared
from .forest import EnsembleForest, ForestGame, ForestParams, fit, tree_gain_importance
from .perturbation import Policy, build_design, exp_weight, generate_masks, similarity
from .pipeline import RunConfig, explain, stability_study

__version__ = "0.1.0"
