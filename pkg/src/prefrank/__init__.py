"""Personalized preference ranking from observed pairwise comparisons.

Utilities ``v_ij = x_j'beta + alpha_j + lambda_i'f_j`` are estimated from
exploded rankings by an inverse-probability-weighted, ridge-regularized
pairwise logit; see the submodules for the individual stages.
"""

from .core_model import Hyperparams, ItemCatalog, ItemRecord, ModelParams, utility, pair_logit_prob
from .estimator import Objective, fit_full_batch, fit_sgd, SgdConfig
from .exploder import ComparisonSet, PartialRanking, explode
from .propensity import WeightConfig, assign_ipw_weights, fit_propensity

__version__ = "0.1.0"

__all__ = [
    "ComparisonSet", "Hyperparams", "ItemCatalog", "ItemRecord", "ModelParams", "Objective",
    "PartialRanking", "SgdConfig", "WeightConfig", "assign_ipw_weights", "explode", "fit_full_batch",
    "fit_propensity", "fit_sgd", "pair_logit_prob", "utility",
]
