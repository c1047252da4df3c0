"""Outlier-robust informative path planning.

Gaussian-process environment model, copula-based outlier detector and a
Pareto Monte Carlo tree search planner, wired into a sampling loop with a
batch experiment harness.
"""

from robust_ipp.copod import COPOD, CopodModel, detect, fit_copod, score
from robust_ipp.gp import (
    FittedGP,
    GPRegressor,
    Hyperparams,
    fit,
    log_marginal_likelihood,
    lml_gradient,
    optimize_hyperparams,
    predict,
)
from robust_ipp.mcts import SearchConfig, pareto_front, search
from robust_ipp.pipeline import PipelineConfig, run_experiment

__version__ = "0.1.0"

__all__ = [
    "COPOD",
    "CopodModel",
    "FittedGP",
    "GPRegressor",
    "Hyperparams",
    "PipelineConfig",
    "SearchConfig",
    "detect",
    "fit",
    "fit_copod",
    "log_marginal_likelihood",
    "lml_gradient",
    "optimize_hyperparams",
    "pareto_front",
    "predict",
    "run_experiment",
    "score",
    "search",
]
