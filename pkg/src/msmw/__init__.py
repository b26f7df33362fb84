"""Bayesian prediction from multi-source multi-way predictor arrays.

Rank-R factorized (or full-rank) coefficient matrices with per-source
variance priors, fitted by Gibbs sampling for continuous and probit
outcomes, plus simulation and leave-one-out harnesses.
"""
from .config import (
    ChainSettings,
    ModelSpec,
    OutcomeVector,
    VariancePrior,
    application_prior,
    preset_simulation_model,
    validate,
)
from .gibbs import PosteriorDraws, run_binary, run_chain, run_continuous
from .predict import FittedModel, classify, posterior_predictive, predict_point, predict_probability
from .tensor import FactorPair, MultiWayPredictors, SourcePartition

__version__ = "0.1.0"

__all__ = [
    "ChainSettings",
    "FactorPair",
    "FittedModel",
    "ModelSpec",
    "MultiWayPredictors",
    "OutcomeVector",
    "PosteriorDraws",
    "SourcePartition",
    "VariancePrior",
    "application_prior",
    "classify",
    "posterior_predictive",
    "predict_point",
    "predict_probability",
    "preset_simulation_model",
    "run_binary",
    "run_chain",
    "run_continuous",
    "validate",
]
