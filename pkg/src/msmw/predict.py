"""Point prediction, probit probabilities, classification and posterior
predictive simulation from stored draws."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import FamilyMismatchError, ShapeError
from .gibbs import PosteriorDraws
from .tensor import MultiWayPredictors, inner_products


@dataclass(frozen=True, eq=False)
class FittedModel:
    draws: PosteriorDraws
    B_hat: np.ndarray
    family: str

    @classmethod
    def from_draws(cls, draws: PosteriorDraws, family: str | None = None) -> "FittedModel":
        family = family or draws.meta.get("family", "continuous")
        B_hat = draws.B.mean(axis=0)
        B_hat.setflags(write=False)
        return cls(draws=draws, B_hat=B_hat, family=family)

    @property
    def tau_mean(self) -> np.ndarray:
        return self.draws.tau.mean(axis=0)


def _check_dims(model: FittedModel, Xstar) -> np.ndarray:
    values = Xstar.values if isinstance(Xstar, MultiWayPredictors) else np.asarray(Xstar, dtype=float)
    if values.ndim != 3 or values.shape[1:] != model.B_hat.shape:
        raise ShapeError(
            f"new data of shape {values.shape} does not match fitted (P, D) = {model.B_hat.shape}"
        )
    return values


def _require_binary(model: FittedModel):
    if model.family != "binary":
        raise FamilyMismatchError("probabilities and classes need a binary (probit) model")


def predict_point(model: FittedModel, Xstar) -> np.ndarray:
    """``X*_l . B_hat``; the probit score for binary models."""
    return inner_products(_check_dims(model, Xstar), model.B_hat)


def normal_cdf(x) -> np.ndarray:
    """Standard normal CDF (``scipy.special.ndtr``: erfc-based, so the lower
    tail stays positive down to about -37)."""
    return ndtr(x)


def predict_probability(model: FittedModel, Xstar) -> np.ndarray:
    _require_binary(model)
    return normal_cdf(predict_point(model, Xstar))


def classify(model: FittedModel, Xstar) -> np.ndarray:
    """Class 1 when ``Phi(score) >= 0.5``, i.e. ``score >= 0``."""
    _require_binary(model)
    return (predict_point(model, Xstar) >= 0).astype(int)


def posterior_predictive(model: FittedModel, Xstar, rng=None) -> np.ndarray:
    """One predictive draw per stored iteration, shape ``(T', N*)``."""
    values = _check_dims(model, Xstar)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    scores = np.einsum("npd,tpd->tn", values, model.draws.B)
    if model.family == "binary":
        return (rng.random(scores.shape) < ndtr(scores)).astype(int)
    sd = np.sqrt(model.draws.sigma2)[:, None]
    return scores + sd * rng.standard_normal(scores.shape)
