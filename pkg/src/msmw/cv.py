"""Leave-one-out cross-validation of probit fits and the source/structure
comparison via two-sample t-statistics on held-out scores."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .config import ChainSettings, ModelSpec, OutcomeVector, VariancePrior, application_prior
from .errors import DegenerateFoldError, ValidationError
from .gibbs import run_chain
from .predict import FittedModel, normal_cdf, predict_point
from .tensor import MultiWayPredictors

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LoocvResult:
    scores: np.ndarray
    probabilities: np.ndarray
    labels: np.ndarray
    tau_means: np.ndarray  # N x M, posterior means of the variance parameters per fold
    degenerate: tuple[int, ...] = ()

    @property
    def valid(self) -> np.ndarray:
        mask = np.ones(self.labels.size, dtype=bool)
        mask[list(self.degenerate)] = False
        return mask

    def completely_separated(self) -> bool:
        """Every held-out class-1 score exceeds every class-0 score."""
        s, y = self.scores[self.valid], self.labels[self.valid]
        return bool(s[y == 1].min() > s[y == 0].max())

    def to_csv(self, path, sample_ids: Optional[Sequence[str]] = None):
        ids = sample_ids if sample_ids is not None else [str(i + 1) for i in range(self.labels.size)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "label", "score", "probability", "degenerate"])
            for i, sid in enumerate(ids):
                w.writerow([sid, int(self.labels[i]), repr(float(self.scores[i])),
                            repr(float(self.probabilities[i])), int(i in self.degenerate)])


def fold_seed(seed: int, fold: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(fold,))


def loocv_fold(X: MultiWayPredictors, y: OutcomeVector, spec: ModelSpec, fold: int,
               seed: Optional[int] = None, engine: str = "auto"):
    """Fit without unit ``fold``; returns ``(fitted model, held-out score)``."""
    seed = spec.chain.seed if seed is None else seed
    train = np.delete(np.arange(X.N), fold)
    y_train = OutcomeVector(y.family, y.values[train])
    if np.unique(y_train.values).size < 2:
        raise DegenerateFoldError(f"fold {fold}: training set has a single class")
    rng = np.random.default_rng(fold_seed(seed, fold))
    draws = run_chain(X.subset(train), y_train, spec, rng, engine=engine)
    fitted = FittedModel.from_draws(draws, spec.family)
    score = float(predict_point(fitted, X.values[fold:fold + 1])[0])
    return fitted, score


def loocv(X: MultiWayPredictors, y: OutcomeVector, spec: ModelSpec, seed: Optional[int] = None,
          engine: str = "auto") -> LoocvResult:
    """One fit per unit on the remaining ``N - 1`` units. Folds whose
    training set has one class are flagged and scored as NaN."""
    if spec.family != "binary" or y.family != "binary":
        raise ValidationError("leave-one-out separation analysis needs a binary outcome")
    if X.N < 3:
        raise ValidationError("leave-one-out needs at least 3 units")
    M = spec.effective_partition(X.partition).n_sources
    scores = np.full(X.N, np.nan)
    taus = np.full((X.N, M), np.nan)
    degenerate = []
    for fold in range(X.N):
        try:
            fitted, score = loocv_fold(X, y, spec, fold, seed, engine)
        except DegenerateFoldError as exc:
            log.warning("%s", exc)
            degenerate.append(fold)
            continue
        scores[fold] = score
        taus[fold] = fitted.tau_mean
    return LoocvResult(
        scores=scores,
        probabilities=normal_cdf(scores),
        labels=y.values.astype(int),
        tau_means=taus,
        degenerate=tuple(degenerate),
    )


def separation_tstat(result: LoocvResult | Sequence[float], labels=None, pooled: bool = False) -> float:
    """Two-sample t-statistic of class-1 minus class-0 scores (Welch by
    default). Zero within-class variance gives 0 or a signed infinity."""
    if isinstance(result, LoocvResult):
        scores, labels = result.scores[result.valid], result.labels[result.valid]
    else:
        scores, labels = np.asarray(result, dtype=float), np.asarray(labels)
    a, b = scores[labels == 1], scores[labels == 0]
    if a.size == 0 or b.size == 0:
        raise ValidationError("both classes are needed for a two-sample t-statistic")
    diff = a.mean() - b.mean()
    va = a.var(ddof=1) if a.size > 1 else 0.0
    vb = b.var(ddof=1) if b.size > 1 else 0.0
    if pooled:
        dof = a.size + b.size - 2
        sp2 = ((a.size - 1) * va + (b.size - 1) * vb) / dof if dof > 0 else 0.0
        se2 = sp2 * (1 / a.size + 1 / b.size)
    else:
        se2 = va / a.size + vb / b.size
    if se2 == 0:
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return float(diff / math.sqrt(se2))


@dataclass(frozen=True)
class Variant:
    label: str
    spec: ModelSpec
    sources: Optional[tuple[int, ...]] = None  # None = all sources
    data: str = "All data"
    structure: str = "Multi-way"


@dataclass
class VariantResult:
    variant: Variant
    tstat: float
    result: LoocvResult


def table11_variants(
    X: MultiWayPredictors,
    prior: VariancePrior = None,
    chain: ChainSettings = ChainSettings(),
) -> list[Variant]:
    """Rank-1 and full-rank probit models on each single source and on all
    sources, plus the all-source rank-1 model with one shared variance."""
    prior = prior or application_prior()
    part = X.partition
    slices = [((m,), f"{part.names[m]} only") for m in range(part.n_sources)]
    slices.append((None, "All data"))
    out = []
    for sources, data in slices:
        n_groups = 1 if sources is not None else part.n_sources
        for rank, structure in ((1, "Multi-way"), (None, "Non-multi-way")):
            spec = ModelSpec(rank=rank, source_mode="multi", family="binary",
                             tau_priors=(prior,) * n_groups, chain=chain)
            out.append(Variant(f"{data} / {structure}", spec, sources, data, structure))
    single = ModelSpec(rank=1, source_mode="single", family="binary", tau_priors=(prior,), chain=chain)
    out.append(Variant("All data / Multi-way / single tau", single, None, "All data", "Multi-way, single tau"))
    return out


def compare_variants(X: MultiWayPredictors, y: OutcomeVector, variants: Sequence[Variant],
                     seed: Optional[int] = None, engine: str = "auto") -> list[VariantResult]:
    """LOOCV and the separation t-statistic for each variant."""
    results = []
    for v in variants:
        data = X if v.sources is None else X.select_sources(v.sources)
        try:
            res = loocv(data, y, v.spec, seed, engine)
        except Exception as exc:
            raise type(exc)(f"variant {v.label!r}: {exc}") from exc
        results.append(VariantResult(v, separation_tstat(res), res))
    return results


def variant_table_rows(results: Sequence[VariantResult]) -> list[dict]:
    return [
        {
            "label": r.variant.label,
            "data": r.variant.data,
            "structure": r.variant.structure,
            "source_mode": r.variant.spec.source_mode,
            "tstat": r.tstat,
            "separated": int(r.result.completely_separated()),
        }
        for r in results
    ]


def write_variant_table(results: Sequence[VariantResult], csv_path=None, json_path=None):
    rows = variant_table_rows(results)
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for row in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    if json_path:
        with open(json_path, "w") as fh:
            json.dump(rows, fh, indent=1)
    return rows
