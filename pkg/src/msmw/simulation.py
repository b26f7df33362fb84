"""Synthetic MSMW data, the six-estimator comparison grid and its metrics."""
from __future__ import annotations

import json
import logging
import math
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import ndtr

from .config import PRESET_KINDS, ChainSettings, OutcomeVector, preset_simulation_model
from .errors import ConditioningError, UndefinedMetricError, ValidationError
from .gibbs import PosteriorDraws, run_chain
from .predict import FittedModel, classify, predict_point
from .tensor import FactorPair, MultiWayPredictors, SourcePartition, compose_coefficients, inner_products

log = logging.getLogger(__name__)

REGIMES = ("continuous", "probit", "separate-normal")
PATTERNS = ("equal", "single")
LOWER_IS_BETTER = {"misclassification": True, "rse": True, "correlation": False}


@dataclass(frozen=True)
class Dims:
    N: int
    P1: int
    P2: int
    D: int

    @property
    def P(self) -> int:
        return self.P1 + self.P2


LOW_DIM = Dims(N=100, P1=3, P2=3, D=5)
HIGH_DIM = Dims(N=20, P1=100, P2=100, D=2)


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation condition. ``truth_rank=None`` is the full-rank truth."""

    dims: Dims
    truth_rank: Optional[int]
    source_pattern: str
    regime: str
    n_test: int = 500
    replications: int = 100

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValidationError(f"unknown regime {self.regime!r}")
        if self.source_pattern not in PATTERNS:
            raise ValidationError(f"unknown source pattern {self.source_pattern!r}")
        if self.truth_rank is not None and not 1 <= self.truth_rank < self.dims.D:
            # rank >= D is already the full-rank condition
            raise ValidationError(
                f"truth rank {self.truth_rank} needs 1 <= R < D = {self.dims.D}; use full rank"
            )

    @property
    def partition(self) -> SourcePartition:
        return SourcePartition((self.dims.P1, self.dims.P2))

    @property
    def family(self) -> str:
        return "continuous" if self.regime == "continuous" else "binary"

    @property
    def tau(self) -> tuple[float, float]:
        return (1.0, 1.0) if self.source_pattern == "equal" else (0.0, 1.0)

    @property
    def key(self) -> str:
        d = self.dims
        rank = "full" if self.truth_rank is None else f"rank{self.truth_rank}"
        return f"{self.regime}/N{d.N}-P{d.P1}+{d.P2}-D{d.D}/{rank}/{self.source_pattern}"

    @property
    def column(self) -> str:
        rank = "Full rank" if self.truth_rank is None else f"Rank: {self.truth_rank}"
        return f"{rank}, MS: {'Yes' if self.source_pattern == 'equal' else 'No'}"

    @property
    def matched_model(self) -> str:
        structure = "FullRank" if self.truth_rank is None else f"Rank{self.truth_rank}"
        return f"{structure}-{'MS' if self.source_pattern == 'equal' else 'SS'}"


def scenario_grid(regime: str, dims: Dims = LOW_DIM, **kwargs) -> list[ScenarioSpec]:
    """Every truth condition for a regime in the paper's column order."""
    ranks = [r for r in (2, 1) if r < dims.D] + [None]
    return [
        ScenarioSpec(dims, rank, pattern, regime, **kwargs)
        for rank in ranks
        for pattern in PATTERNS
    ]


def models_for(dims: Dims) -> list[str]:
    """Estimators that are well defined for ``dims`` (rank R < min(P, D))."""
    return [k for k in PRESET_KINDS if k.startswith("FullRank") or int(k[4]) < min(dims.P, dims.D)]


class SimulatedData(NamedTuple):
    X: MultiWayPredictors
    y: OutcomeVector
    B_true: np.ndarray


# -- generation ------------------------------------------------------------


def generate_true_coefficients(s: ScenarioSpec, rng) -> tuple[np.ndarray, Optional[FactorPair]]:
    """True ``B``: iid ``Normal(0, tau_m)`` entries (full rank) or ``W V^T``
    with ``W_m ~ Normal(0, tau_m)`` and ``V ~ Normal(0, 1)``. A zero source
    variance yields exact zeros."""
    part = s.partition
    sd = np.sqrt(np.array(s.tau))[part.labels()]
    if s.truth_rank is None:
        B = sd[:, None] * rng.standard_normal((part.total, s.dims.D))
        return np.where(sd[:, None] == 0, 0.0, B), None
    R = s.truth_rank
    W = sd[:, None] * rng.standard_normal((part.total, R))
    W = np.where(sd[:, None] == 0, 0.0, W)
    V = rng.standard_normal((s.dims.D, R))
    f = FactorPair(W, V)
    return compose_coefficients(f), f


def _predictors(s: ScenarioSpec, n: int, rng) -> np.ndarray:
    return rng.standard_normal((n, s.dims.P, s.dims.D))


def generate_continuous(s: ScenarioSpec, rng, B_true=None, n=None) -> SimulatedData:
    """``X ~ N(0, 1)`` entries, ``y_i ~ Normal(X_i . B, 1)``."""
    if B_true is None:
        B_true, _ = generate_true_coefficients(s, rng)
    n = n or s.dims.N
    X = _predictors(s, n, rng)
    y = inner_products(X, B_true) + rng.standard_normal(n)
    return SimulatedData(MultiWayPredictors(X, s.partition), OutcomeVector("continuous", y), B_true)


def generate_probit(s: ScenarioSpec, rng, B_true=None, n=None) -> SimulatedData:
    """``X ~ N(0, 1)`` entries, ``y_i ~ Bernoulli(Phi(X_i . B))``."""
    if B_true is None:
        B_true, _ = generate_true_coefficients(s, rng)
    n = n or s.dims.N
    X = _predictors(s, n, rng)
    y = (rng.random(n) < ndtr(inner_products(X, B_true))).astype(float)
    return SimulatedData(MultiWayPredictors(X, s.partition), OutcomeVector("binary", y), B_true)


def generate_separate_normal(s: ScenarioSpec, rng, B_true=None, n=None) -> SimulatedData:
    """First ``floor(n/2)`` units are class 0, the rest class 1;
    ``X_i = -B + E_i`` (class 0) or ``B + E_i`` (class 1)."""
    if B_true is None:
        B_true, _ = generate_true_coefficients(s, rng)
    n = n or s.dims.N
    y = np.zeros(n)
    y[n // 2:] = 1.0
    E = _predictors(s, n, rng)
    X = (2 * y - 1)[:, None, None] * B_true[None] + E
    return SimulatedData(MultiWayPredictors(X, s.partition), OutcomeVector("binary", y), B_true)


GENERATORS = {
    "continuous": generate_continuous,
    "probit": generate_probit,
    "separate-normal": generate_separate_normal,
}


# -- metrics ---------------------------------------------------------------


def misclassification_rate(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    return float(np.mean(y_true != np.asarray(y_pred)))


def relative_squared_error(y_true, y_pred) -> float:
    """``||y - y_hat||^2 / ||y||^2``."""
    y_true = np.asarray(y_true, dtype=float)
    denom = float(y_true @ y_true)
    if denom == 0:
        raise UndefinedMetricError("relative squared error is undefined for an all-zero truth")
    r = y_true - np.asarray(y_pred, dtype=float)
    return float(r @ r) / denom


def coefficient_correlation(B_true, B_hat) -> float:
    """Pearson correlation of the vectorized coefficient matrices."""
    a = np.ravel(B_true).astype(float)
    b = np.ravel(B_hat).astype(float)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise UndefinedMetricError("correlation is undefined for a constant coefficient array")
    return float(np.corrcoef(a, b)[0, 1])


def coverage_rate(draws: PosteriorDraws | np.ndarray, B_true, level: float = 0.95) -> float:
    """Fraction of entries of ``B_true`` inside their equal-tailed credible interval."""
    B = draws.B if isinstance(draws, PosteriorDraws) else np.asarray(draws)
    if B.shape[0] == 0:
        raise UndefinedMetricError("no posterior draws")
    tail = (1 - level) / 2
    lo, hi = np.quantile(B, [tail, 1 - tail], axis=0)
    B_true = np.asarray(B_true)
    return float(np.mean((lo <= B_true) & (B_true <= hi)))


# -- grid ------------------------------------------------------------------


def scenario_code(s: ScenarioSpec) -> int:
    return zlib.crc32(s.key.encode())


def stream(root_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a labelled cell; depends only on ``key``."""
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=tuple(key)))


# stream labels within a (scenario, replication) cell
_COEF, _TRAIN, _TEST, _FIT = 0, 1, 2, 3


def replication_data(s: ScenarioSpec, rep: int, root_seed: int) -> tuple[SimulatedData, SimulatedData]:
    """Training and test sets for one replication; test draws use their own stream."""
    code = scenario_code(s)
    gen = GENERATORS[s.regime]
    B_true, _ = generate_true_coefficients(s, stream(root_seed, code, rep, _COEF))
    train = gen(s, stream(root_seed, code, rep, _TRAIN), B_true=B_true, n=s.dims.N)
    test = gen(s, stream(root_seed, code, rep, _TEST), B_true=B_true, n=s.n_test)
    return train, test


def evaluate_fit(s: ScenarioSpec, draws: PosteriorDraws, test: SimulatedData, B_true) -> dict:
    fitted = FittedModel.from_draws(draws, s.family)
    out = {}
    if s.family == "binary":
        out["misclassification"] = misclassification_rate(test.y.values, classify(fitted, test.X))
    else:
        out["rse"] = relative_squared_error(test.y.values, predict_point(fitted, test.X))
    out["correlation"] = coefficient_correlation(B_true, fitted.B_hat)
    out["coverage"] = coverage_rate(draws, B_true)
    tau = fitted.tau_mean
    if tau.size > 1:
        for m, t in enumerate(tau):
            out[f"tau_mean_{m + 1}"] = float(t)
    return out


def run_cell(s: ScenarioSpec, rep: int, models: Sequence[str], root_seed: int,
             chain: ChainSettings, engine: str = "auto") -> tuple[list[dict], list[dict]]:
    """Fit every model on one replication; returns (metric records, failures)."""
    train, test = replication_data(s, rep, root_seed)
    code = scenario_code(s)
    records, failures = [], []
    for kind in models:
        spec = preset_simulation_model(kind, s.partition, s.dims.D, family=s.family, chain=chain)
        rng = stream(root_seed, code, rep, _FIT, PRESET_KINDS.index(kind))
        try:
            draws = run_chain(train.X, train.y, spec, rng, engine=engine)
            metrics = evaluate_fit(s, draws, test, train.B_true)
        except (ConditioningError, UndefinedMetricError) as exc:
            failures.append({"scenario": s.key, "model": kind, "replication": rep, "error": str(exc)})
            continue
        for name, value in metrics.items():
            records.append(
                {"scenario": s.key, "model": kind, "replication": rep, "metric": name, "value": value}
            )
    return records, failures


def _run_cell_args(args):
    return run_cell(*args)


@dataclass
class MetricReport:
    """Per-replication metric values for every (scenario, model) cell."""

    scenarios: list[ScenarioSpec]
    models: list[str]
    records: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    root_seed: int = 0
    chain: Optional[ChainSettings] = None

    def values(self, scenario: str, model: str, metric: str) -> np.ndarray:
        return np.array([
            r["value"] for r in self.records
            if r["scenario"] == scenario and r["model"] == model and r["metric"] == metric
        ])

    def replications(self, scenario: str, model: str, metric: str) -> dict[int, float]:
        return {
            r["replication"]: r["value"] for r in self.records
            if r["scenario"] == scenario and r["model"] == model and r["metric"] == metric
        }

    def mean(self, scenario: str, model: str, metric: str) -> float:
        v = self.values(scenario, model, metric)
        return float(v.mean()) if v.size else math.nan

    def metrics(self) -> list[str]:
        seen = []
        for r in self.records:
            if r["metric"] not in seen:
                seen.append(r["metric"])
        return seen

    def summary_rows(self, alpha: float = 0.05, paired: bool = True) -> list[dict]:
        best = pairwise_best(self, alpha=alpha, paired=paired)
        rows = []
        for s in self.scenarios:
            for m in self.models:
                for metric in self.metrics():
                    v = self.values(s.key, m, metric)
                    if not v.size:
                        continue
                    rows.append({
                        "scenario": s.key,
                        "model": m,
                        "metric": metric,
                        "mean": float(v.mean()),
                        "sd": float(v.std(ddof=1)) if v.size > 1 else math.nan,
                        "n_reps": int(v.size),
                        "best": int(m in best.get((s.key, metric), ())),
                    })
        return rows

    def to_csv(self, path, alpha: float = 0.05, paired: bool = True):
        import csv

        rows = self.summary_rows(alpha, paired)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["scenario", "model", "metric", "mean", "sd", "n_reps", "best"])
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

    def to_dict(self) -> dict:
        return {
            "root_seed": self.root_seed,
            "chain": asdict(self.chain) if self.chain else None,
            "scenarios": [
                {**asdict(s), "key": s.key} for s in self.scenarios
            ],
            "models": list(self.models),
            "records": self.records,
            "failures": self.failures,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "MetricReport":
        with open(path) as fh:
            d = json.load(fh)
        scenarios = []
        for s in d["scenarios"]:
            s = dict(s)
            s.pop("key")
            s["dims"] = Dims(**s["dims"])
            scenarios.append(ScenarioSpec(**s))
        return cls(
            scenarios=scenarios,
            models=d["models"],
            records=d["records"],
            failures=d["failures"],
            root_seed=d["root_seed"],
            chain=ChainSettings(**d["chain"]) if d.get("chain") else None,
        )

    def table(self, metric: str) -> np.ndarray:
        """Models x scenarios matrix of means, in report order."""
        return np.array([[self.mean(s.key, m, metric) for s in self.scenarios] for m in self.models])

    def format_table(self, metric: str, alpha: float = 0.05) -> str:
        best = pairwise_best(self, alpha=alpha)
        width = max(len(s.column) for s in self.scenarios) + 2
        lines = ["model".ljust(12) + "".join(s.column.rjust(width) for s in self.scenarios)]
        for m in self.models:
            cells = []
            for s in self.scenarios:
                star = "*" if m in best.get((s.key, metric), ()) else " "
                cells.append(f"{self.mean(s.key, m, metric):.3f}{star}".rjust(width))
            lines.append(m.ljust(12) + "".join(cells))
        return "\n".join(lines)


def run_grid(
    scenarios: Iterable[ScenarioSpec],
    models: Optional[Sequence[str]] = None,
    root_seed: int = 0,
    chain: ChainSettings = ChainSettings(),
    workers: int = 1,
    engine: str = "auto",
    replications: Optional[int] = None,
) -> MetricReport:
    """Replicate every scenario, fit every model on the same training data
    and score it on an independent test set.

    Seeds hang off ``(root_seed, scenario key, replication)`` so any single
    cell can be recomputed on its own.
    """
    scenarios = list(scenarios)
    if models is None:
        models = models_for(scenarios[0].dims)
    models = list(models)
    tasks = [
        (s, rep, models, root_seed, chain, engine)
        for s in scenarios
        for rep in range(replications if replications is not None else s.replications)
    ]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_cell_args, tasks, chunksize=4))
    else:
        results = [_run_cell_args(t) for t in tasks]
    report = MetricReport(scenarios=scenarios, models=models, root_seed=root_seed, chain=chain)
    for records, failures in results:
        report.records.extend(records)
        report.failures.extend(failures)
    if report.failures:
        log.warning("%d fit(s) failed and were excluded", len(report.failures))
    return report


def _t_test(a: np.ndarray, b: np.ndarray, paired: bool) -> float:
    """Two-sided p-value; identical samples count as not different."""
    if paired:
        d = a - b
        if np.all(d == d[0]):
            return 1.0 if d[0] == 0 else 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # near-constant differences
            return float(stats.ttest_rel(a, b).pvalue)
    if np.var(a) == 0 and np.var(b) == 0:
        return 1.0 if a[0] == b[0] else 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return float(stats.ttest_ind(a, b, equal_var=False).pvalue)


def pairwise_best(report: MetricReport, alpha: float = 0.05, paired: bool = True) -> dict:
    """For each (scenario, metric): the best-mean model plus every model not
    significantly different from it at level ``alpha``."""
    out = {}
    for s in report.scenarios:
        for metric, lower in LOWER_IS_BETTER.items():
            reps = {m: report.replications(s.key, m, metric) for m in report.models}
            reps = {m: r for m, r in reps.items() if r}
            if not reps:
                continue
            if any(len(r) < 2 for r in reps.values()):
                raise ValidationError("pairwise comparison needs at least 2 replications per model")
            means = {m: np.mean(list(r.values())) for m, r in reps.items()}
            leader = min(means, key=means.get) if lower else max(means, key=means.get)
            best = {leader}
            for m, r in reps.items():
                if m == leader:
                    continue
                if paired:
                    common = sorted(set(r) & set(reps[leader]))
                    a = np.array([reps[leader][k] for k in common])
                    b = np.array([r[k] for k in common])
                else:
                    a = np.array(list(reps[leader].values()))
                    b = np.array(list(r.values()))
                if _t_test(a, b, paired) >= alpha:
                    best.add(m)
            out[(s.key, metric)] = best
    return out
