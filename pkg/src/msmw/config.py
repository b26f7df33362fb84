"""Model specifications, hyperprior presets and validation."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .errors import (
    ChainSettingsError,
    FamilyMismatchError,
    PartitionMismatchError,
    PriorError,
    RankConstraintError,
    ValidationError,
)
from .tensor import MultiWayPredictors, SourcePartition

FAMILIES = ("continuous", "binary")
SOURCE_MODES = ("multi", "single")
PRESET_KINDS = ("Rank2-MS", "Rank2-SS", "Rank1-MS", "Rank1-SS", "FullRank-MS", "FullRank-SS")


@dataclass(frozen=True)
class VariancePrior:
    """Inverse-gamma prior ``IG(alpha0, beta0)`` (shape, scale)."""

    alpha0: float
    beta0: float

    def __post_init__(self):
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise PriorError(
                f"inverse-gamma parameters must be positive, got ({self.alpha0}, {self.beta0})"
            )
        object.__setattr__(self, "alpha0", float(self.alpha0))
        object.__setattr__(self, "beta0", float(self.beta0))

    @property
    def mean(self) -> float:
        """``beta0 / (alpha0 - 1)``; infinite when ``alpha0 <= 1``."""
        return self.beta0 / (self.alpha0 - 1) if self.alpha0 > 1 else math.inf

    @property
    def mode(self) -> float:
        return self.beta0 / (self.alpha0 + 1)


DEFAULT_SIGMA2_PRIOR = VariancePrior(0.001, 0.001)


@dataclass(frozen=True)
class OutcomeVector:
    family: str
    values: np.ndarray

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown outcome family {self.family!r}")
        values = np.array(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(values)):
            raise ValidationError("outcome values must be finite")
        if self.family == "binary" and not np.all((values == 0) | (values == 1)):
            raise FamilyMismatchError("binary outcomes must be exactly 0 or 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class ChainSettings:
    iterations: int = 5000
    burn_in: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ChainSettingsError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ChainSettingsError(
                f"burn_in must satisfy 0 <= burn_in < iterations, got {self.burn_in} / {self.iterations}"
            )

    @property
    def kept(self) -> int:
        return self.iterations - self.burn_in


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to run one chain.

    ``rank=None`` means full rank: ``vec(B)`` is sampled directly on the
    flattened design. ``sigma2`` is either a fixed positive value or a
    :class:`VariancePrior`; binary models always use ``sigma2 = 1``.
    ``fixed_tau`` pins the coefficient variances and skips their update.
    """

    rank: Optional[int] = 1
    source_mode: str = "multi"
    family: str = "continuous"
    tau_priors: tuple[VariancePrior, ...] = (VariancePrior(1.0, 1.0),)
    sigma2: Union[float, VariancePrior] = DEFAULT_SIGMA2_PRIOR
    chain: ChainSettings = field(default_factory=ChainSettings)
    fixed_tau: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown outcome family {self.family!r}")
        if self.source_mode not in SOURCE_MODES:
            raise ValidationError(f"unknown source mode {self.source_mode!r}")
        if self.rank is not None and int(self.rank) < 1:
            raise RankConstraintError("rank must be a positive integer or None (full rank)")
        priors = tuple(self.tau_priors)
        if not priors or not all(isinstance(p, VariancePrior) for p in priors):
            raise PriorError("tau_priors must be a non-empty sequence of VariancePrior")
        if self.source_mode == "single" and len(priors) != 1:
            raise PriorError("single-source models take exactly one tau prior")
        object.__setattr__(self, "tau_priors", priors)
        if self.family == "binary":
            if isinstance(self.sigma2, VariancePrior) or float(self.sigma2) != 1.0:
                # latent-variable error variance is fixed
                object.__setattr__(self, "sigma2", 1.0)
        elif not isinstance(self.sigma2, VariancePrior):
            if not float(self.sigma2) > 0:
                raise PriorError("a fixed sigma2 must be positive")
            object.__setattr__(self, "sigma2", float(self.sigma2))
        if self.fixed_tau is not None:
            ft = tuple(float(t) for t in self.fixed_tau)
            if len(ft) != len(priors) or any(t <= 0 for t in ft):
                raise PriorError("fixed_tau needs one positive value per tau prior")
            object.__setattr__(self, "fixed_tau", ft)

    @property
    def full_rank(self) -> bool:
        return self.rank is None

    @property
    def sigma2_fixed(self) -> bool:
        return not isinstance(self.sigma2, VariancePrior)

    def effective_partition(self, partition: SourcePartition) -> SourcePartition:
        """Variance groups actually used by the sampler."""
        return partition.merged() if self.source_mode == "single" else partition

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tau_priors"] = [asdict(p) for p in self.tau_priors]
        d["sigma2"] = asdict(self.sigma2) if isinstance(self.sigma2, VariancePrior) else self.sigma2
        d["fixed_tau"] = list(self.fixed_tau) if self.fixed_tau is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        sigma2 = d.get("sigma2", asdict(DEFAULT_SIGMA2_PRIOR))
        if isinstance(sigma2, dict):
            sigma2 = VariancePrior(**sigma2)
        fixed_tau = d.get("fixed_tau")
        return cls(
            rank=d.get("rank", 1),
            source_mode=d.get("source_mode", "multi"),
            family=d.get("family", "continuous"),
            tau_priors=tuple(VariancePrior(**p) for p in d.get("tau_priors", [{"alpha0": 1, "beta0": 1}])),
            sigma2=sigma2,
            chain=ChainSettings(**d.get("chain", {})),
            fixed_tau=tuple(fixed_tau) if fixed_tau is not None else None,
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_chain(self, **kwargs) -> "ModelSpec":
        return replace(self, chain=replace(self.chain, **kwargs))


def preset_simulation_model(
    kind: str,
    partition: SourcePartition,
    D: int,
    R: Optional[int] = None,
    family: str = "continuous",
    chain: Optional[ChainSettings] = None,
) -> ModelSpec:
    """One of the six simulation estimators with its default hyperpriors.

    Low-rank multi-source: ``tau_m ~ IG(1, sqrt(P_m R))``; low-rank
    single-source: ``IG(1, sqrt(P R))`` (``IG(1, sqrt(P))`` for Rank1-SS);
    full-rank uses ``D`` in place of ``R``.
    """
    if kind not in PRESET_KINDS:
        raise ValidationError(f"unknown model kind {kind!r}; expected one of {PRESET_KINDS}")
    structure, mode = kind.split("-")
    chain = chain or ChainSettings()
    if structure == "FullRank":
        if R is not None:
            raise RankConstraintError(f"{kind} is full rank; R must be left unset")
        rank, mult = None, D
    else:
        rank = int(structure[-1])
        if R is not None and R != rank:
            raise RankConstraintError(f"{kind} implies R = {rank}, got R = {R}")
        mult = rank
    if mode == "MS":
        priors = tuple(VariancePrior(1.0, math.sqrt(p * mult)) for p in partition.sizes)
        source_mode = "multi"
    else:
        P = partition.total
        # the published Rank1-SS list reads sqrt(P); identical to sqrt(P*R) at R = 1
        beta = math.sqrt(P) if kind == "Rank1-SS" else math.sqrt(P * mult)
        priors = (VariancePrior(1.0, beta),)
        source_mode = "single"
    return ModelSpec(
        rank=rank,
        source_mode=source_mode,
        family=family,
        tau_priors=priors,
        chain=chain,
    )


def application_prior() -> VariancePrior:
    """``IG(1, 0.1)``; note the mean is infinite at ``alpha0 = 1``."""
    return VariancePrior(1.0, 0.1)


def validate(spec: ModelSpec, X: MultiWayPredictors, y: OutcomeVector) -> ModelSpec:
    """Check ``spec`` against the data; returns the spec unchanged when valid."""
    if spec.rank is not None and not spec.rank < min(X.P, X.D):
        raise RankConstraintError(
            f"rank {spec.rank} violates R < min(P, D) = {min(X.P, X.D)}"
        )
    if y.family != spec.family:
        raise FamilyMismatchError(f"outcome family {y.family!r} but model expects {spec.family!r}")
    if len(y) != X.N:
        raise ValidationError(f"{len(y)} outcomes for {X.N} units")
    groups = spec.effective_partition(X.partition).n_sources
    if len(spec.tau_priors) != groups:
        raise PartitionMismatchError(
            f"{len(spec.tau_priors)} tau priors for {groups} variance group(s)"
        )
    return spec
