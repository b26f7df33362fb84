import math

import numpy as np
import pytest

from msmw.config import (
    ChainSettings,
    ModelSpec,
    OutcomeVector,
    VariancePrior,
    application_prior,
    preset_simulation_model,
    validate,
)
from msmw.errors import (
    ChainSettingsError,
    FamilyMismatchError,
    PriorError,
    RankConstraintError,
    ValidationError,
)
from msmw.tensor import MultiWayPredictors, SourcePartition

PART = SourcePartition((3, 3))


@pytest.mark.parametrize(
    "kind, betas, rank, mode",
    [
        ("Rank2-MS", (math.sqrt(6), math.sqrt(6)), 2, "multi"),
        ("Rank1-MS", (math.sqrt(3), math.sqrt(3)), 1, "multi"),
        ("Rank2-SS", (math.sqrt(12),), 2, "single"),
        ("Rank1-SS", (math.sqrt(6),), 1, "single"),
        ("FullRank-MS", (math.sqrt(15), math.sqrt(15)), None, "multi"),
        ("FullRank-SS", (math.sqrt(30),), None, "single"),
    ],
)
def test_preset_hyperpriors(kind, betas, rank, mode):
    spec = preset_simulation_model(kind, PART, D=5)
    assert spec.rank == rank
    assert spec.source_mode == mode
    assert all(p.alpha0 == 1.0 for p in spec.tau_priors)
    np.testing.assert_allclose([p.beta0 for p in spec.tau_priors], betas)


def test_preset_rank_conflicts():
    with pytest.raises(RankConstraintError):
        preset_simulation_model("FullRank-MS", PART, D=5, R=2)
    with pytest.raises(RankConstraintError):
        preset_simulation_model("Rank1-MS", PART, D=5, R=2)
    with pytest.raises(ValidationError):
        preset_simulation_model("Rank3-MS", PART, D=5)


def test_variance_prior_moments():
    p = VariancePrior(3.0, 4.0)
    assert p.mean == 2.0 and p.mode == 1.0
    assert application_prior().mean == math.inf
    with pytest.raises(PriorError):
        VariancePrior(0.0, 1.0)


def test_chain_settings():
    assert ChainSettings(10, 3).kept == 7
    with pytest.raises(ChainSettingsError):
        ChainSettings(10, 10)
    with pytest.raises(ChainSettingsError):
        ChainSettings(10, -1)


def test_binary_forces_unit_variance():
    spec = ModelSpec(family="binary", sigma2=VariancePrior(1, 1))
    assert spec.sigma2 == 1.0 and spec.sigma2_fixed


def test_spec_validation_errors():
    with pytest.raises(PriorError):
        ModelSpec(source_mode="single", tau_priors=(VariancePrior(1, 1),) * 2)
    with pytest.raises(RankConstraintError):
        ModelSpec(rank=0)
    with pytest.raises(PriorError):
        ModelSpec(sigma2=-1.0)
    with pytest.raises(PriorError):
        ModelSpec(fixed_tau=(1.0, 2.0))


def test_validate_against_data():
    X = MultiWayPredictors(np.zeros((4, 6, 2)), PART)
    y = OutcomeVector("continuous", np.zeros(4))
    two = (VariancePrior(1, 1),) * 2
    validate(ModelSpec(rank=1, tau_priors=two), X, y)
    with pytest.raises(RankConstraintError):
        validate(ModelSpec(rank=2, tau_priors=two), X, y)
    with pytest.raises(FamilyMismatchError):
        validate(ModelSpec(rank=1, family="binary", tau_priors=two), X, y)
    with pytest.raises(ValidationError):
        validate(ModelSpec(rank=1, tau_priors=(VariancePrior(1, 1),)), X, y)
    with pytest.raises(ValidationError):
        validate(ModelSpec(rank=1, tau_priors=two), X, OutcomeVector("continuous", np.zeros(3)))


def test_outcome_vector_checks():
    with pytest.raises(FamilyMismatchError):
        OutcomeVector("binary", [0, 1, 2])
    with pytest.raises(ValidationError):
        OutcomeVector("continuous", [0.0, np.inf])


def test_spec_round_trip_and_fingerprint():
    spec = preset_simulation_model("Rank2-MS", PART, 5, chain=ChainSettings(100, 10, 3))
    again = ModelSpec.from_dict(spec.to_dict())
    assert again == spec
    assert again.fingerprint() == spec.fingerprint()
    assert spec.with_chain(seed=4).fingerprint() != spec.fingerprint()
