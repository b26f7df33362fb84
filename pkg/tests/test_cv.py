import math

import numpy as np
import pytest

from conftest import make_data
from msmw.config import ChainSettings, ModelSpec, OutcomeVector, VariancePrior
from msmw.cv import (
    LoocvResult,
    compare_variants,
    loocv,
    loocv_fold,
    separation_tstat,
    table11_variants,
    write_variant_table,
)
from msmw.errors import DegenerateFoldError, ValidationError
from msmw.tensor import MultiWayPredictors

SPEC = ModelSpec(rank=1, family="binary", tau_priors=(VariancePrior(1, 0.1),) * 2,
                 chain=ChainSettings(150, 50, 3))


def test_welch_t_by_hand():
    s = np.array([2.0, 3.0, 4.0, 0.0, -1.0, 0.5, -0.5])
    y = np.array([1, 1, 1, 0, 0, 0, 0])
    a, b = s[:3], s[3:]
    t = (a.mean() - b.mean()) / math.sqrt(a.var(ddof=1) / 3 + b.var(ddof=1) / 4)
    assert separation_tstat(s, y) == pytest.approx(t)
    sp = math.sqrt((2 * a.var(ddof=1) + 3 * b.var(ddof=1)) / 5)
    assert separation_tstat(s, y, pooled=True) == pytest.approx((a.mean() - b.mean()) / (sp * math.sqrt(1 / 3 + 1 / 4)))


def test_t_degenerate_guards():
    assert separation_tstat([1.0, 1.0, 0.0, 0.0], [1, 1, 0, 0]) == math.inf
    assert separation_tstat([0.0, 0.0, 1.0, 1.0], [1, 1, 0, 0]) == -math.inf
    assert separation_tstat([1.0, 1.0, 1.0], [1, 0, 0]) == 0.0
    with pytest.raises(ValidationError):
        separation_tstat([1.0, 2.0], [1, 1])


def test_fold_fit_ignores_held_out_unit(rng):
    X, y, _ = make_data(rng, N=8, family="binary")
    fit_a, score_a = loocv_fold(X, y, SPEC, 2, seed=1)
    vals = X.values.copy()
    vals[2] = rng.standard_normal(vals[2].shape)
    X2 = MultiWayPredictors(vals, X.partition)
    fit_b, score_b = loocv_fold(X2, y, SPEC, 2, seed=1)
    assert fit_a.B_hat.tobytes() == fit_b.B_hat.tobytes()
    assert score_a != score_b


def test_degenerate_folds_flagged(rng):
    X, _, _ = make_data(rng, N=5, family="binary")
    y = OutcomeVector("binary", [1, 0, 0, 0, 0])
    with pytest.raises(DegenerateFoldError):
        loocv_fold(X, y, SPEC, 0)
    res = loocv(X, y, SPEC, seed=2)
    assert res.degenerate == (0,)
    assert math.isnan(res.scores[0]) and np.all(np.isfinite(res.scores[1:]))


def test_loocv_deterministic(rng):
    X, y, _ = make_data(rng, N=8, family="binary")
    a, b = loocv(X, y, SPEC, seed=4), loocv(X, y, SPEC, seed=4)
    assert a.scores.tobytes() == b.scores.tobytes()
    assert a.tau_means.shape == (8, 2)
    np.testing.assert_allclose(a.probabilities, __import__("scipy").stats.norm.cdf(a.scores))


def test_loocv_requires_binary(rng):
    X, y, _ = make_data(rng, N=8)
    with pytest.raises(ValidationError):
        loocv(X, y, SPEC.with_chain())


def test_table_variants(rng):
    X, y, _ = make_data(rng, N=6, sizes=(3, 3), D=2, family="binary")
    vs = table11_variants(X, chain=ChainSettings(60, 10))
    assert len(vs) == 7
    assert [v.sources for v in vs] == [(0,), (0,), (1,), (1,), None, None, None]
    assert vs[-1].spec.source_mode == "single" and vs[-1].spec.rank == 1
    assert all(p.beta0 == 0.1 for v in vs for p in v.spec.tau_priors)


def test_compare_and_export(rng, tmp_path):
    X, y, _ = make_data(rng, N=6, sizes=(3, 3), D=2, family="binary")
    vs = table11_variants(X, chain=ChainSettings(60, 10))[:2]
    res = compare_variants(X, y, vs, seed=0)
    rows = write_variant_table(res, tmp_path / "v.csv", tmp_path / "v.json")
    assert [r["label"] for r in rows] == [v.label for v in vs]
    res[0].result.to_csv(tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "sample_id,label,score,probability,degenerate"


def test_complete_separation_flag():
    r = LoocvResult(np.array([2.0, 1.0, -1.0]), np.zeros(3), np.array([1, 1, 0]), np.zeros((3, 1)))
    assert r.completely_separated()
    r2 = LoocvResult(np.array([2.0, -2.0, -1.0]), np.zeros(3), np.array([1, 1, 0]), np.zeros((3, 1)))
    assert not r2.completely_separated()
