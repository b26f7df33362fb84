import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msmw.errors import ShapeError
from msmw.tensor import (
    FactorPair,
    MultiWayPredictors,
    SourcePartition,
    build_design_given_V,
    build_design_given_W,
    compose_coefficients,
    flatten_non_multiway,
    flattened_labels,
    generalized_inner_product,
    inner_products,
    unvec,
    vec,
)


def brute_inner(A, B):
    s = 0.0
    for p in range(A.shape[0]):
        for d in range(A.shape[1]):
            s += A[p, d] * B[p, d]
    return s


def test_generalized_inner_product_small():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    B = np.array([[0.5, -1.0], [2.0, 0.0]])
    assert generalized_inner_product(A, B) == 0.5 - 2.0 + 6.0


def test_inner_product_shape_mismatch():
    with pytest.raises(ShapeError):
        generalized_inner_product(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(ShapeError):
        inner_products(np.ones((4, 2, 3)), np.ones((2, 2)))


@given(arrays(np.float64, (5, 4, 3), elements=st.floats(-10, 10)),
       arrays(np.float64, (4, 3), elements=st.floats(-10, 10)))
def test_inner_products_match_loops(X, B):
    expected = [brute_inner(X[i], B) for i in range(X.shape[0])]
    np.testing.assert_allclose(inner_products(X, B), expected, rtol=1e-12, atol=1e-9)


def test_vec_is_column_major():
    M = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(vec(M), [0, 3, 1, 4, 2, 5])
    np.testing.assert_array_equal(unvec(vec(M), 2, 3), M)


@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_designs_reproduce_inner_product(R, seed):
    rng = np.random.default_rng(seed)
    N, P, D = 6, 5, 4
    X = rng.standard_normal((N, P, D))
    W = rng.standard_normal((P, R))
    V = rng.standard_normal((D, R))
    target = inner_products(X, W @ V.T)
    np.testing.assert_allclose(build_design_given_V(X, V) @ vec(W), target, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(build_design_given_W(X, W) @ vec(V), target, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(flatten_non_multiway(X) @ vec(W @ V.T), target, rtol=1e-10, atol=1e-10)


def test_design_given_V_entries_by_loop():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((3, 4, 2))
    V = rng.standard_normal((2, 2))
    Z = build_design_given_V(X, V)
    for i in range(3):
        for r in range(2):
            for p in range(4):
                assert Z[i, r * 4 + p] == pytest.approx(sum(X[i, p, d] * V[d, r] for d in range(2)))


def test_partition_labels_and_slices():
    part = SourcePartition((2, 3), ("a", "b"))
    assert part.total == 5 and part.n_sources == 2
    np.testing.assert_array_equal(part.labels(), [0, 0, 1, 1, 1])
    assert part.slices() == [slice(0, 2), slice(2, 5)]
    np.testing.assert_array_equal(flattened_labels(part, 2), [0, 0, 1, 1, 1] * 2)
    assert part.merged().sizes == (5,)


def test_partition_rejects_bad_sizes():
    with pytest.raises(ShapeError):
        SourcePartition((2, 0))
    with pytest.raises(ShapeError):
        SourcePartition((2, 2), ("a",))


def test_predictors_are_read_only_copies():
    raw = np.zeros((2, 3, 2))
    X = MultiWayPredictors(raw, SourcePartition((1, 2)))
    raw[0, 0, 0] = 5.0
    assert X.values[0, 0, 0] == 0.0
    with pytest.raises(ValueError):
        X.values[0, 0, 0] = 1.0


def test_predictors_validation():
    with pytest.raises(ShapeError):
        MultiWayPredictors(np.zeros((2, 3)), SourcePartition((3,)))
    with pytest.raises(ShapeError):
        MultiWayPredictors(np.zeros((2, 3, 2)), SourcePartition((1, 1)))
    bad = np.zeros((2, 2, 2))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ShapeError):
        MultiWayPredictors(bad, SourcePartition((2,)))


def test_select_sources_and_subset():
    rng = np.random.default_rng(0)
    X = MultiWayPredictors(rng.standard_normal((4, 5, 2)), SourcePartition((2, 3), ("a", "b")))
    Xb = X.select_sources([1])
    assert Xb.partition.names == ("b",)
    np.testing.assert_array_equal(Xb.values, X.values[:, 2:, :])
    np.testing.assert_array_equal(X.subset([0, 2]).values, X.values[[0, 2]])


def test_factor_pair_and_compose():
    W = np.array([[1.0], [2.0]])
    V = np.array([[3.0], [4.0], [5.0]])
    f = FactorPair(W, V)
    assert f.rank == 1
    np.testing.assert_array_equal(compose_coefficients(f), np.outer([1, 2], [3, 4, 5]))
    np.testing.assert_array_equal(compose_coefficients(W, V), compose_coefficients(f))
    with pytest.raises(ShapeError):
        FactorPair(np.ones((2, 2)), np.ones((3, 1)))
