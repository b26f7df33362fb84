"""Multi-source multi-way predictor tensors and the linear-algebra kernels
used by the sampler.

Vectorization is column-major everywhere: ``vec`` of a ``P x R`` matrix
stacks its columns, so column ``r`` occupies positions ``[r*P, (r+1)*P)``.
The prior covariance diagonals built in :mod:`msmw.gibbs` rely on this.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class SourcePartition:
    """Contiguous split of the feature axis into sources."""

    sizes: tuple[int, ...]
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 1:
            raise ShapeError("a partition needs at least one source")
        if any(s < 1 for s in sizes):
            raise ShapeError(f"source sizes must be positive, got {sizes}")
        object.__setattr__(self, "sizes", sizes)
        names = tuple(self.names) or tuple(f"source{m + 1}" for m in range(len(sizes)))
        if len(names) != len(sizes):
            raise ShapeError("one name per source is required")
        object.__setattr__(self, "names", names)

    @property
    def total(self) -> int:
        return sum(self.sizes)

    @property
    def n_sources(self) -> int:
        return len(self.sizes)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.sizes)]))

    def slices(self) -> list[slice]:
        off = self.offsets
        return [slice(off[m], off[m + 1]) for m in range(self.n_sources)]

    def labels(self) -> np.ndarray:
        """Source index of every feature, length ``total``."""
        return np.repeat(np.arange(self.n_sources), self.sizes)

    def merged(self) -> "SourcePartition":
        """All features in a single source."""
        return SourcePartition((self.total,), ("all",))


@dataclass(frozen=True, eq=False)
class MultiWayPredictors:
    """An ``N x P x D`` predictor array with a source partition of the P axis."""

    values: np.ndarray
    partition: SourcePartition

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 3:
            raise ShapeError(f"predictors must be N x P x D, got shape {values.shape}")
        n, p, d = values.shape
        if n < 1 or d < 1:
            raise ShapeError(f"N and D must be at least 1, got shape {values.shape}")
        if self.partition.total != p:
            raise ShapeError(
                f"partition covers {self.partition.total} features but P = {p}"
            )
        if not np.all(np.isfinite(values)):
            raise ShapeError("predictor values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def single_source(cls, values) -> "MultiWayPredictors":
        values = np.asarray(values, dtype=float)
        return cls(values, SourcePartition((values.shape[1],)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def P(self) -> int:
        return self.values.shape[1]

    @property
    def D(self) -> int:
        return self.values.shape[2]

    def subset(self, index) -> "MultiWayPredictors":
        """Rows (units) selected by ``index``."""
        return MultiWayPredictors(self.values[np.asarray(index)], self.partition)

    def select_sources(self, sources: Sequence[int]) -> "MultiWayPredictors":
        """Restrict to the given source indices, preserving their order."""
        slices = self.partition.slices()
        cols = np.concatenate([np.arange(slices[m].start, slices[m].stop) for m in sources])
        part = SourcePartition(
            tuple(self.partition.sizes[m] for m in sources),
            tuple(self.partition.names[m] for m in sources),
        )
        return MultiWayPredictors(self.values[:, cols, :], part)

    def with_partition(self, partition: SourcePartition) -> "MultiWayPredictors":
        return MultiWayPredictors(self.values, partition)


@dataclass(frozen=True, eq=False)
class FactorPair:
    """Low-rank coefficient factors, ``B = W V^T``."""

    W: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if W.ndim != 2 or V.ndim != 2 or W.shape[1] != V.shape[1]:
            raise ShapeError(f"factor shapes {W.shape} and {V.shape} do not share a rank")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "V", V)

    @property
    def rank(self) -> int:
        return self.W.shape[1]


def _as_array(X) -> np.ndarray:
    return X.values if isinstance(X, MultiWayPredictors) else np.asarray(X, dtype=float)


def generalized_inner_product(A, B) -> float:
    """Sum of elementwise products of two same-shaped arrays."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ShapeError(f"non-conformable arrays: {A.shape} vs {B.shape}")
    return float(np.sum(A * B))


def inner_products(X, B) -> np.ndarray:
    """``X_i . B`` for every unit ``i``; the linear predictor."""
    X = _as_array(X)
    B = np.asarray(B, dtype=float)
    if X.shape[1:] != B.shape:
        raise ShapeError(f"predictors {X.shape} do not conform to coefficients {B.shape}")
    return np.einsum("npd,pd->n", X, B)


def compose_coefficients(f: FactorPair | np.ndarray, V: np.ndarray | None = None) -> np.ndarray:
    """``B = W V^T``. Accepts a :class:`FactorPair` or the two factors."""
    if isinstance(f, FactorPair):
        W, V = f.W, f.V
    else:
        W = np.atleast_2d(np.asarray(f, dtype=float))
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if W.shape[1] != V.shape[1]:
            raise ShapeError(f"factor shapes {W.shape} and {V.shape} do not share a rank")
    return W @ V.T


def vec(M: np.ndarray) -> np.ndarray:
    """Column-major vectorization."""
    return np.asarray(M).reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.asarray(v).reshape(rows, cols, order="F")


def build_design_given_V(X, V: np.ndarray) -> np.ndarray:
    """``N x RP`` design whose row ``i`` is ``vec(X_i V)``, so that
    ``design @ vec(W)`` gives the linear predictor for ``B = W V^T``."""
    X = _as_array(X)
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.shape[0] != X.shape[2]:
        raise ShapeError(f"V has {V.shape[0]} rows but D = {X.shape[2]}")
    XV = np.matmul(X, V)  # N x P x R
    return XV.transpose(0, 2, 1).reshape(X.shape[0], -1)


def build_design_given_W(X, W: np.ndarray) -> np.ndarray:
    """``N x RD`` design whose row ``i`` is ``vec(X_i^T W)``, so that
    ``design @ vec(V)`` gives the linear predictor for ``B = W V^T``."""
    X = _as_array(X)
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] != X.shape[1]:
        raise ShapeError(f"W has {W.shape[0]} rows but P = {X.shape[1]}")
    XtW = np.matmul(X.transpose(0, 2, 1), W)  # N x D x R
    return XtW.transpose(0, 2, 1).reshape(X.shape[0], -1)


def flatten_non_multiway(X) -> np.ndarray:
    """``N x PD`` matrix with row ``i`` equal to ``vec(X_i)`` (column-major,
    so cell ``(p, d)`` sits at column ``p + d*P``)."""
    X = _as_array(X)
    return X.transpose(0, 2, 1).reshape(X.shape[0], -1)


def flattened_labels(partition: SourcePartition, D: int) -> np.ndarray:
    """Source label of each flattened cell; cell ``(p, d)`` inherits the source of ``p``."""
    return np.tile(partition.labels(), D)
