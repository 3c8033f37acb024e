"""Sparse tensors: a set of observed multi-indices with values."""

from __future__ import annotations

import math

import numpy as np

from .tt import _check_cap


def check_indices(indices: np.ndarray, n, require_unique=True) -> np.ndarray:
    """Validate an ``(m, d)`` integer index array against mode sizes ``n``."""
    indices = np.asarray(indices)
    n = tuple(int(v) for v in n)
    if indices.ndim != 2 or indices.shape[1] != len(n):
        raise ValueError(f"indices must have shape (m, {len(n)})")
    if not np.issubdtype(indices.dtype, np.integer):
        if not np.all(indices == np.floor(indices)):
            raise ValueError("indices must be integers")
    indices = indices.astype(np.int64)
    if indices.size:
        if indices.min() < 0 or (indices >= np.array(n)).any():
            raise IndexError("index out of bounds")
        if require_unique:
            codes = np.ravel_multi_index(indices.T, n)
            if np.unique(codes).size != indices.shape[0]:
                raise ValueError("duplicate indices")
    return indices


class SparseTensor:
    """Observed entries of a tensor: unique in-bounds multi-indices + values."""

    def __init__(self, n, indices, values, validate=True):
        self.n = tuple(int(v) for v in n)
        if validate:
            self.indices = check_indices(indices, self.n)
        else:
            self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.shape != (self.indices.shape[0],):
            raise ValueError("values must match the number of indices")

    @property
    def nnz(self) -> int:
        return self.indices.shape[0]

    @property
    def d(self) -> int:
        return len(self.n)

    def with_values(self, values) -> "SparseTensor":
        return SparseTensor(self.n, self.indices, values, validate=False)

    def to_dense(self) -> np.ndarray:
        _check_cap(math.prod(self.n))
        T = np.zeros(self.n)
        T[tuple(self.indices.T)] = self.values
        return T

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __repr__(self):
        return f"SparseTensor(n={self.n}, nnz={self.nnz})"
