"""Scikit-learn style front end for tensor completion.

``TTCompletion`` treats observations as (multi-index, value) pairs: ``X`` is
an integer array of shape ``(n_samples, d)`` and ``y`` the observed entries.
Fitting recovers a fixed-TT-rank tensor from the samples; ``predict``
evaluates it at new multi-indices, so the estimator composes with the usual
model-selection tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .completion import CompletionProblem
from .optim import TrustRegionConfig, als_minimize, rcg_minimize, rtr_minimize
from .sparse import SparseTensor, check_indices
from .tt import Shape, random_tt


class TTCompletion(BaseEstimator, RegressorMixin):
    """Low-rank tensor completion on the fixed TT-rank manifold.

    Parameters
    ----------
    dims : tuple of int
        Mode sizes of the ambient tensor.
    rank : tuple of int
        The d-1 interior TT-ranks.
    algorithm : {"rtr", "fdtr", "rcg", "als"}
        Second-order trust region (exact or finite-difference Hessian),
        nonlinear CG, or alternating least squares.
    max_iter : int
        Outer iterations (sweeps for ALS).
    grad_tol : float or None
        Gradient-norm stopping tolerance (gradient-based algorithms).
    max_time : float or None
        Wall-clock budget in seconds.
    random_state : int or None
        Seed for the random initial point.

    Attributes
    ----------
    tensor_ : TTTensor
        The fitted TT tensor.
    log_ : RunLog
        Per-iteration telemetry of the solver run.
    n_iter_ : int
        Outer iterations actually performed.
    """

    def __init__(self, dims=None, rank=None, algorithm="rtr", max_iter=100,
                 grad_tol=None, max_time=None, initial_radius=100.0,
                 max_radius=100.0 * 2**11, random_state=None):
        self.dims = dims
        self.rank = rank
        self.algorithm = algorithm
        self.max_iter = max_iter
        self.grad_tol = grad_tol
        self.max_time = max_time
        self.initial_radius = initial_radius
        self.max_radius = max_radius
        self.random_state = random_state

    def _validate(self, X, y=None):
        if self.dims is None or self.rank is None:
            raise ValueError("dims and rank must be set before fitting")
        idx = check_indices(np.asarray(X), self.dims, require_unique=False)
        if y is None:
            return idx
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.shape[0] != idx.shape[0]:
            raise ValueError("X and y have inconsistent lengths")
        return idx, y

    def fit(self, X, y):
        idx, y = self._validate(X, y)
        # duplicate observations are averaged so the training set is a
        # well-defined sparse tensor
        codes = np.ravel_multi_index(idx.T, self.dims)
        order = np.argsort(codes, kind="stable")
        codes, idx, y = codes[order], idx[order], y[order]
        uniq, start = np.unique(codes, return_index=True)
        if uniq.size != codes.size:
            sums = np.add.reduceat(y, start)
            counts = np.diff(np.append(start, codes.size))
            y = sums / counts
            idx = idx[start]
        train = SparseTensor(self.dims, idx, y, validate=False)
        problem = CompletionProblem(train)
        shape = Shape.of(self.dims, self.rank)
        X0 = random_tt(shape, seed=self.random_state)
        cfg = TrustRegionConfig(
            initial_radius=self.initial_radius, max_radius=self.max_radius,
            max_outer=self.max_iter, grad_tol=self.grad_tol,
            max_time=self.max_time,
        )
        if self.algorithm in ("rtr", "fdtr"):
            mode = "exact" if self.algorithm == "rtr" else "fd"
            self.tensor_, self.log_ = rtr_minimize(problem, X0, cfg,
                                                   hess_mode=mode)
        elif self.algorithm == "rcg":
            self.tensor_, self.log_ = rcg_minimize(problem, X0, cfg)
        elif self.algorithm == "als":
            self.tensor_, self.log_ = als_minimize(problem, X0,
                                                   sweeps=self.max_iter,
                                                   max_time=self.max_time)
        else:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        self.n_iter_ = self.log_.final.it
        return self

    def predict(self, X):
        if not hasattr(self, "tensor_"):
            raise NotFittedError("call fit before predict")
        idx = self._validate(X)
        return self.tensor_.entries(idx)
