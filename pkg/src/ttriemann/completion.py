"""Tensor completion: objective, sampling, and Hessian conditioning.

The objective is ``f(X) = 0.5 * sum_{i in Omega} (X(i) - A(i))^2``; its
ambient gradient is the sparse residual on the observation set and its
ambient Hessian action is the restriction of a tangent vector to the
observation set, so every derivative stays O(d * |Omega| * r^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from . import hessian as hs
from .sparse import SparseTensor
from .tangent import (
    TangentVector,
    project_sparse,
    random_tangent,
    tangent_entries,
    tangent_inner,
)
from .tt import TTTensor, right_orthogonalize_with_factors


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingSpec:
    """Per-mode categorical distributions, a target count of distinct
    indices, and a seed."""

    p: tuple        # one tuple of probabilities per mode
    count: int
    seed: int

    def __post_init__(self):
        p = tuple(tuple(float(v) for v in row) for row in self.p)
        object.__setattr__(self, "p", p)
        for row in p:
            if any(v < 0 for v in row):
                raise ValueError("probabilities must be nonnegative")
            if abs(sum(row) - 1.0) > 1e-12:
                raise ValueError("probabilities must sum to 1 per mode")
        if self.count < 1:
            raise ValueError("need at least one sample")

    @staticmethod
    def broadcast(p, d, count, seed) -> "SamplingSpec":
        """One distribution applied to every mode."""
        return SamplingSpec(tuple(tuple(p) for _ in range(d)), count, seed)


def sample_indices(spec: SamplingSpec, n) -> np.ndarray:
    """Draw ``count`` *distinct* multi-indices, each coordinate i.i.d. from
    the per-mode distribution; duplicates are rejected and redrawn.
    Deterministic per seed; rows returned sorted by linear code."""
    n = tuple(int(v) for v in n)
    d = len(n)
    if len(spec.p) != d:
        raise ValueError("need one distribution per mode")
    for row, m in zip(spec.p, n):
        if len(row) != m:
            raise ValueError("distribution length must match mode size")
    support = math.prod(sum(1 for v in row if v > 0) for row in spec.p)
    if spec.count > support:
        raise ValueError(
            f"cannot draw {spec.count} distinct indices from a support of "
            f"size {support}"
        )
    rng = np.random.default_rng(spec.seed)
    seen = np.empty(0, dtype=np.int64)
    while seen.size < spec.count:
        batch = max(2 * (spec.count - seen.size), 128)
        draws = np.empty((batch, d), dtype=np.int64)
        for k in range(d):
            draws[:, k] = rng.choice(n[k], size=batch, p=np.asarray(spec.p[k]))
        codes = np.ravel_multi_index(draws.T, n)
        seen = np.unique(np.concatenate([seen, codes]))
    rng2 = np.random.default_rng(spec.seed + 1)
    if seen.size > spec.count:
        keep = rng2.choice(seen.size, size=spec.count, replace=False)
        seen = np.sort(seen[keep])
    return np.stack(np.unravel_index(seen, n), axis=-1).astype(np.int64)


def observe(X: TTTensor, indices: np.ndarray) -> SparseTensor:
    """Sparse tensor holding X's values on an observation set."""
    return SparseTensor(X.n, indices, X.entries(indices))


# ---------------------------------------------------------------------------
# objective pieces
# ---------------------------------------------------------------------------

def completion_cost(X: TTTensor, data: SparseTensor) -> float:
    if data.n != X.n:
        raise ValueError("shape mismatch")
    res = X.entries(data.indices) - data.values
    return 0.5 * float(res @ res)


def completion_egrad(X: TTTensor, data: SparseTensor) -> SparseTensor:
    """Ambient gradient: the residual supported on the observation set."""
    if data.n != X.n:
        raise ValueError("shape mismatch")
    return data.with_values(X.entries(data.indices) - data.values)


def completion_ehess(X: TTTensor, V: TangentVector, data: SparseTensor) -> SparseTensor:
    """Ambient Hessian action: the tangent vector restricted to the
    observation set."""
    if data.n != X.n:
        raise ValueError("shape mismatch")
    return data.with_values(tangent_entries(V, data.indices))


class CompletionProblem:
    """Cost / ambient-gradient / ambient-Hessian bundle for the solvers."""

    def __init__(self, train: SparseTensor, test: SparseTensor | None = None):
        self.train = train
        self.test = test

    @property
    def n(self):
        return self.train.n

    def cost(self, X: TTTensor) -> float:
        return completion_cost(X, self.train)

    def egrad(self, X: TTTensor) -> SparseTensor:
        return completion_egrad(X, self.train)

    def ehess(self, X: TTTensor, V: TangentVector) -> SparseTensor:
        return completion_ehess(X, V, self.train)

    def test_cost(self, X: TTTensor):
        if self.test is None:
            return None
        return completion_cost(X, self.test)

    def linesearch_guess(self, X: TTTensor, V: TangentVector) -> float:
        """Exact minimizer of the cost restricted to the line X + t*V in
        the ambient space (the standard completion line-search seed)."""
        res = X.entries(self.train.indices) - self.train.values
        dv = tangent_entries(V, self.train.indices)
        denom = float(dv @ dv)
        if denom <= 0:
            return 1.0
        return -float(res @ dv) / denom


# ---------------------------------------------------------------------------
# Hessian conditioning at a point
# ---------------------------------------------------------------------------

@dataclass
class ConditionEstimate:
    lam_max: float
    lam_min_pos: float
    kappa: float
    iterations: int
    dim: int
    converged: bool
    residual: float


def condition_estimate(X: TTTensor, problem, factors=None, max_iter=200,
                       seed=0, null_rtol=1e-10) -> ConditionEstimate:
    """Extreme Riemannian-Hessian eigenvalues on the tangent space via a
    Lanczos iteration with full reorthogonalization.

    ``kappa`` is taken over the positive spectrum: eigenvalues below
    ``null_rtol * lam_max`` count as null directions (the Hessian at a
    completion target is PSD with a possible near-null space).  When the
    Krylov budget covers the full tangent dimension the spectrum is exact;
    otherwise ``converged`` reflects the extreme Ritz residuals.
    """
    if factors is None:
        factors = right_orthogonalize_with_factors(X)
    egrad = problem.egrad(X)
    cache = hs.precompute_ambient(X, egrad, factors)

    def op(V):
        return hs.hess_apply(X, V, egrad, problem.ehess(X, V),
                             factors=factors, cache=cache)

    dim = X.shape.manifold_dim
    m = min(dim, max_iter)
    rng = np.random.default_rng(seed)
    q = random_tangent(X, factors, seed=rng.integers(2**32))
    q = (1.0 / q.norm()) * q
    Q = [q]
    alphas, betas = [], []
    scale = 1.0
    for j in range(m):
        w = op(Q[j])
        a = tangent_inner(w, Q[j])
        alphas.append(a)
        scale = max(scale, abs(a))
        w = w - a * Q[j]
        if j > 0:
            w = w - betas[-1] * Q[j - 1]
        for qq in Q:  # full reorthogonalization
            w = w - tangent_inner(w, qq) * qq
        if j == m - 1:
            break
        b = w.norm()
        if b <= 1e-12 * scale:
            # invariant subspace: restart in the orthogonal complement
            w = random_tangent(X, factors, seed=rng.integers(2**32))
            for qq in Q:
                w = w - tangent_inner(w, qq) * qq
            b2 = w.norm()
            if b2 <= 1e-12:
                break
            betas.append(0.0)
            Q.append((1.0 / b2) * w)
        else:
            betas.append(b)
            Q.append((1.0 / b) * w)

    alphas = np.asarray(alphas)
    betas = np.asarray(betas[: len(alphas) - 1])
    if len(alphas) == 1:
        eigs = alphas.copy()
        vecs = np.ones((1, 1))
    else:
        eigs, vecs = eigh_tridiagonal(alphas, betas)
    lam_max = float(eigs[-1])
    pos = eigs[eigs > null_rtol * max(lam_max, 0.0)]
    if pos.size == 0:
        raise RuntimeError("no positive spectrum found within the budget")
    lam_min_pos = float(pos[0])
    iters = len(alphas)
    if iters == dim:
        converged, residual = True, 0.0
    else:
        blast = betas[-1] if betas.size else 0.0
        residual = float(abs(blast) * max(abs(vecs[-1, -1]), abs(vecs[-1, 0])))
        converged = residual <= 1e-6 * max(lam_max, 1.0)
    return ConditionEstimate(lam_max=lam_max, lam_min_pos=lam_min_pos,
                             kappa=lam_max / lam_min_pos, iterations=iters,
                             dim=dim, converged=converged, residual=residual)
