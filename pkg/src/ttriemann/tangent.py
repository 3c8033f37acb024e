"""Tangent spaces of the fixed TT-rank manifold.

A tangent vector at a left-orthogonal point X is stored core-wise in one of
two parametrizations sharing the gauge conditions
``lmat(dV_k)^T lmat(U_k) = 0`` for k < d-1:

* ``"first"``: every term of the defining sum uses the plain cores of X on
  both sides of the variational core.
* ``"gauged"``: terms use X's cores to the left and the right-orthogonalized
  cores to the right, which makes projections and inner products cheap.

The two are linked by the upper-triangular factors of the base point:
``lmat(dVt_k) = lmat(dV_k) @ rfacs[k].T`` for k < d-1 and the last cores
coincide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from ._kernels import sparse_families
from .sparse import SparseTensor
from .tt import (
    RankDeficientError,
    RightOrthFactors,
    TTTensor,
    _check_cap,
    core_from_lmat,
    interface_left_list,
    interface_right_list,
    left_orthogonalize,
    lmat,
    orthogonalize,
    right_orthogonalize_with_factors,
    tt_round,
)

GAUGE_RTOL = 1e-8


def prepare_base(X: TTTensor, cond_limit=1e12):
    """Left-orthogonalize a point and attach its right factors.

    An ill-conditioned triangular factor (condition above ``cond_limit``)
    triggers one re-orthogonalization from scratch before giving up, since
    those factors get inverted downstream.
    """
    X1 = X if X.is_left_orthogonal else left_orthogonalize(X)
    factors = right_orthogonalize_with_factors(X1)
    conds = [np.linalg.cond(R) for R in factors.rfacs]
    if max(conds) > cond_limit:
        X1 = orthogonalize(X1, X1.d - 1)
        factors = right_orthogonalize_with_factors(X1)
        conds = [np.linalg.cond(R) for R in factors.rfacs]
        if max(conds) > cond_limit:
            raise RankDeficientError(
                f"triangular factor condition {max(conds):.2e} persists after "
                "re-orthogonalization; point is numerically rank deficient"
            )
    return X1, factors


def gauge_project_core(core_or_lmat, u_core):
    """Apply ``I - U^L (U^L)^T`` to a candidate variational core."""
    UL = lmat(u_core)
    if core_or_lmat.ndim == 3:
        M = lmat(core_or_lmat)
        out = M - UL @ (UL.T @ M)
        return core_from_lmat(out, *core_or_lmat.shape)
    M = core_or_lmat
    return M - UL @ (UL.T @ M)


class TangentVector:
    """A tangent vector at a prepared base point.

    Immutable; linear combinations are only defined between vectors sharing
    the same base object.
    """

    def __init__(self, base: TTTensor, factors: RightOrthFactors, param: str,
                 cores, validate=True):
        if param not in ("first", "gauged"):
            raise ValueError("param must be 'first' or 'gauged'")
        cores = tuple(np.asarray(c, dtype=np.float64) for c in cores)
        if validate:
            if not base.is_left_orthogonal:
                raise ValueError("base point must be left-orthogonal")
            if len(cores) != base.d:
                raise ValueError("need one variational core per base core")
            for c, u in zip(cores, base.cores):
                if c.shape != u.shape:
                    raise ValueError("variational cores must match base cores")
        self.base = base
        self.factors = factors
        self.param = param
        self.cores = cores

    @property
    def d(self) -> int:
        return len(self.cores)

    def gauge_violation(self) -> float:
        """Largest scaled gauge residual over the constrained cores.

        Numerically zero cores satisfy the gauge trivially and are skipped
        (their residual is pure roundoff).
        """
        eps = np.finfo(np.float64).eps
        worst = 0.0
        for c, u in zip(self.cores[:-1], self.base.cores[:-1]):
            nc, nu = np.linalg.norm(c), np.linalg.norm(u)
            if nc <= 100 * eps * nu:
                continue
            num = np.linalg.norm(lmat(c).T @ lmat(u))
            worst = max(worst, num / (nc * nu))
        return worst

    # -- linear structure ---------------------------------------------------

    def _like(self, cores):
        return TangentVector(self.base, self.factors, self.param, cores,
                             validate=False)

    def __add__(self, other):
        if not isinstance(other, TangentVector):
            return NotImplemented
        if other.base is not self.base:
            raise ValueError("tangent vectors live at different base points")
        w = other if other.param == self.param else convert_param(other, self.param)
        return self._like([a + b for a, b in zip(self.cores, w.cores)])

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, a):
        return self._like([float(a) * c for c in self.cores])

    __rmul__ = __mul__

    def __neg__(self):
        return (-1.0) * self

    def norm(self) -> float:
        return math.sqrt(max(tangent_inner(self, self), 0.0))


def make_tangent(X: TTTensor, cores, param="gauged", factors=None,
                 enforce_gauge=False) -> TangentVector:
    """Wrap variational cores as a tangent vector, checking (or enforcing)
    the gauge conditions."""
    if factors is None:
        factors = right_orthogonalize_with_factors(X)
    V = TangentVector(X, factors, param, cores)
    if enforce_gauge:
        fixed = [gauge_project_core(c, u)
                 for c, u in zip(V.cores[:-1], X.cores[:-1])]
        fixed.append(V.cores[-1])
        return V._like(fixed)
    worst = V.gauge_violation()
    if worst > GAUGE_RTOL:
        raise ValueError(
            f"gauge violation {worst:.2e} exceeds {GAUGE_RTOL:.0e}; pass "
            "enforce_gauge=True to project"
        )
    return V


def zero_tangent(X: TTTensor, factors=None, param="gauged") -> TangentVector:
    if factors is None:
        factors = right_orthogonalize_with_factors(X)
    return TangentVector(X, factors, param,
                         [np.zeros_like(c) for c in X.cores], validate=False)


def random_tangent(X: TTTensor, factors=None, seed=None) -> TangentVector:
    """Random gauged tangent vector (normal core entries, gauge enforced)."""
    rng = np.random.default_rng(seed)
    cores = [rng.standard_normal(c.shape) for c in X.cores]
    return make_tangent(X, cores, param="gauged", factors=factors,
                        enforce_gauge=True)


def convert_param(V: TangentVector, to: str) -> TangentVector:
    """Interchange the two parametrizations via the triangular factors."""
    if to not in ("first", "gauged"):
        raise ValueError("target param must be 'first' or 'gauged'")
    if V.param == to:
        return V
    rfacs = V.factors.rfacs
    cores = []
    for k, c in enumerate(V.cores[:-1]):
        M = lmat(c)
        R = rfacs[k]
        if to == "gauged":        # dVt = dV @ R^T
            out = M @ R.T
        else:                      # dV = dVt @ R^{-T}
            out = solve_triangular(R, M.T, lower=False).T
        cores.append(core_from_lmat(out, *c.shape))
    cores.append(V.cores[-1].copy())
    return TangentVector(V.base, V.factors, to, cores, validate=False)


def tangent_inner(V: TangentVector, W: TangentVector) -> float:
    """Euclidean inner product of two tangent vectors at the same base,
    evaluated core-wise in the gauged parametrization.  O(d n r^2)."""
    if V.base is not W.base:
        raise ValueError("tangent vectors live at different base points")
    Vg = convert_param(V, "gauged")
    Wg = convert_param(W, "gauged")
    return float(sum(np.vdot(a, b) for a, b in zip(Vg.cores, Wg.cores)))


def tangent_norm(V: TangentVector) -> float:
    return V.norm()


# ---------------------------------------------------------------------------
# variational interface matrices (explicit, desk scale)
# ---------------------------------------------------------------------------

@dataclass
class VariationalInterfaces:
    """Explicit variational interface matrices of a first-parametrization
    tangent vector; ``v_le[k]`` spans cores 0..k-1 and ``v_ge[k]`` spans
    cores k..d-1 (tall convention, zero base cases at both ends)."""

    v_le: list
    v_ge: list


def variational_interfaces(V: TangentVector) -> VariationalInterfaces:
    Vf = convert_param(V, "first")
    X = V.base
    _check_cap(X.num_elements)
    x_le = interface_left_list(X.cores)
    x_ge = interface_right_list(X.cores)
    n = X.n
    v_le = [np.zeros((1, 1))]
    for k in range(X.d):
        T = (np.einsum("pa,aib->pib", v_le[k], X.cores[k])
             + np.einsum("pa,aib->pib", x_le[k], Vf.cores[k]))
        v_le.append(T.reshape(-1, T.shape[2], order="F"))
    v_ge = [np.zeros((1, 1))]
    for k in range(X.d - 1, -1, -1):
        T = (np.einsum("aib,tb->ita", X.cores[k], v_ge[0])
             + np.einsum("aib,tb->ita", Vf.cores[k], x_ge[k + 1]))
        v_ge.insert(0, T.reshape(-1, T.shape[2], order="F"))
    return VariationalInterfaces(v_le, v_ge)


# ---------------------------------------------------------------------------
# orthogonal projection onto the tangent space
# ---------------------------------------------------------------------------

def _gauged_from_A(X: TTTensor, factors, A) -> TangentVector:
    """Gauged cores from the interface family A (projector input)."""
    cores = [gauge_project_core(a, u) for a, u in zip(A[:-1], X.cores[:-1])]
    cores.append(A[-1].copy())
    return TangentVector(X, factors, "gauged", cores, validate=False)


def dense_interface_family(X: TTTensor, tail_cores, Z: np.ndarray,
                           left_list=None, tail_list=None) -> list:
    """Reference contraction ``(I (x) L_{<k}^T) Z^{<k>} Tail_{>k}`` for a
    dense Z, returned in core shape.  Desk scale only."""
    if Z.shape != X.n:
        raise ValueError("shape mismatch")
    _check_cap(Z.size)
    faces = interface_left_list(X.cores) if left_list is None else left_list
    tails = interface_right_list(tail_cores) if tail_list is None else tail_list
    out = []
    nl = 1
    for k in range(X.d):
        nk = X.n[k]
        nr = Z.size // (nl * nk)
        Zk = Z.reshape(nl, nk, nr, order="F")
        out.append(np.einsum("pa,pvt,tb->avb", faces[k], Zk, tails[k + 1],
                             optimize=True))
        nl *= nk
    return out


def project_dense(X: TTTensor, Z: np.ndarray, factors=None) -> TangentVector:
    """Orthogonal projection of a dense tensor onto the tangent space."""
    if factors is None:
        factors = right_orthogonalize_with_factors(X)
    A = dense_interface_family(X, factors.cores, np.asarray(Z, dtype=np.float64))
    return _gauged_from_A(X, factors, A)


def project_sparse(X: TTTensor, Z: SparseTensor, factors=None) -> TangentVector:
    """Projection of a sparse tensor; O(d * nnz * r^2), never dense."""
    if Z.n != X.n:
        raise ValueError("shape mismatch")
    if factors is None:
        factors = right_orthogonalize_with_factors(X)
    if Z.nnz == 0:
        return zero_tangent(X, factors)
    A = sparse_families(list(X.cores), list(factors.cores), Z.indices, Z.values)
    return _gauged_from_A(X, factors, A)


def project_tt(X: TTTensor, Z: TTTensor, factors=None) -> TangentVector:
    """Projection of a TT tensor using Gram recursions; O(d n r^2 rho^2)."""
    if Z.n != X.n:
        raise ValueError("shape mismatch")
    if factors is None:
        factors = right_orthogonalize_with_factors(X)
    d = X.d
    Ls = [np.ones((1, 1))]
    for k in range(d):
        Ls.append(np.einsum("avb,ac,cvp->bp", X.cores[k], Ls[k], Z.cores[k],
                            optimize=True))
    Qs = [np.ones((1, 1))]
    for k in range(d - 1, -1, -1):
        Qs.insert(0, np.einsum("avb,bc,pvc->ap", Z.cores[k], Qs[0],
                               factors.cores[k], optimize=True))
    A = [np.einsum("ac,cve,eb->avb", Ls[k], Z.cores[k], Qs[k + 1],
                   optimize=True) for k in range(d)]
    return _gauged_from_A(X, factors, A)


def project(X: TTTensor, Z, factors=None) -> TangentVector:
    """Dispatch on the ambient representation (dense / sparse / TT)."""
    if isinstance(Z, SparseTensor):
        return project_sparse(X, Z, factors)
    if isinstance(Z, TTTensor):
        return project_tt(X, Z, factors)
    return project_dense(X, np.asarray(Z), factors)


# ---------------------------------------------------------------------------
# densification, entries, retraction, transport
# ---------------------------------------------------------------------------

def tangent_to_tt(V: TangentVector, scale=1.0, include_base=False) -> TTTensor:
    """Exact TT representation (interior ranks doubled) of ``scale * V``,
    optionally of ``X + scale * V``."""
    Vg = convert_param(V, "gauged")
    X = V.base
    tilde = V.factors.cores
    d = X.d
    s = float(scale)
    cores = []
    for k in range(d):
        U = X.cores[k]
        dV = s * Vg.cores[k]
        r0, n, r1 = U.shape
        if k == 0:
            cores.append(np.concatenate([dV, U], axis=2))
        elif k == d - 1:
            top = tilde[k]
            bot = dV + U if include_base else dV
            cores.append(np.concatenate([top, bot], axis=0))
        else:
            c = np.zeros((2 * r0, n, 2 * r1))
            c[:r0, :, :r1] = tilde[k]
            c[r0:, :, :r1] = dV
            c[r0:, :, r1:] = U
            cores.append(c)
    return TTTensor(cores)


def densify(V: TangentVector) -> np.ndarray:
    """Dense value of a tangent vector (desk scale)."""
    return tangent_to_tt(V).to_dense()


def tangent_entries(V: TangentVector, indices: np.ndarray) -> np.ndarray:
    """Evaluate V at a batch of multi-indices via the product rule;
    O(d * m * r^2), no dense buffers."""
    indices = np.asarray(indices)
    X = V.base
    after = V.factors.cores if V.param == "gauged" else X.cores
    m = indices.shape[0]
    if m == 0:
        return np.zeros(0)
    D = V.cores[0][0, indices[:, 0], :]
    P = X.cores[0][0, indices[:, 0], :]
    for k in range(1, X.d):
        pos = indices[:, k]
        D = (np.einsum("ma,amb->mb", D, after[k][:, pos, :], optimize=True)
             + np.einsum("ma,amb->mb", P, V.cores[k][:, pos, :], optimize=True))
        if k < X.d - 1:
            P = np.einsum("ma,amb->mb", P, X.cores[k][:, pos, :], optimize=True)
    return D[:, 0].copy()


def retract(X: TTTensor, V: TangentVector, t=1.0) -> TTTensor:
    """TT-SVD retraction: round ``X + t V`` back to the rank of X.

    Raises :class:`RankDeficientError` when the truncation lands on a
    rank-deficient point; callers may perturb and retry.
    """
    Z = tangent_to_tt(V, scale=t, include_base=True)
    return tt_round(Z, ranks=X.ranks[1:-1], strict=True)


def transport(X_new: TTTensor, V: TangentVector, factors_new=None) -> TangentVector:
    """Projection transport: project V (as a low-rank TT) onto the tangent
    space at the new point."""
    if X_new.n != V.base.n:
        raise ValueError("shape mismatch")
    return project_tt(X_new, tangent_to_tt(V), factors_new)
