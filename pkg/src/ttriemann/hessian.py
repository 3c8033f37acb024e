"""Riemannian Hessian on the fixed TT-rank manifold.

``hess_apply`` evaluates ``P_X ehess + P_X (D_V P_X) egrad``; the second
(curvature) term splits into a diagonal sum over projector components and
cross terms between components.  Both are assembled from three families of
small interface contractions of the ambient gradient plus O(d) extra Gram
recursions, so a sparse gradient never forces a dense pass.

The finite-difference oracles at the bottom exist to validate every closed
form against numeric differentiation along core-perturbation curves; they
are desk-scale only and shared with the test suite and the ``check`` CLI.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space, solve_triangular

from ._kernels import sparse_families
from .sparse import SparseTensor
from .tangent import (
    TangentVector,
    convert_param,
    dense_interface_family,
    densify,
    gauge_project_core,
    project,
    project_dense,
    retract,
    right_orthogonalize_with_factors,
    tangent_inner,
    transport,
    variational_interfaces,
    zero_tangent,
)
from .tt import TTTensor, _check_cap, core_from_lmat, interface_left_list, \
    left_orthogonalize, lmat


# ---------------------------------------------------------------------------
# interface families of the ambient gradient
# ---------------------------------------------------------------------------

@dataclass
class AmbientCache:
    """Per-(X, Z) quantities reusable across Hessian applications: the
    projector input family A and the gauged cores of the d projector
    components of Z."""

    A: list
    Y: list


def _families_A(X: TTTensor, factors, Z) -> list:
    if isinstance(Z, SparseTensor):
        if Z.n != X.n:
            raise ValueError("shape mismatch")
        return sparse_families(list(X.cores), list(factors.cores),
                               Z.indices, Z.values)
    if isinstance(Z, TTTensor):
        Z = Z.to_dense()
    return dense_interface_family(X, factors.cores,
                                  np.asarray(Z, dtype=np.float64))


def precompute_ambient(X: TTTensor, Z, factors) -> AmbientCache:
    A = _families_A(X, factors, Z)
    Y = [gauge_project_core(a, u) for a, u in zip(A[:-1], X.cores[:-1])]
    Y.append(A[-1].copy())
    return AmbientCache(A=A, Y=Y)


def three_products_dense(X: TTTensor, factors, V: TangentVector,
                         Z: np.ndarray):
    """Reference contractions of a dense gradient against the plain,
    differentiated-left and differentiated-right interfaces."""
    Z = np.asarray(Z, dtype=np.float64)
    Vf = convert_param(V, "first")
    vi = variational_interfaces(Vf)
    A = dense_interface_family(X, factors.cores, Z)
    B = dense_interface_family(X, factors.cores, Z, left_list=vi.v_le)
    C = dense_interface_family(X, None, Z, tail_list=vi.v_ge)
    return A, B, C


def three_products_sparse(X: TTTensor, factors, V: TangentVector,
                          Z: SparseTensor):
    """Single-pass sparse evaluation of the A/B/C families;
    O(d * nnz * r^2)."""
    if Z.n != X.n:
        raise ValueError("shape mismatch")
    Vf = convert_param(V, "first")
    if Z.nnz == 0:
        zero = [np.zeros_like(c) for c in X.cores]
        return zero, [np.zeros_like(c) for c in X.cores], \
            [np.zeros_like(c) for c in X.cores]
    return sparse_families(list(X.cores), list(factors.cores),
                           Z.indices, Z.values, dv_cores=list(Vf.cores))


def gram_right_tilde_v(X: TTTensor, factors, V: TangentVector) -> list:
    """Backward recursion for the Gram matrices between the right-orthogonal
    tails and the variational right interfaces.

    ``G[k]`` (k = 0..d-2) couples the tails over cores ``k+1..d-1``; rows
    index the right-orthogonal side, columns the variational side.
    O(d n r^3) total via two running products.
    """
    Vf = convert_param(V, "first")
    U, Ut, dv = X.cores, factors.cores, Vf.cores
    d = X.d
    G = [None] * (d - 1)
    g = np.einsum("pib,aib->pa", Ut[d - 1], dv[d - 1])
    h = np.einsum("pib,aib->pa", Ut[d - 1], U[d - 1])
    G[d - 2] = g
    for k in range(d - 2, 0, -1):
        g = (np.einsum("pib,bc,aic->pa", Ut[k], g, U[k], optimize=True)
             + np.einsum("pib,bc,aic->pa", Ut[k], h, dv[k], optimize=True))
        h = np.einsum("pib,bc,aic->pa", Ut[k], h, U[k], optimize=True)
        G[k - 1] = g
    return G


# ---------------------------------------------------------------------------
# workspace
# ---------------------------------------------------------------------------

@dataclass
class HessianWorkspace:
    """Everything the correction-term formulas consume, built once per
    (X, V, Z) triple; A and Y may be shared across V via an AmbientCache."""

    X: TTTensor
    factors: object
    V_first: TangentVector
    A: list
    B: list
    C: list
    G: list
    Y: list


def build_workspace(X: TTTensor, V: TangentVector, Z, factors=None,
                    cache=None) -> HessianWorkspace:
    if factors is None:
        factors = V.factors
    if cache is None:
        cache = precompute_ambient(X, Z, factors)
    Vf = convert_param(V, "first")
    if isinstance(Z, SparseTensor):
        if Z.nnz == 0:
            B = [np.zeros_like(c) for c in X.cores]
            C = [np.zeros_like(c) for c in X.cores]
        else:
            _, B, C = sparse_families(list(X.cores), list(factors.cores),
                                      Z.indices, Z.values,
                                      dv_cores=list(Vf.cores))
    else:
        if isinstance(Z, TTTensor):
            Z = Z.to_dense()
        Z = np.asarray(Z, dtype=np.float64)
        vi = variational_interfaces(Vf)
        B = dense_interface_family(X, factors.cores, Z, left_list=vi.v_le)
        C = dense_interface_family(X, None, Z, tail_list=vi.v_ge)
    G = gram_right_tilde_v(X, factors, Vf)
    return HessianWorkspace(X=X, factors=factors, V_first=Vf,
                            A=cache.A, B=B, C=C, G=G, Y=cache.Y)


# ---------------------------------------------------------------------------
# correction term: diagonal and cross contributions
# ---------------------------------------------------------------------------

def correction_diagonal(ws: HessianWorkspace) -> list:
    """Gauged core increments of the component-diagonal curvature sum.

    For every constrained core the three-term closed form combines the B
    family, a rank-space coupling of the variational core with A, and the
    tail-complement term built from C, A, the Gram matrices and an inverse
    triangular factor; the last core needs only B.
    """
    X, dv = ws.X, ws.V_first.cores
    d = X.d
    out = []
    for k in range(d - 1):
        U = X.cores[k]
        UL = lmat(U)
        AL, BL, CL = lmat(ws.A[k]), lmat(ws.B[k]), lmat(ws.C[k])
        term1 = gauge_project_core(BL, U)
        term2 = lmat(dv[k]) @ (UL.T @ AL)
        R = ws.factors.rfacs[k]
        M = CL - AL @ ws.G[k]
        M = solve_triangular(R, M.T, lower=False, trans="T").T
        term3 = gauge_project_core(M, U)
        out.append(core_from_lmat(term1 - term2 + term3, *U.shape))
    out.append(ws.B[d - 1].copy())
    return out


def _cross_sweeps(ws: HessianWorkspace):
    """Accumulated tail/head Gram sums feeding all cross terms at once.

    ``Tsum[i]`` aggregates, over components j > i, the Gram matrices of the
    j-th projected-component tails against the right-orthogonal tails at
    split i+1 (rows: component side, columns: right-orthogonal side).
    ``Ssum[i]`` aggregates over j < i the head Grams of the variational
    interfaces against the j-th component heads (rows: variational side).
    O(d n r^3) total.
    """
    X, Y, dv = ws.X, ws.Y, ws.V_first.cores
    U, Ut = X.cores, ws.factors.cores
    d = X.d
    Tsum = [None] * d
    Tsum[d - 1] = np.zeros((1, 1))
    for i in range(d - 2, -1, -1):
        t = np.einsum("avb,pvb->ap", Y[i + 1], Ut[i + 1])
        t = t + np.einsum("avb,bc,pvc->ap", U[i + 1], Tsum[i + 1], Ut[i + 1],
                          optimize=True)
        Tsum[i] = t
    Ssum = [None] * d
    Ssum[0] = np.zeros((1, 1))
    for i in range(1, d):
        s = np.einsum("avb,avc->bc", dv[i - 1], Y[i - 1])
        s = s + np.einsum("avb,ac,cvp->bp", U[i - 1], Ssum[i - 1], Ut[i - 1],
                          optimize=True)
        Ssum[i] = s
    return Tsum, Ssum


def correction_cross(ws: HessianWorkspace) -> list:
    """Gauged core increments of the cross-component curvature sum, reusing
    only workspace byproducts plus O(d) small Gram recursions."""
    X = ws.X
    d = X.d
    Tsum, Ssum = _cross_sweeps(ws)
    out = []
    for i in range(d):
        U = X.cores[i]
        inc = np.zeros((U.shape[0] * U.shape[1], U.shape[2]))
        if i < d - 1:
            inc += lmat(ws.V_first.cores[i]) @ Tsum[i]
        if i > 0:
            N = np.einsum("ac,cvb->avb", Ssum[i], ws.factors.cores[i])
            NL = lmat(N)
            inc -= gauge_project_core(NL, U) if i < d - 1 else NL
        out.append(core_from_lmat(inc, *U.shape))
    return out


def cross_term_pair(ws: HessianWorkspace, i: int, j: int) -> TangentVector:
    """Single cross term (component i of the curvature induced by component
    j of the projected gradient), for oracle comparisons."""
    X = ws.X
    d = X.d
    if i == j or not (0 <= i < d and 0 <= j < d):
        raise ValueError("need two distinct component indices")
    U, Ut, dv, Y = X.cores, ws.factors.cores, ws.V_first.cores, ws.Y
    core = np.zeros_like(U[i])
    if j > i:
        T = np.einsum("avb,pvb->ap", Y[j], Ut[j])
        for s in range(j - 1, i, -1):
            T = np.einsum("avb,bc,pvc->ap", U[s], T, Ut[s], optimize=True)
        core = core_from_lmat(lmat(dv[i]) @ T, *U[i].shape)
    else:
        S = np.einsum("avb,avc->bc", dv[j], Y[j])
        for s in range(j + 1, i):
            S = np.einsum("avb,ac,cvp->bp", U[s], S, Ut[s], optimize=True)
        N = np.einsum("ac,cvb->avb", S, Ut[i])
        core = -(gauge_project_core(N, U[i]) if i < d - 1 else N)
    cores = [np.zeros_like(c) for c in U]
    cores[i] = core
    return TangentVector(X, ws.factors, "gauged", cores, validate=False)


def weingarten(X: TTTensor, V: TangentVector, Z, factors=None,
               ws=None) -> TangentVector:
    """Curvature term of the Riemannian Hessian: the tangent projection of
    the projector derivative along V applied to the ambient gradient.
    Depends only on the normal component of Z."""
    if ws is None:
        ws = build_workspace(X, V, Z, factors=factors)
    diag = correction_diagonal(ws)
    cross = correction_cross(ws)
    cores = [a + b for a, b in zip(diag, cross)]
    return TangentVector(X, ws.factors, "gauged", cores, validate=False)


def hess_apply(X: TTTensor, V: TangentVector, egrad, ehess_of_v,
               factors=None, cache=None) -> TangentVector:
    """Riemannian Hessian along V from the ambient derivatives of the cost:
    projected ambient Hessian action plus the curvature correction."""
    if factors is None:
        factors = V.factors
    first = project(X, ehess_of_v, factors)
    ws = build_workspace(X, V, egrad, factors=factors, cache=cache)
    return first + weingarten(X, V, egrad, ws=ws)


def fd_hess_apply(X: TTTensor, V: TangentVector, grad_fn, h=None,
                  factors=None, g0=None) -> TangentVector:
    """Finite-difference Hessian: transported gradient difference along the
    retraction curve, divided by the step.

    ``grad_fn(P)`` must return the Riemannian gradient at the left-orthogonal
    point P as a tangent vector based at P.
    """
    if factors is None:
        factors = V.factors
    nv = V.norm()
    if nv == 0:
        return zero_tangent(X, factors)
    if h is None:
        h = 1e-6 * max(X.norm(), 1.0) / nv
    if h * nv <= 100 * np.finfo(np.float64).eps * max(X.norm(), 1.0):
        warnings.warn("finite-difference step underflows the base point scale")
    Xh = retract(X, V, h)
    gh = grad_fn(Xh)
    tau = transport(X, gh, factors)
    if g0 is None:
        g0 = grad_fn(X)
    if g0.base is not X:
        g0 = TangentVector(X, factors, "gauged",
                           convert_param(g0, "gauged").cores, validate=False)
    return (1.0 / h) * (tau - g0)


# ---------------------------------------------------------------------------
# numeric-differentiation oracles (desk scale, test support)
# ---------------------------------------------------------------------------

def _perturbed_point(X: TTTensor, V: TangentVector, t: float) -> TTTensor:
    """Point on the core-perturbation curve, re-orthogonalized.

    Plain perturbation of the cores by the first-parametrization variational
    cores: exact tangent direction at t = 0, and central differences cancel
    the curve's symmetric second-order mismatch.
    """
    Vf = convert_param(V, "first")
    cores = [u + t * c for u, c in zip(X.cores, Vf.cores)]
    return left_orthogonalize(TTTensor(cores))


def component_vector(W: TangentVector, k: int) -> TangentVector:
    """Tangent vector keeping only the k-th gauged component of W."""
    Wg = convert_param(W, "gauged")
    cores = [np.zeros_like(c) for c in Wg.cores]
    cores[k] = Wg.cores[k].copy()
    return TangentVector(W.base, W.factors, "gauged", cores, validate=False)


def projector_derivative_oracle(X: TTTensor, V: TangentVector, Z: np.ndarray,
                                h=1e-5, component=None) -> np.ndarray:
    """Central-difference derivative of the (component) projector applied to
    a fixed dense Z along the perturbation curve through X with velocity V."""
    Z = np.asarray(Z, dtype=np.float64)
    _check_cap(Z.size)

    def eval_at(t):
        P = _perturbed_point(X, V, t)
        W = project_dense(P, Z)
        if component is not None:
            W = component_vector(W, component)
        return densify(W)

    return (eval_at(h) - eval_at(-h)) / (2.0 * h)


# ---------------------------------------------------------------------------
# dense assembly oracles
# ---------------------------------------------------------------------------

def tangent_basis(X: TTTensor, factors=None) -> list:
    """Orthonormal basis of the tangent space in gauged coordinates."""
    if factors is None:
        factors = right_orthogonalize_with_factors(X)
    basis = []
    d = X.d
    for k in range(d):
        U = X.cores[k]
        r0, n, r1 = U.shape
        if k < d - 1:
            comp = null_space(lmat(U).T)  # orthonormal complement of range
            for a in range(comp.shape[1]):
                for b in range(r1):
                    M = np.zeros((r0 * n, r1))
                    M[:, b] = comp[:, a]
                    cores = [np.zeros_like(c) for c in X.cores]
                    cores[k] = core_from_lmat(M, r0, n, r1)
                    basis.append(TangentVector(X, factors, "gauged", cores,
                                               validate=False))
        else:
            for p in range(r0 * n):
                M = np.zeros((r0 * n, 1))
                M[p, 0] = 1.0
                cores = [np.zeros_like(c) for c in X.cores]
                cores[k] = core_from_lmat(M, r0, n, 1)
                basis.append(TangentVector(X, factors, "gauged", cores,
                                           validate=False))
    assert len(basis) == X.shape.manifold_dim
    return basis


def assemble_operator_matrix(op, basis) -> np.ndarray:
    """Matrix of a tangent-space operator in an orthonormal tangent basis."""
    dim = len(basis)
    H = np.zeros((dim, dim))
    for q in range(dim):
        w = op(basis[q])
        for p in range(dim):
            H[p, q] = tangent_inner(basis[p], w)
    return H


def assemble_projector_matrix(X: TTTensor, factors=None) -> np.ndarray:
    """Explicit matrix of the tangent projector on the ambient space."""
    if factors is None:
        factors = right_orthogonalize_with_factors(X)
    N = X.num_elements
    _check_cap(N * N)
    P = np.zeros((N, N))
    for j in range(N):
        e = np.zeros(N)
        e[j] = 1.0
        Z = e.reshape(X.n, order="F")
        P[:, j] = densify(project_dense(X, Z, factors)).ravel(order="F")
    return P
