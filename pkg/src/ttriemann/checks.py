"""Self-verification suite: every closed-form piece of the geometry is
compared against an independent oracle (dense contraction, enumeration, or
numeric differentiation).  Driven by the ``check`` CLI subcommand and reused
by the test suite."""

from __future__ import annotations

import math
import time
import tracemalloc
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import completion as cp
from . import hessian as hs
from . import tangent as tg
from .sparse import SparseTensor
from .tt import (
    Shape,
    TTTensor,
    interface_left_list,
    interface_right_list,
    lmat,
    orthogonalize,
    random_tt,
    tt_rank,
)


@dataclass
class CheckResult:
    name: str
    max_err: float
    tol: float
    passed: bool
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] {self.name:<38s} max_err={self.max_err:9.3e} "
                f"tol={self.tol:8.1e} ({self.seconds:.2f}s)")


def _result(name, err, tol, t0) -> CheckResult:
    return CheckResult(name, float(err), tol, bool(err <= tol),
                       time.perf_counter() - t0)


def _instance(shape_n, ranks, seed):
    X = random_tt(Shape.of(shape_n, ranks), seed=seed)
    Xp, fac = tg.prepare_base(X)
    V = tg.random_tangent(Xp, fac, seed=seed + 1)
    Z = np.random.default_rng(seed + 2).standard_normal(Xp.n)
    return Xp, fac, V, Z


def check_flattening(seed=0) -> CheckResult:
    """Flattenings factor through the interface matrices at every split."""
    t0 = time.perf_counter()
    err = 0.0
    for shape_n, ranks in (((2, 3, 2), (2, 2)), ((3, 2, 3, 2), (2, 3, 2))):
        X = random_tt(Shape.of(shape_n, ranks), seed=seed)
        T = X.to_dense()
        le = interface_left_list(X.cores)
        ge = interface_right_list(X.cores)
        for k in range(1, X.d):
            M = T.reshape(math.prod(shape_n[:k]), -1, order="F")
            err = max(err, np.abs(M - le[k] @ ge[k].T).max())
    return _result("flattening_interface_identity", err, 1e-12, t0)


def check_orthogonalization(seed=1) -> CheckResult:
    """Orthogonalizations preserve the tensor and deliver orthonormal
    interface matrices on either side of the center."""
    t0 = time.perf_counter()
    err = 0.0
    X = random_tt(Shape.of((2, 3, 2, 3), (2, 3, 2)), seed=seed)
    T = X.to_dense()
    for center in range(X.d):
        Y = orthogonalize(X, center)
        err = max(err, np.abs(Y.to_dense() - T).max() / np.abs(T).max())
        le = interface_left_list(Y.cores)
        ge = interface_right_list(Y.cores)
        for k in range(1, center + 1):
            err = max(err, np.abs(le[k].T @ le[k] - np.eye(le[k].shape[1])).max())
        for k in range(center + 1, X.d):
            err = max(err, np.abs(ge[k].T @ ge[k] - np.eye(ge[k].shape[1])).max())
    return _result("orthogonalization_invariants", err, 1e-12, t0)


def check_param_interchange(seed=2, corrupt_r_sign=False) -> CheckResult:
    """The two tangent parametrizations densify identically; the triangular
    factors mediate the conversion.  ``corrupt_r_sign`` flips one factor to
    verify the check has teeth."""
    t0 = time.perf_counter()
    Xp, fac, V, _ = _instance((2, 3, 2, 2), (2, 3, 2), seed + 10)
    if corrupt_r_sign:
        bad = tuple(-r if k == 1 else r for k, r in enumerate(fac.rfacs))
        fac = type(fac)(cores=fac.cores, rfacs=bad)
        V = tg.TangentVector(Xp, fac, "gauged", V.cores, validate=False)
    Vf = tg.convert_param(V, "first")
    Vrt = tg.convert_param(Vf, "gauged")
    err = max(np.abs(a - b).max() for a, b in zip(Vrt.cores, V.cores))
    dense_g = tg.densify(V)
    dense_f = np.zeros_like(dense_g)
    for k in range(Xp.d):  # first-parametrization sum, term by term
        cores = list(Xp.cores[:k]) + [Vf.cores[k]] + list(Xp.cores[k + 1:])
        dense_f += TTTensor(cores).to_dense()
    err = max(err, np.abs(dense_f - dense_g).max() / max(np.abs(dense_g).max(), 1e-30))
    return _result("parametrization_interchange", err, 1e-11, t0)


def check_projector_matrix(seed=3) -> CheckResult:
    """Assembled projector is symmetric, idempotent, of rank manifold_dim."""
    t0 = time.perf_counter()
    err = 0.0
    for shape_n, ranks in (((2, 3, 2), (2, 2)), ((3, 2, 3), (2, 2))):
        shape = Shape.of(shape_n, ranks)
        Xp, fac = tg.prepare_base(random_tt(shape, seed=seed))
        P = hs.assemble_projector_matrix(Xp, fac)
        err = max(err, np.abs(P - P.T).max(), np.abs(P @ P - P).max())
        if np.linalg.matrix_rank(P) != shape.manifold_dim:
            err = max(err, 1.0)
    return _result("projector_symmetric_idempotent_rank", err, 1e-10, t0)


def check_projection_paths(seed=4) -> CheckResult:
    """Sparse and TT projections agree with the dense reference."""
    t0 = time.perf_counter()
    Xp, fac, _, Z = _instance((3, 2, 3, 2), (2, 3, 2), seed + 20)
    rng = np.random.default_rng(seed)
    N = Xp.num_elements
    codes = rng.choice(N, size=11, replace=False)
    idx = np.stack(np.unravel_index(codes, Xp.n), -1)
    sp = SparseTensor(Xp.n, idx, rng.standard_normal(11))
    Wd = tg.project_dense(Xp, sp.to_dense(), fac)
    Ws = tg.project_sparse(Xp, sp, fac)
    err = max(np.abs(a - b).max() for a, b in zip(Wd.cores, Ws.cores))
    Y = random_tt(Shape.of(Xp.n, (2, 2, 2)), seed=seed + 3)
    Wt = tg.project_tt(Xp, Y, fac)
    Wd2 = tg.project_dense(Xp, Y.to_dense(), fac)
    err = max(err, max(np.abs(a - b).max() for a, b in zip(Wt.cores, Wd2.cores)))
    return _result("projection_sparse_tt_vs_dense", err, 1e-11, t0)


def check_interface_derivatives(seed=5) -> CheckResult:
    """Directional derivatives of interface matrices are the variational
    interface matrices (central differences on the core curve)."""
    t0 = time.perf_counter()
    Xp, fac, V, _ = _instance((2, 3, 2, 2), (2, 3, 2), seed + 30)
    Vf = tg.convert_param(V, "first")
    vi = tg.variational_interfaces(Vf)
    h = 1e-6
    err = 0.0

    def lists_at(t):
        cores = [u + t * c for u, c in zip(Xp.cores, Vf.cores)]
        return interface_left_list(cores), interface_right_list(cores)

    lp, gp = lists_at(h)
    lm, gm = lists_at(-h)
    for k in range(1, Xp.d + 1):
        err = max(err, np.abs((lp[k] - lm[k]) / (2 * h) - vi.v_le[k]).max())
    for k in range(Xp.d):
        err = max(err, np.abs((gp[k] - gm[k]) / (2 * h) - vi.v_ge[k]).max())
    for k in range(1, Xp.d):  # cancellation against the left interfaces
        le = interface_left_list(Xp.cores)
        err = max(err, np.abs(vi.v_le[k].T @ le[k]).max())
    return _result("interface_derivative_identities", err, 1e-6, t0)


def check_interface_product_derivatives(seed=6) -> CheckResult:
    """Derivatives of the two families of interface Gram projectors used
    inside the correction-term derivations, against central differences."""
    t0 = time.perf_counter()
    Xp, fac, V, _ = _instance((2, 3, 2, 2), (2, 3, 2), seed + 40)
    Vf = tg.convert_param(V, "first")
    vi = tg.variational_interfaces(Vf)
    le = interface_left_list(Xp.cores)
    tge = interface_right_list(fac.cores)
    h = 1e-6
    err = 0.0
    for k in range(1, Xp.d + 1):  # left Gram projector derivative
        def left_at(t):
            cores = [u + t * c for u, c in zip(Xp.cores, Vf.cores)]
            L = interface_left_list(cores)[k]
            return L @ L.T

        num = (left_at(h) - left_at(-h)) / (2 * h)
        ref = vi.v_le[k] @ le[k].T + le[k] @ vi.v_le[k].T
        err = max(err, np.abs(num - ref).max())
    for k in range(1, Xp.d):  # right tilde projector derivative
        def right_at(t):
            cores = [u + t * c for u, c in zip(Xp.cores, Vf.cores)]
            Xt = tg.left_orthogonalize(TTTensor(cores))
            ftt = tg.right_orthogonalize_with_factors(Xt)
            G = interface_right_list(ftt.cores)[k]
            return G @ G.T

        num = (right_at(h) - right_at(-h)) / (2 * h)
        T = tge[k]
        comp = np.eye(T.shape[0]) - T @ T.T
        M = solve_triangular(fac.rfacs[k - 1], (comp @ vi.v_ge[k]).T,
                             lower=False, trans="T").T
        ref = M @ T.T + T @ M.T
        err = max(err, np.abs(num - ref).max())
    return _result("interface_product_derivatives", err, 1e-6, t0)


def check_sparse_kernels(seed=7) -> CheckResult:
    """Gram recursion and the single-pass sparse families match dense
    contractions on a densified sparse gradient."""
    t0 = time.perf_counter()
    Xp, fac, V, _ = _instance((2, 3, 2, 2), (2, 2, 2), seed + 50)
    rng = np.random.default_rng(seed)
    codes = rng.choice(Xp.num_elements, size=7, replace=False)
    idx = np.stack(np.unravel_index(codes, Xp.n), -1)
    sp = SparseTensor(Xp.n, idx, rng.standard_normal(7))
    As, Bs, Cs = hs.three_products_sparse(Xp, fac, V, sp)
    Ad, Bd, Cd = hs.three_products_dense(Xp, fac, V, sp.to_dense())
    err = max(np.abs(a - b).max() for a, b in
              zip(As + Bs + Cs, Ad + Bd + Cd))
    G = hs.gram_right_tilde_v(Xp, fac, V)
    Vf = tg.convert_param(V, "first")
    vi = tg.variational_interfaces(Vf)
    tge = interface_right_list(fac.cores)
    for k in range(Xp.d - 1):
        err = max(err, np.abs(G[k] - tge[k + 1].T @ vi.v_ge[k + 1]).max())
    err = max(err, np.abs(Bs[0]).max())  # no left-derivative at the first core
    return _result("sparse_kernel_families_vs_dense", err, 1e-11, t0)


def check_diagonal_correction(seed=8) -> CheckResult:
    """Each diagonal correction component equals the projected numeric
    derivative of its projector component."""
    t0 = time.perf_counter()
    Xp, fac, V, Z = _instance((3, 2, 3, 2), (2, 3, 2), seed + 60)
    ws = hs.build_workspace(Xp, V, Z, factors=fac)
    diag = hs.correction_diagonal(ws)
    err = 0.0
    for k in range(Xp.d):
        num = hs.projector_derivative_oracle(Xp, V, Z, h=1e-5, component=k)
        ref = hs.component_vector(tg.project_dense(Xp, num, fac), k)
        cores = [np.zeros_like(c) for c in Xp.cores]
        cores[k] = diag[k]
        mine = tg.TangentVector(Xp, fac, "gauged", cores, validate=False)
        scale = max(np.abs(tg.densify(ref)).max(), 1.0)
        err = max(err, np.abs(tg.densify(mine) - tg.densify(ref)).max() / scale)
    return _result("diagonal_correction_oracle", err, 1e-6, t0)


def check_cross_terms(seed=9) -> CheckResult:
    """Every cross term obeys the sign identity against the numeric
    projector derivative applied to the fixed projected component."""
    t0 = time.perf_counter()
    Xp, fac, V, Z = _instance((3, 2, 3, 2), (2, 3, 2), seed + 70)
    ws = hs.build_workspace(Xp, V, Z, factors=fac)
    err = 0.0
    PZ = tg.project_dense(Xp, Z, fac)
    for j in range(Xp.d):
        PjZ = tg.densify(hs.component_vector(PZ, j))
        for i in range(Xp.d):
            if i == j:
                continue
            pair = tg.densify(hs.cross_term_pair(ws, i, j))
            num = hs.projector_derivative_oracle(Xp, V, PjZ, h=1e-5,
                                                 component=i)
            scale = max(np.abs(pair).max(), 1.0)
            err = max(err, np.abs(pair + num).max() / scale)
    cross = hs.correction_cross(ws)
    acc = [np.zeros_like(c) for c in Xp.cores]
    for j in range(Xp.d):
        for i in range(Xp.d):
            if i != j:
                pair = hs.cross_term_pair(ws, i, j)
                for k in range(Xp.d):
                    acc[k] += pair.cores[k]
    err = max(err, max(np.abs(a - b).max() for a, b in zip(acc, cross)))
    return _result("cross_term_sign_identity", err, 1e-6, t0)


def check_weingarten(seed=10) -> CheckResult:
    """Full curvature term against the projected numeric projector
    derivative; exact annihilation of tangent inputs."""
    t0 = time.perf_counter()
    err = 0.0
    for trial in range(3):
        Xp, fac, V, Z = _instance((3, 2, 3, 2), (2, 3, 2), seed + 80 + trial)
        W = hs.weingarten(Xp, V, Z, factors=fac)
        num = hs.projector_derivative_oracle(Xp, V, Z, h=1e-5)
        ref = tg.densify(tg.project_dense(Xp, num, fac))
        err = max(err, np.abs(tg.densify(W) - ref).max()
                  / max(np.abs(ref).max(), 1.0))
        Zt = tg.densify(tg.random_tangent(Xp, fac, seed=seed + 90 + trial))
        Wt = hs.weingarten(Xp, V, Zt, factors=fac)
        err = max(err, Wt.norm() / (np.linalg.norm(Zt) * V.norm()))
    return _result("weingarten_vs_numeric_differential", err, 1e-6, t0)


def check_hessian_symmetry(seed=11) -> CheckResult:
    """Self-adjointness of the Hessian operator on random tangent pairs of a
    completion problem."""
    t0 = time.perf_counter()
    shape = Shape.of((3, 2, 3, 2), (2, 3, 2))
    target = random_tt(shape, seed=seed)
    rng = np.random.default_rng(seed)
    codes = rng.choice(shape.num_elements, size=30, replace=False)
    idx = np.stack(np.unravel_index(codes, shape.n), -1)
    prob = cp.CompletionProblem(cp.observe(target, idx))
    Xp, fac = tg.prepare_base(random_tt(shape, seed=seed + 1))
    egrad = prob.egrad(Xp)
    cache = hs.precompute_ambient(Xp, egrad, fac)

    def op(V):
        return hs.hess_apply(Xp, V, egrad, prob.ehess(Xp, V), factors=fac,
                             cache=cache)

    err = 0.0
    for k in range(20):
        V = tg.random_tangent(Xp, fac, seed=seed + 100 + k)
        W = tg.random_tangent(Xp, fac, seed=seed + 500 + k)
        lhs = tg.tangent_inner(op(V), W)
        rhs = tg.tangent_inner(V, op(W))
        err = max(err, abs(lhs - rhs) / (V.norm() * W.norm()))
    return _result("hessian_symmetry", err, 1e-9, t0)


def check_fd_agreement(seed=12) -> CheckResult:
    """Exact Hessian applications match the finite-difference Hessian."""
    t0 = time.perf_counter()
    shape = Shape.of((3, 3, 3, 3), (2, 2, 2))
    target = random_tt(shape, seed=seed)
    rng = np.random.default_rng(seed)
    codes = rng.choice(shape.num_elements, size=60, replace=False)
    idx = np.stack(np.unravel_index(codes, shape.n), -1)
    prob = cp.CompletionProblem(cp.observe(target, idx))
    Xp, fac = tg.prepare_base(random_tt(shape, seed=seed + 1))
    egrad = prob.egrad(Xp)
    err = 0.0
    for k in range(5):
        V = tg.random_tangent(Xp, fac, seed=seed + 10 + k)
        exact = hs.hess_apply(Xp, V, egrad, prob.ehess(Xp, V), factors=fac)

        def grad_at(P):
            facP = (fac if P is Xp
                    else tg.right_orthogonalize_with_factors(P))
            return tg.project(P, prob.egrad(P), facP)

        fd = hs.fd_hess_apply(Xp, V, grad_at, factors=fac)
        err = max(err, (exact - fd).norm() / max(exact.norm(), 1e-30))
    return _result("fd_hessian_agreement", err, 1e-4, t0)


def check_retraction(seed=13) -> CheckResult:
    """First-order property of the TT-SVD retraction."""
    t0 = time.perf_counter()
    err = 0.0
    for trial in range(3):
        Xp, fac, V, _ = _instance((3, 3, 3), (2, 2), seed + trial)
        T = Xp.to_dense()
        dv = tg.densify(V)
        errs = []
        for t in (1e-2, 1e-3):
            Rt = tg.retract(Xp, V, t)
            errs.append(np.linalg.norm(Rt.to_dense() - T - t * dv))
            if tt_rank(Rt.to_dense()) != tuple(Xp.ranks[1:-1]):
                err = max(err, 1.0)
        if errs[1] > 0.3 * errs[0]:  # halving t must cut the error fast
            err = max(err, errs[1] / max(errs[0], 1e-300))
        err = max(err, np.abs(tg.retract(Xp, V, 0.0).to_dense() - T).max())
    return _result("retraction_first_order", err, 1e-11, t0)


def check_high_order_guard(seed=14) -> CheckResult:
    """Curse-of-dimensionality guard: one Hessian application at order 30
    stays fast and never allocates ambient-sized buffers."""
    t0 = time.perf_counter()
    shape = Shape.uniform(4, 30, 5)
    target = random_tt(shape, seed=seed)
    spec = cp.SamplingSpec.broadcast((0.25,) * 4, 30, count=10_000, seed=seed)
    idx = cp.sample_indices(spec, shape.n)
    prob = cp.CompletionProblem(cp.observe(target, idx))
    Xp, fac = tg.prepare_base(random_tt(shape, seed=seed + 1))
    V = tg.random_tangent(Xp, fac, seed=seed + 2)
    egrad = prob.egrad(Xp)
    tracemalloc.start()
    t1 = time.perf_counter()
    hs.hess_apply(Xp, V, egrad, prob.ehess(Xp, V), factors=fac)
    elapsed = time.perf_counter() - t1
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    err = 0.0
    if elapsed > 10.0:
        err = max(err, elapsed / 10.0)
    if peak > 512 * 1024 * 1024:  # far below any 4^30-sized buffer
        err = max(err, 1.0)
    return _result("high_order_guard", err, 1.0 - 1e-9, t0)


FAST_CHECKS = [
    check_flattening,
    check_orthogonalization,
    check_param_interchange,
    check_projector_matrix,
    check_projection_paths,
    check_interface_derivatives,
    check_interface_product_derivatives,
    check_sparse_kernels,
    check_diagonal_correction,
    check_cross_terms,
    check_weingarten,
    check_hessian_symmetry,
    check_fd_agreement,
    check_retraction,
]

FULL_CHECKS = FAST_CHECKS + [check_high_order_guard]


def check_suite(level="fast") -> list:
    """Run the verification suite; returns the list of results."""
    if level not in ("fast", "full"):
        raise ValueError("level must be 'fast' or 'full'")
    checks = FAST_CHECKS if level == "fast" else FULL_CHECKS
    return [fn() for fn in checks]
