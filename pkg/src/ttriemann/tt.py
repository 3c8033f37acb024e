"""Tensor-train (TT / matrix-product-state) core machinery.

Conventions used across the package:

* A core is a float64 array of shape ``(r_left, n, r_right)``.
* All flattenings are colexicographic (Fortran order), so
  ``T.reshape(m, -1, order="F")`` *is* the matrix flattening of a tensor.
* ``lmat(core)`` is the left flattening ``(r_left * n, r_right)`` and
  ``rmat(core)`` the right one ``(r_left, n * r_right)``.
* Interface matrices are tall with columns indexed by rank:
  ``interface_left_list(cores)[k]`` spans cores ``0..k-1`` and the
  right list entry ``k`` spans cores ``k..d-1``.  With these conventions
  the k-th flattening of the tensor factors as ``left[k] @ right[k].T``.
"""

from __future__ import annotations

import math
import os
from collections import namedtuple
from dataclasses import dataclass

import numpy as np


class RankDeficientError(RuntimeError):
    """A flattening or triangular factor is numerically rank deficient."""


class DenseCapError(RuntimeError):
    """A dense materialization would exceed the configured element cap."""


def dense_cap() -> int:
    """Element cap for dense materializations (env ``TT_DESK_CAP``)."""
    return int(os.environ.get("TT_DESK_CAP", 2**20))


def _check_cap(num_elements: int) -> None:
    cap = dense_cap()
    if num_elements > cap:
        raise DenseCapError(
            f"dense materialization of {num_elements} elements exceeds cap {cap}"
        )


# ---------------------------------------------------------------------------
# shapes and flattenings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Shape:
    """Mode sizes and rank tuple of a TT decomposition.

    ``n`` has length d >= 2, ``r`` has length d+1 with ``r[0] == r[d] == 1``.
    """

    n: tuple
    r: tuple

    def __post_init__(self):
        n = tuple(int(v) for v in self.n)
        r = tuple(int(v) for v in self.r)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "r", r)
        if len(n) < 2:
            raise ValueError("TT requires order >= 2")
        if len(r) != len(n) + 1:
            raise ValueError("rank tuple must have length d + 1")
        if r[0] != 1 or r[-1] != 1:
            raise ValueError("boundary ranks must be 1")
        if any(v < 1 for v in n) or any(v < 1 for v in r):
            raise ValueError("mode sizes and ranks must be positive")
        for k in range(self.d):
            if r[k] > n[k] * r[k + 1] or r[k + 1] > n[k] * r[k]:
                raise ValueError(
                    f"infeasible ranks at mode {k}: ({r[k]}, {r[k + 1]}) "
                    f"with mode size {n[k]}"
                )
        if self.manifold_dim <= 0:
            raise ValueError("manifold dimension must be positive")

    @property
    def d(self) -> int:
        return len(self.n)

    @property
    def num_elements(self) -> int:
        return math.prod(self.n)

    @property
    def manifold_dim(self) -> int:
        dim = sum(self.r[k] * self.n[k] * self.r[k + 1] for k in range(self.d))
        return dim - sum(v * v for v in self.r[1:-1])

    @staticmethod
    def of(n, interior_ranks) -> "Shape":
        """Build from mode sizes and the d-1 interior ranks."""
        n = tuple(int(v) for v in n)
        return Shape(n, (1, *(int(v) for v in interior_ranks), 1))

    @staticmethod
    def uniform(n, d, rank) -> "Shape":
        """Mode size n, order d, interior ranks ``rank`` clipped to the
        attainable maximum near the boundary cores."""
        sizes = (int(n),) * int(d)
        r = [min(int(rank), math.prod(sizes[: k + 1]), math.prod(sizes[k + 1:]))
             for k in range(d - 1)]
        return Shape.of(sizes, r)


def flatten(T: np.ndarray, mu: int) -> np.ndarray:
    """The mu-th flattening: modes ``0..mu-1`` as rows, colexicographic."""
    T = np.asarray(T)
    if not 1 <= mu <= T.ndim - 1:
        raise ValueError(f"flattening index {mu} out of range for order {T.ndim}")
    rows = math.prod(T.shape[:mu])
    return T.reshape(rows, -1, order="F")


def unflatten(M: np.ndarray, n) -> np.ndarray:
    """Inverse of :func:`flatten` for a tensor of mode sizes ``n``."""
    n = tuple(n)
    M = np.asarray(M)
    if M.size != math.prod(n):
        raise ValueError("element count does not match mode sizes")
    return M.reshape(n, order="F")


def lmat(core: np.ndarray) -> np.ndarray:
    r0, n, r1 = core.shape
    return core.reshape(r0 * n, r1, order="F")


def rmat(core: np.ndarray) -> np.ndarray:
    r0, n, r1 = core.shape
    return core.reshape(r0, n * r1, order="F")


def core_from_lmat(M: np.ndarray, r0: int, n: int, r1: int) -> np.ndarray:
    return M.reshape(r0, n, r1, order="F")


# ---------------------------------------------------------------------------
# the TT tensor
# ---------------------------------------------------------------------------

class TTTensor:
    """A tensor in TT format: an ordered chain of order-3 cores.

    ``orth_center`` records orthogonality bookkeeping: cores strictly left
    of the center are left-orthogonal, cores strictly right of it are
    right-orthogonal.  ``None`` means nothing is known.  Instances are
    treated as immutable; operations return new tensors.
    """

    def __init__(self, cores, orth_center=None, validate=True):
        cores = tuple(np.asarray(c, dtype=np.float64) for c in cores)
        if validate:
            if len(cores) < 2:
                raise ValueError("TT requires at least 2 cores")
            for c in cores:
                if c.ndim != 3:
                    raise ValueError("cores must be order-3 arrays")
            if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
                raise ValueError("boundary ranks must be 1")
            for a, b in zip(cores[:-1], cores[1:]):
                if a.shape[2] != b.shape[0]:
                    raise ValueError("rank mismatch between neighboring cores")
        self.cores = cores
        if orth_center is not None and not 0 <= orth_center < len(cores):
            raise ValueError("orth_center out of range")
        self.orth_center = orth_center

    # -- basic structure ----------------------------------------------------

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def n(self) -> tuple:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple:
        return (1, *(c.shape[2] for c in self.cores))

    @property
    def num_elements(self) -> int:
        return math.prod(self.n)

    @property
    def shape(self) -> Shape:
        """Manifold shape descriptor; validates feasibility, so only call
        on (intended) minimal decompositions."""
        return Shape(self.n, self.ranks)

    @property
    def is_left_orthogonal(self) -> bool:
        return self.orth_center == self.d - 1

    @property
    def is_right_orthogonal(self) -> bool:
        return self.orth_center == 0

    def __repr__(self):
        return f"TTTensor(n={self.n}, ranks={self.ranks}, orth={self.orth_center})"

    # -- evaluation ----------------------------------------------------------

    def entry(self, idx) -> float:
        """Evaluate one entry as the product of core slices."""
        idx = tuple(int(i) for i in idx)
        if len(idx) != self.d:
            raise IndexError("multi-index length mismatch")
        for i, m in zip(idx, self.n):
            if not 0 <= i < m:
                raise IndexError(f"index {idx} out of bounds for modes {self.n}")
        v = self.cores[0][0, idx[0], :]
        for k in range(1, self.d):
            v = v @ self.cores[k][:, idx[k], :]
        return float(v[0])

    def entries(self, indices: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`entry` for an ``(m, d)`` integer index array."""
        indices = np.asarray(indices)
        if indices.ndim != 2 or indices.shape[1] != self.d:
            raise ValueError("indices must have shape (m, d)")
        if indices.size and (
            indices.min() < 0 or (indices >= np.array(self.n)).any()
        ):
            raise IndexError("index out of bounds")
        E = self.cores[0][0, indices[:, 0], :]
        for k in range(1, self.d):
            E = np.einsum("mb,bmc->mc", E, self.cores[k][:, indices[:, k], :])
        return E[:, 0].copy()

    def to_dense(self) -> np.ndarray:
        """Materialize the full tensor (guarded by the desk-scale cap)."""
        _check_cap(self.num_elements)
        M = self.cores[0][0]  # (n0, r1)
        for k in range(1, self.d):
            r0, n, r1 = self.cores[k].shape
            M = M @ rmat(self.cores[k])  # (N, n*r1)
            M = M.reshape(-1, r1, order="F")
        return M.reshape(self.n, order="F")

    def norm(self) -> float:
        if self.is_left_orthogonal:
            return float(np.linalg.norm(self.cores[-1]))
        if self.is_right_orthogonal:
            return float(np.linalg.norm(self.cores[0]))
        val = tt_inner(self, self).value
        return math.sqrt(max(val, 0.0))

    def scale(self, a: float) -> "TTTensor":
        cores = list(self.cores)
        cores[-1] = cores[-1] * float(a)
        return TTTensor(cores, orth_center=None if a == 0 else self.orth_center,
                        validate=False)


# ---------------------------------------------------------------------------
# entry/flattening identities used as oracles
# ---------------------------------------------------------------------------

def interface_left_list(cores) -> list:
    """Explicit left interface matrices ``[k]`` for cores ``0..k-1``.

    Desk-scale oracle: the matrices have up to prod(n) rows.
    """
    n = [c.shape[1] for c in cores]
    _check_cap(math.prod(n))
    out = [np.ones((1, 1))]
    for k, c in enumerate(cores):
        prev = out[-1]
        T = np.einsum("pa,aib->pib", prev, c)
        out.append(T.reshape(prev.shape[0] * n[k], c.shape[2], order="F"))
    return out


def interface_right_list(cores) -> list:
    """Explicit right interface matrices ``[k]`` for cores ``k..d-1`` (tall)."""
    n = [c.shape[1] for c in cores]
    _check_cap(math.prod(n))
    out = [np.ones((1, 1))]
    for c in reversed(cores):
        nxt = out[0]
        T = np.einsum("aib,tb->ita", c, nxt)
        out.insert(0, T.reshape(c.shape[1] * nxt.shape[0], c.shape[0], order="F"))
    return out


# ---------------------------------------------------------------------------
# dense <-> TT
# ---------------------------------------------------------------------------

def tt_svd(T: np.ndarray, ranks=None, tol=None) -> TTTensor:
    """Sequential-SVD decomposition of a dense tensor.

    Exactly one of ``ranks`` (interior rank tuple, clipped to the numerical
    rank of each flattening) or ``tol`` (relative Frobenius target, budget
    split evenly over the d-1 truncations) must be given; ``ranks=None,
    tol=None`` keeps full numerical ranks.  The result is left-orthogonal
    and minimal.
    """
    T = np.asarray(T, dtype=np.float64)
    d = T.ndim
    if d < 2:
        raise ValueError("TT requires order >= 2")
    nrm = np.linalg.norm(T)
    if nrm == 0:
        raise ValueError("cannot decompose the zero tensor")
    if ranks is not None and tol is not None:
        raise ValueError("give either ranks or tol, not both")
    if ranks is not None:
        ranks = tuple(int(v) for v in ranks)
        if len(ranks) != d - 1:
            raise ValueError("need d - 1 interior ranks")
        if any(v < 1 for v in ranks):
            raise ValueError("ranks must be positive")
    delta = None if tol is None else float(tol) * nrm / math.sqrt(d - 1)

    n = T.shape
    cores = []
    C = T
    r_prev = 1
    for k in range(d - 1):
        M = C.reshape(r_prev * n[k], -1, order="F")
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
        cutoff = s[0] * max(M.shape) * np.finfo(np.float64).eps
        numrank = max(1, int(np.count_nonzero(s > cutoff)))
        if ranks is not None:
            keep = min(ranks[k], numrank)
        elif delta is not None:
            tail = np.cumsum(s[::-1] ** 2)[::-1]
            ok = np.nonzero(tail <= delta**2)[0]
            keep = int(ok[0]) if ok.size else len(s)
            keep = max(1, min(keep, numrank))
        else:
            keep = numrank
        cores.append(U[:, :keep].reshape(r_prev, n[k], keep, order="F"))
        C = s[:keep, None] * Vt[:keep]
        r_prev = keep
    cores.append(C.reshape(r_prev, n[-1], 1, order="F"))
    return TTTensor(cores, orth_center=d - 1)


def tt_rank(T: np.ndarray) -> tuple:
    """Numerical TT-rank: ranks of the d-1 flattenings.

    Singular values below ``max(extents) * eps * sigma_max`` count as zero
    (the standard numerical-rank convention, as in ``np.linalg.matrix_rank``).
    """
    T = np.asarray(T, dtype=np.float64)
    if np.linalg.norm(T) == 0:
        raise ValueError("TT-rank of the zero tensor is undefined here")
    return tuple(int(np.linalg.matrix_rank(flatten(T, mu)))
                 for mu in range(1, T.ndim))


def tt_to_dense(X: TTTensor) -> np.ndarray:
    return X.to_dense()


# ---------------------------------------------------------------------------
# orthogonalization
# ---------------------------------------------------------------------------

def _qr_left_step(cores, k, check_minimal=False):
    """QR the left flattening of core k, absorb the factor into core k+1."""
    r0, n, r1 = cores[k].shape
    Q, R = np.linalg.qr(lmat(cores[k]))
    if check_minimal:
        dg = np.abs(np.diag(R))
        if dg.min() <= 1e-12 * max(dg.max(), 1e-300):
            raise RankDeficientError(f"rank-deficient left flattening at core {k}")
    cores[k] = Q.reshape(r0, n, Q.shape[1], order="F")
    cores[k + 1] = np.einsum("xa,aib->xib", R, cores[k + 1])


def _qr_right_step(cores, k, check_minimal=False):
    """QR the (transposed) right flattening of core k, absorb into core k-1."""
    r0, n, r1 = cores[k].shape
    Q, R = np.linalg.qr(rmat(cores[k]).T)
    if check_minimal:
        dg = np.abs(np.diag(R))
        if dg.min() <= 1e-12 * max(dg.max(), 1e-300):
            raise RankDeficientError(f"rank-deficient right flattening at core {k}")
    cores[k] = Q.T.reshape(Q.shape[1], n, r1, order="F")
    cores[k - 1] = np.einsum("pia,xa->pix", cores[k - 1], R)


def orthogonalize(X: TTTensor, center: int, check_minimal=True) -> TTTensor:
    """Return a ``center``-orthogonal decomposition of the same tensor.

    Cores left of ``center`` become left-orthogonal, cores right of it
    right-orthogonal.  Raises :class:`RankDeficientError` when a flattening
    is numerically rank deficient (the tensor is then off the manifold of
    its nominal ranks).
    """
    if not 0 <= center < X.d:
        raise ValueError("center out of range")
    cores = [c.copy() for c in X.cores]
    for k in range(center):
        _qr_left_step(cores, k, check_minimal)
    for k in range(X.d - 1, center, -1):
        _qr_right_step(cores, k, check_minimal)
    return TTTensor(cores, orth_center=center, validate=False)


def left_orthogonalize(X: TTTensor, check_minimal=True) -> TTTensor:
    if X.is_left_orthogonal:
        return X
    return orthogonalize(X, X.d - 1, check_minimal)


@dataclass(frozen=True)
class RightOrthFactors:
    """Right-orthogonalized cores of a left-orthogonal tensor plus the
    upper-triangular link factors.

    ``rfacs[k]`` (k = 0..d-2) is the ``ranks[k+1] x ranks[k+1]`` invertible
    upper-triangular matrix with ``right[k+1] == tilde_right[k+1] @ rfacs[k]``
    in terms of the tall right interface matrices.
    """

    cores: tuple
    rfacs: tuple


def right_orthogonalize_with_factors(X: TTTensor) -> RightOrthFactors:
    """Right-orthogonalize a left-orthogonal, minimal tensor, keeping the
    triangular factors that link the two families of interface matrices."""
    if not X.is_left_orthogonal:
        raise ValueError("input must be left-orthogonal")
    d = X.d
    tilde = [None] * d
    rfacs = [None] * (d - 1)
    carry = None  # upper-triangular factor for the split to our left
    for k in range(d - 1, 0, -1):
        core = X.cores[k]
        if carry is not None:
            core = np.einsum("aib,cb->aic", core, carry)
        r0, n, r1 = core.shape
        Q, R = np.linalg.qr(rmat(core).T)
        dg = np.abs(np.diag(R))
        if dg.min() <= 1e-14 * max(dg.max(), 1e-300):
            raise RankDeficientError(
                f"singular triangular factor at split {k}; decomposition "
                "is not minimal"
            )
        tilde[k] = Q.T.reshape(r0, n, r1, order="F")
        rfacs[k - 1] = R
        carry = R
    tilde[0] = np.einsum("aib,cb->aic", X.cores[0], carry)
    return RightOrthFactors(tuple(tilde), tuple(rfacs))


# ---------------------------------------------------------------------------
# algebra
# ---------------------------------------------------------------------------

InnerResult = namedtuple("InnerResult", ["value", "left", "right"])


def tt_inner(X: TTTensor, Y: TTTensor) -> InnerResult:
    """Euclidean inner product with the reusable Gram sequences.

    ``left[k]`` is the Gram matrix of the two left interfaces over cores
    ``0..k-1``; ``right[k]`` over cores ``k..d-1``.  O(d n r^3).
    """
    if X.n != Y.n:
        raise ValueError("mode size mismatch")
    left = [np.ones((1, 1))]
    for xc, yc in zip(X.cores, Y.cores):
        left.append(np.einsum("avb,ac,cvp->bp", xc, left[-1], yc, optimize=True))
    right = [np.ones((1, 1))]
    for xc, yc in zip(reversed(X.cores), reversed(Y.cores)):
        right.insert(0, np.einsum("avb,bc,pvc->ap", xc, right[0], yc,
                                  optimize=True))
    return InnerResult(float(left[-1][0, 0]), left, right)


def tt_add(X: TTTensor, Y: TTTensor) -> TTTensor:
    """Block-diagonal sum; interior ranks add, no rounding."""
    if X.n != Y.n:
        raise ValueError("mode size mismatch")
    d = X.d
    cores = []
    for k in range(d):
        xc, yc = X.cores[k], Y.cores[k]
        if k == 0:
            cores.append(np.concatenate([xc, yc], axis=2))
        elif k == d - 1:
            cores.append(np.concatenate([xc, yc], axis=0))
        else:
            c = np.zeros((xc.shape[0] + yc.shape[0], xc.shape[1],
                          xc.shape[2] + yc.shape[2]))
            c[: xc.shape[0], :, : xc.shape[2]] = xc
            c[xc.shape[0]:, :, xc.shape[2]:] = yc
            cores.append(c)
    return TTTensor(cores)


def tt_round(X: TTTensor, ranks=None, strict=False) -> TTTensor:
    """Sequential-SVD truncation to interior ranks ``ranks``.

    ``ranks=None`` compresses to the numerical rank of the representation.
    With ``strict=True`` the target ranks are kept exactly and a
    :class:`RankDeficientError` is raised if the smallest kept singular
    value vanishes numerically (the result would be off the manifold);
    otherwise ranks may shrink.
    """
    d = X.d
    if ranks is not None:
        ranks = tuple(int(v) for v in ranks)
        if len(ranks) != d - 1:
            raise ValueError("need d - 1 interior ranks")
        Shape.of(X.n, ranks)  # feasibility check
    cores = [c.copy() for c in X.cores]
    for k in range(d - 1, 0, -1):
        _qr_right_step(cores, k)
    for k in range(d - 1):
        r0, n, r1 = cores[k].shape
        U, s, Vt = np.linalg.svd(lmat(cores[k]), full_matrices=False)
        cutoff = s[0] * max(r0 * n, r1) * np.finfo(np.float64).eps if s[0] > 0 else 0.0
        numrank = max(1, int(np.count_nonzero(s > cutoff)))
        keep = numrank if ranks is None else min(ranks[k], len(s))
        if strict and ranks is not None:
            if keep < ranks[k] or s[keep - 1] <= cutoff:
                raise RankDeficientError(
                    f"truncation to rank {ranks[k]} at split {k + 1} is "
                    "numerically rank deficient"
                )
        else:
            keep = min(keep, numrank)
        cores[k] = U[:, :keep].reshape(r0, n, keep, order="F")
        carry = s[:keep, None] * Vt[:keep]
        cores[k + 1] = np.einsum("xb,bic->xic", carry, cores[k + 1])
    return TTTensor(cores, orth_center=d - 1, validate=False)


def random_tt(shape, seed=None) -> TTTensor:
    """Random point on the manifold: i.i.d. standard normal cores followed
    by left-orthogonalization.  Deterministic for a fixed seed."""
    if not isinstance(shape, Shape):
        raise TypeError("shape must be a Shape")
    rng = np.random.default_rng(seed)
    cores = [rng.standard_normal((shape.r[k], shape.n[k], shape.r[k + 1]))
             for k in range(shape.d)]
    return left_orthogonalize(TTTensor(cores))
