"""Sparse contraction kernels shared by tangent projection and the Hessian.

Everything here works on raw core lists so it can be used from both sides
without import cycles.  No buffer ever scales with the number of tensor
entries; costs are O(d * nnz * r^2).
"""

from __future__ import annotations

import numpy as np


def left_products(cores, indices):
    """Running row products ``L[k][m] = U_0(i_0) ... U_{k-1}(i_{k-1})``.

    Returns a list of ``(m, ranks[k])`` arrays for k = 0..d-1; ``L[0]`` is
    all ones.
    """
    m = indices.shape[0]
    L = [np.ones((m, 1))]
    for k in range(len(cores) - 1):
        sl = cores[k][:, indices[:, k], :]
        L.append(np.einsum("ma,amb->mb", L[k], sl, optimize=True))
    return L


def left_products_with_derivative(cores, dv_cores, indices):
    """As :func:`left_products` plus the product-rule accumulation
    ``LD[k][m] = sum_{j<k} U_0 ... dV_j ... U_{k-1}`` evaluated at row m."""
    m = indices.shape[0]
    L = [np.ones((m, 1))]
    LD = [np.zeros((m, 1))]
    for k in range(len(cores) - 1):
        usl = cores[k][:, indices[:, k], :]
        dsl = dv_cores[k][:, indices[:, k], :]
        LD.append(np.einsum("ma,amb->mb", LD[k], usl, optimize=True)
                  + np.einsum("ma,amb->mb", L[k], dsl, optimize=True))
        L.append(np.einsum("ma,amb->mb", L[k], usl, optimize=True))
    return L, LD


def _scatter(buf, pos, values, left, right):
    """Accumulate ``values[m] * outer(left[m], right[m])`` into slab
    ``buf[pos[m]]``; ``buf`` has shape (n_k, r_left, r_right)."""
    outer = values[:, None, None] * left[:, :, None] * right[:, None, :]
    np.add.at(buf, pos, outer)


def sparse_families(cores, tilde_cores, indices, values, dv_cores=None):
    """One pass over the observation set computing the interface families.

    Returns the list ``A`` with ``A[k] = (I (x) X_{<k}^T) Z^{<k>} Xt_{>k}``
    in core shape ``(ranks[k], n_k, ranks[k+1])``; when ``dv_cores`` is
    given additionally returns ``B`` (left products differentiated) and
    ``C`` (right products differentiated).
    """
    d = len(cores)
    m = indices.shape[0]
    n = [c.shape[1] for c in cores]
    ranks = [c.shape[0] for c in cores] + [1]

    want_bc = dv_cores is not None
    if want_bc:
        L, LD = left_products_with_derivative(cores, dv_cores, indices)
    else:
        L = left_products(cores, indices)

    bufA = [np.zeros((n[k], ranks[k], ranks[k + 1])) for k in range(d)]
    if want_bc:
        bufB = [np.zeros_like(b) for b in bufA]
        bufC = [np.zeros_like(b) for b in bufA]

    # tail products over cores k+1..d-1, updated as k walks down
    Pt = np.ones((m, 1))
    if want_bc:
        P = np.ones((m, 1))
        D = np.zeros((m, 1))
    for k in range(d - 1, -1, -1):
        pos = indices[:, k]
        _scatter(bufA[k], pos, values, L[k], Pt)
        if want_bc:
            _scatter(bufB[k], pos, values, LD[k], Pt)
            _scatter(bufC[k], pos, values, L[k], D)
        if k > 0:
            tsl = tilde_cores[k][:, pos, :]
            Pt = np.einsum("amb,mb->ma", tsl, Pt, optimize=True)
            if want_bc:
                usl = cores[k][:, pos, :]
                dsl = dv_cores[k][:, pos, :]
                D = (np.einsum("amb,mb->ma", usl, D, optimize=True)
                     + np.einsum("amb,mb->ma", dsl, P, optimize=True))
                P = np.einsum("amb,mb->ma", usl, P, optimize=True)

    A = [b.transpose(1, 0, 2).copy() for b in bufA]
    if not want_bc:
        return A
    B = [b.transpose(1, 0, 2).copy() for b in bufB]
    C = [b.transpose(1, 0, 2).copy() for b in bufC]
    return A, B, C
