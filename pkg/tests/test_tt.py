import math

import numpy as np
import pytest

from ttriemann.tt import (
    DenseCapError,
    RankDeficientError,
    Shape,
    TTTensor,
    flatten,
    interface_left_list,
    interface_right_list,
    left_orthogonalize,
    lmat,
    orthogonalize,
    random_tt,
    right_orthogonalize_with_factors,
    tt_add,
    tt_inner,
    tt_rank,
    tt_round,
    tt_svd,
    unflatten,
)


def rand_dense(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


class TestShape:
    def test_manifold_dim(self):
        # 2*2 + 2*3*2 + 2*2 - (4 + 4) = 12
        assert Shape.of((2, 3, 2), (2, 2)).manifold_dim == 12

    def test_paper_scale_dim(self):
        shape = Shape.of((4,) * 9, (3, 5, 10, 10, 10, 10, 5, 3))
        assert shape.manifold_dim == 1276

    def test_infeasible_ranks_rejected(self):
        with pytest.raises(ValueError):
            Shape.of((2, 3, 2), (3, 2))  # r1 > n1 * r0
        with pytest.raises(ValueError):
            Shape((2, 2), (1, 2))  # wrong length
        with pytest.raises(ValueError):
            Shape((2, 2), (2, 1, 1))  # boundary rank

    def test_uniform_clips_boundary(self):
        shape = Shape.uniform(4, 5, 5)
        assert shape.r == (1, 4, 5, 5, 4, 1)


class TestFlatten:
    def test_enumerated_2x2x2(self):
        # T[i,j,k] = i + 2j + 4k, all eight entries enumerated by hand
        T = np.empty((2, 2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    T[i, j, k] = i + 2 * j + 4 * k
        M1 = flatten(T, 1)  # rows i; columns (j,k) colexicographic
        assert M1.shape == (2, 4)
        assert np.array_equal(M1, [[0, 2, 4, 6], [1, 3, 5, 7]])
        M2 = flatten(T, 2)  # rows (i,j) colexicographic; column c is 4c..4c+3
        assert M2.shape == (4, 2)
        assert np.array_equal(M2, [[0, 4], [1, 5], [2, 6], [3, 7]])

    def test_order2_identity(self):
        T = rand_dense((3, 4))
        assert np.array_equal(flatten(T, 1), T)

    def test_roundtrip(self):
        T = rand_dense((2, 3, 2), seed=1)
        for mu in (1, 2):
            assert np.array_equal(unflatten(flatten(T, mu), T.shape), T)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            flatten(rand_dense((2, 2, 2)), 3)


class TestEntries:
    def test_rank_one_outer_product(self):
        vecs = [np.array([[1.0, 2.0]]).reshape(1, 2, 1),
                np.array([[3.0, 5.0, 7.0]]).reshape(1, 3, 1),
                np.array([[-1.0, 4.0]]).reshape(1, 2, 1)]
        X = TTTensor(vecs)
        assert X.entry((1, 2, 0)) == 2.0 * 7.0 * -1.0
        outer = np.einsum("i,j,k->ijk", [1, 2], [3, 5, 7], [-1, 4])
        assert np.allclose(X.to_dense(), outer)

    def test_zero_core_gives_zero(self):
        X = random_tt(Shape.of((2, 2, 2), (2, 2)), seed=0)
        cores = list(X.cores)
        cores[1] = np.zeros_like(cores[1])
        Y = TTTensor(cores)
        assert np.abs(Y.to_dense()).max() == 0.0

    def test_entry_matches_dense_everywhere(self):
        X = random_tt(Shape.of((3, 3, 3, 3), (2, 2, 2)), seed=3)
        T = X.to_dense()
        for code in range(81):
            idx = np.unravel_index(code, X.n)
            assert X.entry(idx) == pytest.approx(T[idx], rel=1e-13, abs=1e-13)

    def test_entries_batch(self):
        X = random_tt(Shape.of((3, 2, 3), (2, 2)), seed=5)
        idx = np.array([[0, 1, 2], [2, 0, 0], [1, 1, 1]])
        T = X.to_dense()
        assert np.allclose(X.entries(idx), T[tuple(idx.T)])

    def test_out_of_bounds(self):
        X = random_tt(Shape.of((2, 2, 2), (2, 2)), seed=0)
        with pytest.raises(IndexError):
            X.entry((0, 2, 0))
        with pytest.raises(IndexError):
            X.entries(np.array([[0, 0, -1]]))

    def test_dense_cap(self, monkeypatch):
        monkeypatch.setenv("TT_DESK_CAP", "4")
        X = random_tt(Shape.of((2, 2, 2), (1, 1)), seed=0)
        with pytest.raises(DenseCapError):
            X.to_dense()


class TestInterfaceIdentity:
    def test_flattening_factorization(self):
        # every flattening equals left interface times right interface^T
        X = random_tt(Shape.of((2, 3, 2, 2), (2, 3, 2)), seed=2)
        T = X.to_dense()
        le = interface_left_list(X.cores)
        ge = interface_right_list(X.cores)
        for k in range(1, X.d):
            assert np.allclose(flatten(T, k), le[k] @ ge[k].T, atol=1e-12)

    def test_interface_rows_are_core_products(self):
        # exhaustive spot check of the row identity on d=3, n=2
        X = random_tt(Shape.of((2, 2, 2), (2, 2)), seed=7)
        le = interface_left_list(X.cores)
        for k in (1, 2):
            for code in range(2**k):
                idx = np.unravel_index(code, (2,) * k, order="F")
                row = X.cores[0][0, idx[0], :]
                for m in range(1, k):
                    row = row @ X.cores[m][:, idx[m], :]
                assert np.allclose(le[k][code], row, atol=1e-12)


class TestSVDAndRank:
    def test_exact_rank_recovery(self):
        X = random_tt(Shape.of((3, 4, 3), (2, 2)), seed=11)
        T = X.to_dense()
        Y = tt_svd(T, ranks=(2, 2))
        assert Y.ranks == (1, 2, 2, 1)
        assert np.abs(Y.to_dense() - T).max() < 1e-12 * np.abs(T).max()

    def test_order2_is_truncated_svd(self):
        T = rand_dense((5, 4), seed=2)
        Y = tt_svd(T, ranks=(2,))
        U, s, Vt = np.linalg.svd(T)
        best = U[:, :2] @ np.diag(s[:2]) @ Vt[:2]
        assert np.allclose(Y.to_dense(), best, atol=1e-12)

    def test_rank_over_request_clipped(self):
        X = random_tt(Shape.of((3, 4, 3), (2, 2)), seed=4)
        T = X.to_dense()
        Y = tt_svd(T, ranks=(3, 3))  # true rank is (2, 2)
        assert Y.ranks == (1, 2, 2, 1)

    def test_truncation_below_rank_has_residual(self):
        X = random_tt(Shape.of((3, 4, 3), (2, 2)), seed=4)
        T = X.to_dense()
        Y = tt_svd(T, ranks=(1, 1))
        assert np.linalg.norm(Y.to_dense() - T) > 1e-6

    def test_zero_tensor_rejected(self):
        with pytest.raises(ValueError):
            tt_svd(np.zeros((2, 2, 2)))
        with pytest.raises(ValueError):
            tt_rank(np.zeros((2, 2)))

    def test_tt_rank(self):
        outer = np.einsum("i,j,k->ijk", [1.0, 2], [3, 5, 7.0], [-1, 4.0])
        assert tt_rank(outer) == (1, 1)
        T = rand_dense((4, 5), seed=1)
        assert tt_rank(T) == (np.linalg.matrix_rank(T),)
        X = random_tt(Shape.of((3, 4, 4, 3), (2, 3, 2)), seed=9)
        assert tt_rank(X.to_dense()) == (2, 3, 2)

    def test_tol_mode(self):
        X = random_tt(Shape.of((4, 4, 4), (2, 2)), seed=3)
        T = X.to_dense()
        Y = tt_svd(T, tol=1e-12)
        assert np.abs(Y.to_dense() - T).max() < 1e-10
        assert Y.ranks == (1, 2, 2, 1)


class TestOrthogonalization:
    def test_centers_preserve_tensor_and_orthogonality(self):
        X = random_tt(Shape.of((2, 3, 2, 3), (2, 3, 2)), seed=6)
        T = X.to_dense()
        for center in range(X.d):
            Y = orthogonalize(X, center)
            assert np.allclose(Y.to_dense(), T, atol=1e-12 * np.abs(T).max())
            le = interface_left_list(Y.cores)
            ge = interface_right_list(Y.cores)
            for k in range(1, center + 1):
                I = np.eye(le[k].shape[1])
                assert np.abs(le[k].T @ le[k] - I).max() < 1e-12
            for k in range(center + 1, X.d):
                I = np.eye(ge[k].shape[1])
                assert np.abs(ge[k].T @ ge[k] - I).max() < 1e-12

    def test_entry_preserved_at_random_indices(self):
        X = random_tt(Shape.of((3, 3, 3, 3), (2, 3, 2)), seed=8)
        rng = np.random.default_rng(0)
        idx = rng.integers(0, 3, size=(100, 4))
        ref = X.entries(idx)
        for center in (0, 2):
            got = orthogonalize(X, center).entries(idx)
            assert np.abs(got - ref).max() <= 1e-11 * np.abs(ref).max()

    def test_left_right_roundtrip(self):
        X = random_tt(Shape.of((2, 3, 2), (2, 2)), seed=1)
        T = X.to_dense()
        Y = orthogonalize(orthogonalize(X, 0), X.d - 1)
        assert np.abs(Y.to_dense() - T).max() < 1e-12 * np.abs(T).max()

    def test_rank_deficient_detected(self):
        cores = [np.zeros((1, 2, 2)), np.zeros((2, 2, 2)), np.zeros((2, 2, 1))]
        cores[0][0, :, 0] = [1.0, 2.0]  # rank-1 left flattening of size 2
        cores[1][0, :, 0] = [1.0, 1.0]
        cores[2][0, :, 0] = [1.0, -1.0]
        with pytest.raises(RankDeficientError):
            left_orthogonalize(TTTensor(cores))


class TestRightFactors:
    def test_two_core_case(self):
        X = random_tt(Shape.of((3, 4), (2,)), seed=2)
        fac = right_orthogonalize_with_factors(X)
        assert len(fac.rfacs) == 1
        R = fac.rfacs[0]
        assert np.abs(np.tril(R, -1)).max() == 0.0
        assert abs(np.linalg.det(R)) > 1e-12

    def test_interface_link_and_orthonormality(self):
        X = random_tt(Shape.of((2, 3, 2), (2, 2)), seed=3)
        fac = right_orthogonalize_with_factors(X)
        ge = interface_right_list(X.cores)
        tge = interface_right_list(fac.cores)
        for k in range(1, X.d):
            R = fac.rfacs[k - 1]
            assert np.abs(ge[k] - tge[k] @ R).max() < 1e-12
            assert np.abs(np.tril(R, -1)).max() == 0.0
            I = np.eye(tge[k].shape[1])
            assert np.abs(tge[k].T @ tge[k] - I).max() < 1e-12

    def test_reconstruction(self):
        X = random_tt(Shape.of((3, 2, 3, 2), (2, 2, 2)), seed=5)
        fac = right_orthogonalize_with_factors(X)
        a = TTTensor(fac.cores).to_dense()
        assert np.allclose(a, X.to_dense(), atol=1e-12 * np.abs(a).max())

    def test_requires_left_orthogonal(self):
        X = random_tt(Shape.of((2, 2, 2), (2, 2)), seed=0)
        with pytest.raises(ValueError):
            right_orthogonalize_with_factors(orthogonalize(X, 0))


class TestInnerAddRound:
    def test_inner_matches_dense(self):
        X = random_tt(Shape.of((2, 3, 2), (2, 2)), seed=1)
        Y = random_tt(Shape.of((2, 3, 2), (2, 2)), seed=2)
        res = tt_inner(X, Y)
        ref = np.vdot(X.to_dense(), Y.to_dense())
        assert res.value == pytest.approx(ref, rel=1e-12)
        # Gram sequences: last left block holds the scalar
        assert res.left[-1][0, 0] == pytest.approx(ref, rel=1e-12)
        assert res.right[0][0, 0] == pytest.approx(ref, rel=1e-12)

    def test_inner_self_is_squared_norm(self):
        X = random_tt(Shape.of((3, 2, 3), (2, 2)), seed=7)
        assert tt_inner(X, X).value == pytest.approx(
            np.linalg.norm(X.to_dense())**2, rel=1e-12)
        assert X.norm() == pytest.approx(np.linalg.norm(X.to_dense()),
                                         rel=1e-12)

    def test_inner_zero(self):
        X = random_tt(Shape.of((2, 2, 2), (2, 2)), seed=1)
        Z = TTTensor([np.zeros_like(c) for c in X.cores])
        assert tt_inner(X, Z).value == 0.0

    def test_left_orthogonal_gram_identity(self):
        X = random_tt(Shape.of((2, 3, 2, 2), (2, 3, 2)), seed=4)
        res = tt_inner(X, X)
        for k in range(1, X.d):
            I = np.eye(res.left[k].shape[0])
            assert np.abs(res.left[k] - I).max() < 1e-12

    def test_add(self):
        X = random_tt(Shape.of((2, 3, 2), (2, 2)), seed=1)
        Y = random_tt(Shape.of((2, 3, 2), (2, 2)), seed=2)
        S = tt_add(X, Y)
        assert S.ranks == (1, 4, 4, 1)
        assert np.allclose(S.to_dense(), X.to_dense() + Y.to_dense())
        Z = tt_add(X, X.scale(-1.0))
        assert np.abs(Z.to_dense()).max() < 1e-12

    def test_add_zero(self):
        X = random_tt(Shape.of((2, 2, 2), (2, 2)), seed=1)
        Z = TTTensor([np.zeros_like(c) for c in X.cores])
        assert np.allclose(tt_add(X, Z).to_dense(), X.to_dense())

    def test_round_idempotent_at_current_rank(self):
        X = random_tt(Shape.of((3, 3, 3), (2, 2)), seed=9)
        Y = tt_round(X, ranks=(2, 2))
        assert np.abs(Y.to_dense() - X.to_dense()).max() < 1e-12

    def test_round_recovers_padded(self):
        X = random_tt(Shape.of((3, 3, 3), (2, 2)), seed=9)
        Z = TTTensor([np.zeros_like(c) for c in X.cores])
        Y = tt_round(tt_add(X, Z), ranks=(2, 2))
        assert np.allclose(Y.to_dense(), X.to_dense(), atol=1e-12)

    def test_round_matches_dense_tt_svd(self):
        A = random_tt(Shape.of((3, 4, 3), (2, 2)), seed=1)
        B = random_tt(Shape.of((3, 4, 3), (2, 2)), seed=2)
        S = tt_add(A, B)  # rank 4 representation
        Y = tt_round(S, ranks=(2, 2))
        ref = tt_svd(S.to_dense(), ranks=(2, 2))
        # truncations agree on the represented tensor
        assert np.allclose(Y.to_dense(), ref.to_dense(), atol=1e-9)

    def test_round_strict_flags_deficiency(self):
        X = random_tt(Shape.of((3, 3, 3), (2, 2)), seed=9)
        Z = TTTensor([np.zeros_like(c) for c in X.cores])
        with pytest.raises(RankDeficientError):
            tt_round(tt_add(X, Z), ranks=(3, 3), strict=True)

    def test_round_result_left_orthogonal(self):
        X = random_tt(Shape.of((3, 3, 3), (2, 2)), seed=9)
        Y = tt_round(X, ranks=(1, 1))
        assert Y.is_left_orthogonal
        L = lmat(Y.cores[0])
        assert np.abs(L.T @ L - np.eye(1)).max() < 1e-12


class TestRandomTT:
    def test_deterministic(self):
        a = random_tt(Shape.of((3, 3, 3), (2, 2)), seed=42)
        b = random_tt(Shape.of((3, 3, 3), (2, 2)), seed=42)
        for ca, cb in zip(a.cores, b.cores):
            assert np.array_equal(ca, cb)

    def test_left_orthogonal_and_full_rank(self):
        X = random_tt(Shape.of((3, 4, 3), (2, 3)), seed=0)
        assert X.is_left_orthogonal
        assert tt_rank(X.to_dense()) == (2, 3)

    def test_seeds_differ(self):
        a = random_tt(Shape.of((3, 3, 3), (2, 2)), seed=1)
        b = random_tt(Shape.of((3, 3, 3), (2, 2)), seed=2)
        cos = tt_inner(a, b).value / (a.norm() * b.norm())
        assert abs(cos) < 1.0 - 1e-6
