import numpy as np
import pytest

from hevicore import linalg as la


def random_banded_dense(rng, M, kl, ku, dominant=True):
    A = rng.standard_normal((M, M))
    i, j = np.indices(A.shape)
    A[(i - j > kl) | (j - i > ku)] = 0.0
    if dominant:
        A[np.arange(M), np.arange(M)] += 2.0 * (kl + ku + 1)
    return A


class TestBandStorage:
    def test_index_map_tridiagonal(self):
        # A[2,1] (1-based) lands at storage row 2*ku+1+i-j = 4 (1-based) -> 3 (0-based)
        A = np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]])
        bm = la.banded_from_dense(A, 1, 1)
        assert bm.data.shape == (2 * 1 + 1 + 1, 3)
        assert bm.data[3, 0] == A[1, 0]
        assert bm[1, 0] == A[1, 0]

    def test_identity_diagonal_row(self):
        bm = la.banded_from_dense(np.eye(6), 2, 2)
        assert np.allclose(bm.data[bm.kl + bm.ku, :], 1.0)

    def test_paper_dimensions_nvar5_nzeta4(self):
        assert la.half_bandwidth(5, 4) == 24
        assert la.band_rows(5, 4) == 73

    def test_roundtrip_dense_banded_dense(self):
        rng = np.random.default_rng(0)
        A = random_banded_dense(rng, 12, 3, 2)
        bm = la.banded_from_dense(A, 3, 2)
        assert np.allclose(bm.to_dense(), A)

    def test_rejects_out_of_band(self):
        A = np.eye(4)
        A[0, 3] = 1.0
        with pytest.raises(ValueError):
            la.banded_from_dense(A, 1, 1)

    def test_text_dump_roundtrip(self):
        rng = np.random.default_rng(5)
        A = random_banded_dense(rng, 9, 2, 2)
        bm = la.banded_from_dense(A, 2, 2)
        bm2 = la.load_banded(la.dump_banded(bm))
        assert bm2.M == 9 and bm2.kl == 2 and bm2.ku == 2
        assert np.array_equal(bm2.data, bm.data)


class TestBandedLU:
    def test_identity(self):
        bm = la.banded_from_dense(np.eye(5), 1, 1)
        la.banded_lu_factor(bm)
        assert np.array_equal(bm.ipiv, np.arange(5))
        assert np.allclose(la.banded_solve(bm, np.arange(5.0)), np.arange(5.0))

    def test_scaled_identity(self):
        bm = la.banded_from_dense(2.0 * np.eye(4), 1, 1)
        la.banded_lu_factor(bm)
        assert np.allclose(la.banded_solve(bm, np.ones(4)), 0.5 * np.ones(4))

    def test_matches_dense_oracle_m50(self):
        rng = np.random.default_rng(1)
        A = random_banded_dense(rng, 50, 4, 4)
        b = rng.standard_normal(50)
        bm = la.banded_from_dense(A, 4, 4)
        la.banded_lu_factor(bm)
        x = la.banded_solve(bm, b)
        xd = la.dense_lu_solve(A, b)
        assert np.linalg.norm(x - xd) / np.linalg.norm(xd) < 1e-11

    def test_singular_reports_index(self):
        A = np.diag([1.0, 1.0, 0.0, 1.0])
        bm = la.banded_from_dense(A, 0, 0)
        with pytest.raises(la.SingularMatrixError) as e:
            la.banded_lu_factor(bm)
        assert e.value.index == 2

    def test_solve_requires_factorization(self):
        bm = la.banded_from_dense(np.eye(3), 1, 1)
        with pytest.raises(ValueError):
            la.banded_solve(bm, np.ones(3))

    def test_pivoting_nondominant(self):
        # small diagonal forces row swaps; answer must still match the oracle
        rng = np.random.default_rng(9)
        A = random_banded_dense(rng, 30, 3, 3, dominant=False)
        A[np.arange(30), np.arange(30)] *= 1e-8
        b = rng.standard_normal(30)
        bm = la.banded_from_dense(A, 3, 3)
        la.banded_lu_factor(bm)
        x = la.banded_solve(bm, b)
        assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) < 1e-9

    def test_residual_spd_banded(self):
        rng = np.random.default_rng(2)
        M, hw = 40, 3
        B = random_banded_dense(rng, M, hw, hw, dominant=False)
        A = B @ B.T  # SPD with bandwidth 2*hw
        i, j = np.indices(A.shape)
        A[(np.abs(i - j) > 2 * hw)] = 0.0
        A += np.eye(M) * 10.0
        b = rng.standard_normal(M)
        bm = la.banded_from_dense(A, 2 * hw, 2 * hw)
        la.banded_lu_factor(bm)
        x = la.banded_solve(bm, b)
        assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) < 1e-11

    def test_flop_count_linear_in_M(self):
        # fixed bandwidth: counted multiply-adds grow linearly with M,
        # matching the 10 nz B(B+1) scaling shape within 2x
        kl = ku = 6
        counts = {}
        rng = np.random.default_rng(3)
        for M in (100, 400, 1600, 3200):
            A = random_banded_dense(rng, M, kl, ku)
            bm = la.banded_from_dense(A, kl, ku)
            la.banded_lu_factor(bm)
            _ = la.banded_solve(bm, rng.standard_normal(M))
            counts[M] = bm.flops
        for M1, M2 in [(100, 400), (400, 1600), (1600, 3200)]:
            ratio = counts[M2] / counts[M1]
            expect = M2 / M1
            assert expect / 2 <= ratio <= expect * 2


class TestBatchedKernels:
    def test_batch_matches_single(self):
        rng = np.random.default_rng(4)
        kl = ku = 3
        M, nb = 25, 7
        mats = [random_banded_dense(rng, M, kl, ku) for _ in range(nb)]
        rhs = rng.standard_normal((nb, M))
        data = np.stack([la.banded_from_dense(A, kl, ku).data for A in mats])
        ipiv, _ = la.banded_lu_factor_batch(data, kl, ku)
        X, _ = la.banded_solve_batch(data, ipiv, kl, ku, rhs)
        for k, A in enumerate(mats):
            xd = la.dense_lu_solve(A, rhs[k])
            assert np.linalg.norm(X[k] - xd) / np.linalg.norm(xd) < 1e-11


class TestGmres:
    def test_identity_one_iteration(self):
        b = np.array([1.0, -2.0, 3.0])
        res = la.gmres(lambda v: v, b, tol=1e-12)
        assert res.converged and res.iterations == 1
        assert np.allclose(res.x, b, atol=1e-12)

    def test_diagonal_in_n_iterations(self):
        n = 12
        d = np.arange(1.0, n + 1.0)
        b = np.ones(n)
        res = la.gmres(lambda v: d * v, b, tol=1e-12)
        assert res.converged and res.iterations <= n
        assert np.linalg.norm(d * res.x - b) < 1e-11

    def test_matches_banded_solver(self):
        rng = np.random.default_rng(6)
        A = random_banded_dense(rng, 30, 2, 2)
        b = rng.standard_normal(30)
        bm = la.banded_from_dense(A, 2, 2)
        la.banded_lu_factor(bm)
        x_direct = la.banded_solve(bm, b)
        res = la.gmres(lambda v: A @ v, b, tol=1e-12)
        assert res.converged
        assert np.linalg.norm(res.x - x_direct) < 1e-9 * np.linalg.norm(x_direct)

    def test_monotone_residual(self):
        rng = np.random.default_rng(8)
        A = random_banded_dense(rng, 20, 3, 3, dominant=False) + 8.0 * np.eye(20)
        b = rng.standard_normal(20)
        resids = []
        x_prev = [np.zeros(20)]

        def apply(v):
            return A @ v

        # re-run with increasing max_iter and record the attained residual
        for k in range(1, 21):
            r = la.gmres(apply, b, tol=1e-16, max_iter=k)
            resids.append(np.linalg.norm(A @ r.x - b))
            x_prev.append(r.x)
        assert all(r2 <= r1 * (1 + 1e-10) for r1, r2 in zip(resids, resids[1:]))

    def test_rejects_bad_tol(self):
        with pytest.raises(ValueError):
            la.gmres(lambda v: v, np.ones(3), tol=0.0)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(10)
        n, nb = 18, 5
        mats = [random_banded_dense(rng, n, 4, 4) for _ in range(nb)]
        B = rng.standard_normal((nb, n))
        stacked = np.stack(mats)

        def apply_batch(V):
            return np.einsum("bij,bj->bi", stacked, V)

        X, iters, done = la.gmres_batch(apply_batch, B, tol=1e-12)
        assert done.all()
        for k, A in enumerate(mats):
            single = la.gmres(lambda v, A=A: A @ v, B[k], tol=1e-12)
            assert np.linalg.norm(X[k] - single.x) < 1e-8 * np.linalg.norm(single.x)
