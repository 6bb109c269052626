import numpy as np
import pytest

from subnewton.data import DimensionError
from subnewton.linalg import (NegativeCurvatureError, NotSpdError, pcg,
                              spd_factor, spd_solve, top_r_eig)


def random_spd(rng, p, cond=100.0):
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    eigs = np.geomspace(cond, 1.0, p)
    return (Q * eigs) @ Q.T


class TestSpdFactor:
    def test_scaled_identity(self):
        f = spd_factor(4.0 * np.eye(3))
        np.testing.assert_allclose(np.diag(f.lower), [2.0, 2.0, 2.0])
        assert f.jitter_applied == 0.0

    def test_hand_solve(self):
        f = spd_factor(np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(spd_solve(f, np.array([3.0, 3.0])),
                                   [1.0, 1.0], rtol=1e-14)

    def test_indefinite_rejected(self):
        with pytest.raises(NotSpdError):
            spd_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            spd_factor(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_jitter_rescues_semidefinite(self):
        H = np.diag([1.0, 0.0])
        f = spd_factor(H)
        assert f.jitter_applied > 0.0
        rebuilt = f.lower @ f.lower.T - f.jitter_applied * np.eye(2)
        assert np.linalg.norm(rebuilt - H) <= 1e-10 * np.linalg.norm(H)

    def test_reconstruction_invariant(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            H = random_spd(rng, 8)
            f = spd_factor(H)
            rebuilt = f.lower @ f.lower.T - f.jitter_applied * np.eye(8)
            assert np.linalg.norm(rebuilt - H) <= 1e-10 * np.linalg.norm(H)


class TestSpdSolve:
    def test_identity(self):
        f = spd_factor(np.eye(4))
        b = np.arange(4.0)
        np.testing.assert_array_equal(spd_solve(f, b), b)

    def test_diagonal(self):
        f = spd_factor(np.diag([1.0, 2.0, 4.0]))
        np.testing.assert_allclose(spd_solve(f, np.array([1.0, 2.0, 4.0])),
                                   np.ones(3), rtol=1e-15)

    def test_residual_oracle(self):
        rng = np.random.default_rng(1)
        H = random_spd(rng, 10)
        b = rng.standard_normal(10)
        x = spd_solve(spd_factor(H), b)
        assert np.linalg.norm(H @ x - b) <= 1e-10 * np.linalg.norm(b)

    def test_left_inverse_up_to_cond_1e6(self):
        rng = np.random.default_rng(2)
        for cond in (10.0, 1e3, 1e6):
            H = random_spd(rng, 12, cond=cond)
            b = rng.standard_normal(12)
            x = spd_solve(spd_factor(H), b)
            assert np.linalg.norm(H @ x - b) <= 1e-9 * np.linalg.norm(b)

    def test_dimension_mismatch(self):
        f = spd_factor(np.eye(3))
        with pytest.raises(DimensionError):
            spd_solve(f, np.ones(4))


class TestPcg:
    def test_identity_operator_one_iteration(self):
        b = np.array([1.0, -2.0, 0.5])
        res = pcg(lambda v: v, b, lambda r: r, tol_abs=1e-12, max_iter=10)
        np.testing.assert_allclose(res.solution, b, rtol=1e-14)
        assert res.iterations == 1

    def test_exact_preconditioner_one_iteration(self):
        A = np.diag(np.arange(1.0, 11.0))
        f = spd_factor(A)
        b = np.ones(10)
        res = pcg(lambda v: A @ v, b, lambda r: spd_solve(f, r),
                  tol_abs=1e-12, max_iter=50)
        assert res.iterations <= 2
        np.testing.assert_allclose(res.solution, b / np.arange(1.0, 11.0),
                                   rtol=1e-12)

    def test_matches_direct_solve(self):
        rng = np.random.default_rng(3)
        A = random_spd(rng, 30, cond=50.0)
        b = rng.standard_normal(30)
        res = pcg(lambda v: A @ v, b, lambda r: r, tol_abs=1e-10, max_iter=300)
        assert res.residual_norm <= 1e-10
        assert np.linalg.norm(A @ res.solution - b) <= 1e-10 * 1.01
        direct = spd_solve(spd_factor(A), b)
        np.testing.assert_allclose(res.solution, direct, rtol=1e-8, atol=1e-12)

    def test_finite_termination_on_diagonal(self):
        A = np.diag(np.arange(1.0, 11.0))
        b = np.ones(10)
        res = pcg(lambda v: A @ v, b, lambda r: r, tol_abs=1e-12, max_iter=100)
        assert res.iterations <= 12  # 10 in exact arithmetic, plus slack

    def test_negative_curvature(self):
        A = np.diag([1.0, -1.0])
        with pytest.raises(NegativeCurvatureError):
            pcg(lambda v: A @ v, np.array([0.0, 1.0]), lambda r: r,
                tol_abs=1e-12, max_iter=10)

    def test_residual_not_increased(self):
        rng = np.random.default_rng(4)
        A = random_spd(rng, 15)
        b = rng.standard_normal(15)
        res = pcg(lambda v: A @ v, b, lambda r: r, tol_abs=1e-6, max_iter=4)
        assert res.residual_norm <= np.linalg.norm(b)

    def test_zero_rhs_immediate(self):
        res = pcg(lambda v: v, np.zeros(3), lambda r: r, tol_abs=1e-12,
                  max_iter=10)
        assert res.iterations == 0 and res.residual_norm == 0.0

    def test_nonfinite_rhs_rejected(self):
        with pytest.raises(ValueError):
            pcg(lambda v: v, np.array([1.0, np.inf]), lambda r: r,
                tol_abs=1e-12, max_iter=10)


class TestTopREig:
    def test_diagonal_hand_case(self):
        vals, U = top_r_eig(np.diag([4.0, 2.0, 1.0]), r=1)
        np.testing.assert_allclose(vals, [4.0, 2.0])
        np.testing.assert_allclose(np.abs(U[:, 0]), [1.0, 0.0, 0.0], atol=1e-14)

    def test_degenerate_identity(self):
        vals, U = top_r_eig(np.eye(5), r=2)
        np.testing.assert_allclose(vals, np.ones(3))
        np.testing.assert_allclose(U.T @ U, np.eye(2), atol=1e-10)

    def test_against_full_eig_oracle(self):
        rng = np.random.default_rng(5)
        M = rng.standard_normal((20, 20))
        H = M @ M.T
        vals, U = top_r_eig(H, r=2)
        oracle = np.sort(np.linalg.eigvalsh(H))[::-1][:3]
        np.testing.assert_allclose(vals, oracle, rtol=1e-8)
        residual = np.linalg.norm(H @ U - U * vals[:2], axis=0)
        assert np.all(residual <= 1e-8 * vals[0])

    def test_lanczos_path_matches_oracle(self):
        rng = np.random.default_rng(6)
        M = rng.standard_normal((600, 40))
        H = M @ M.T + 0.1 * np.eye(600)  # p > 500 takes the Lanczos route
        vals, U = top_r_eig(H, r=3)
        oracle = np.sort(np.linalg.eigvalsh(H))[::-1][:4]
        np.testing.assert_allclose(vals, oracle, rtol=1e-8)
        np.testing.assert_allclose(U.T @ U, np.eye(3), atol=1e-10)
        residual = np.linalg.norm(H @ U - U * vals[:3], axis=0)
        assert np.all(residual <= 1e-8 * vals[0])

    def test_rank_argument_validated(self):
        with pytest.raises(ValueError):
            top_r_eig(np.eye(3), r=3)
