import math

import numpy as np
import pytest

from subnewton.data import dense_to_sparse, Dataset
from subnewton.diagnostics import classify, measure_gamma, residual_check
from subnewton.linalg import spd_factor, spd_solve
from subnewton.objectives import Quadratic, RidgeLogistic
from subnewton.solvers import refine_loop


def logistic_objective(n=30, p=4, lam=0.1, seed=0):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, p))
    labels = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return RidgeLogistic(Dataset(features=dense_to_sparse(M), labels=labels),
                         lam), rng


class TestClassify:
    def test_quadratic_sequence(self):
        g = [2.0 ** -(2 ** t) for t in range(6)]
        assert classify(g, window=4).classification == "quadratic"

    def test_linear_sequence(self):
        g = [0.5 ** t for t in range(30)]
        report = classify(g, window=4)
        assert report.classification == "linear"
        np.testing.assert_allclose(report.rhos, 0.5)

    def test_superlinear_sequence(self):
        g = [1.0 / math.factorial(t) for t in range(18)]
        report = classify(g, window=4)
        assert report.classification == "superlinear"
        np.testing.assert_allclose(report.rhos,
                                   [1.0 / (t + 1) for t in range(len(report.rhos))])

    def test_inconclusive_sequence(self):
        g = [1.0, 0.9, 0.5, 0.45, 0.2, 0.19, 0.09]  # alternating ratios
        assert classify(g, window=4).classification == "inconclusive"

    def test_scale_invariance(self):
        g = [0.5 ** t for t in range(20)]
        for scale in (1e-6, 1.0, 1e6):
            assert classify([scale * v for v in g], window=4).classification \
                == "linear"

    def test_noise_floor_excluded(self):
        g = [2.0 ** -(2 ** t) for t in range(9)]  # tail is below 100*eps*g0
        report = classify(g, window=4)
        assert len(report.rhos) < len(g) - 1
        assert report.classification == "quadratic"

    def test_insufficient_records(self):
        with pytest.raises(ValueError):
            classify([1.0, 0.5, 0.25], window=4)

    def test_accepts_record_objects(self):
        class R:
            def __init__(self, g):
                self.grad_norm = g

        g = [R(0.5 ** t) for t in range(10)]
        assert classify(g, window=4).classification == "linear"


class TestMeasureGamma:
    def test_exact_hessian_gives_zero(self):
        obj, rng = logistic_objective()
        x = rng.standard_normal(4)
        assert measure_gamma(obj, x, obj.explicit_hessian(x)) <= 1e-10

    def test_scalar_multiple_case(self):
        obj, rng = logistic_objective(seed=1)
        x = rng.standard_normal(4)
        eps = 0.3
        H = obj.explicit_hessian(x) / (1.0 - eps)
        assert measure_gamma(obj, x, H) == pytest.approx(eps, rel=1e-10)

    def test_matches_svd_oracle(self):
        obj, rng = logistic_objective(n=40, p=5, seed=2)
        x = rng.standard_normal(5)
        A = obj.explicit_hessian(x)
        for trial in range(5):
            E = rng.standard_normal((5, 5)) * 0.05
            H = A + 0.5 * (E + E.T) + 0.2 * np.eye(5)
            oracle = np.linalg.norm((A - H) @ np.linalg.inv(H), ord=2)
            assert measure_gamma(obj, x, H) == pytest.approx(oracle, rel=1e-6)

    def test_zero_iff_exact(self):
        obj, rng = logistic_objective(seed=3)
        x = rng.standard_normal(4)
        H = obj.explicit_hessian(x)
        assert measure_gamma(obj, x, H) <= 1e-9
        assert measure_gamma(obj, x, H + 1e-3 * np.eye(4)) > 1e-9


class TestResidualCheck:
    def test_exact_direction(self):
        obj, rng = logistic_objective(seed=4)
        x = rng.standard_normal(4)
        grad = obj.gradient(x)
        p = spd_solve(spd_factor(obj.explicit_hessian(x)), grad)
        assert residual_check(obj, x, p, grad) <= 1e-10 * np.linalg.norm(grad)

    def test_zero_direction(self):
        obj, rng = logistic_objective(seed=5)
        x = rng.standard_normal(4)
        grad = obj.gradient(x)
        assert residual_check(obj, x, np.zeros(4), grad) == pytest.approx(
            np.linalg.norm(grad))

    def test_refine_postcondition_replay(self):
        rng = np.random.default_rng(6)
        Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        A = (Q * np.geomspace(10, 1, 6)) @ Q.T
        obj = Quadratic(A, rng.standard_normal(6))
        H = A + 0.15 * np.diag(np.arange(1.0, 7.0))
        grad = rng.standard_normal(6)
        tol = 1e-7
        p, rnorm, _ = refine_loop(obj, np.zeros(6), grad, spd_factor(H), tol,
                                  inner_max=100)
        assert rnorm <= tol
        assert residual_check(obj, np.zeros(6), p, grad) <= tol
