import math

import numpy as np
import pytest
import scipy.stats

from subnewton.data import DimensionError
from subnewton.sketch import (GAUSSIAN, LEVERAGE_ROWS, SPARSE_EMBED,
                              UNIFORM_ROWS, RankError, RealizedSketch,
                              SketchSpec, apply, coherence, embedding_dim,
                              leverage_scores, realize, sample_size_coherent,
                              sample_size_subnewton)


def identity_sampling_sketch(m):
    """Uniform row sketch that takes every row exactly once with unit scale."""
    spec = SketchSpec(kind=UNIFORM_ROWS, target_dim=m, seed=0)
    return RealizedSketch(spec=spec, source_rows=m, rows=np.arange(m),
                          scales=np.ones(m))


class CountingArray(np.ndarray):
    """ndarray that counts elementwise multiplications it participates in."""

    __array_priority__ = 1000.0
    touched = 0

    def __mul__(self, other):
        CountingArray.touched += self.size
        return np.asarray(self) * np.asarray(other)

    def __rmul__(self, other):
        CountingArray.touched += self.size
        return np.asarray(other) * np.asarray(self)


class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            SketchSpec(kind="fourier", target_dim=4, seed=0)
        with pytest.raises(ValueError):
            SketchSpec(kind=GAUSSIAN, target_dim=0, seed=0)
        with pytest.raises(ValueError):
            SketchSpec(kind=LEVERAGE_ROWS, target_dim=4, seed=0, beta=0.0)


class TestRealize:
    def test_sparse_embed_structure(self):
        sk = realize(SketchSpec(SPARSE_EMBED, 4, seed=1), m=10)
        assert sk.rows.shape == (10,)
        assert np.all((sk.rows >= 0) & (sk.rows < 4))
        assert set(np.unique(sk.signs)) <= {-1.0, 1.0}
        S = sk.as_matrix()
        # exactly one nonzero per column of S
        assert np.all(np.count_nonzero(S, axis=0) == 1)

    def test_uniform_unit_scales(self):
        sk = realize(SketchSpec(UNIFORM_ROWS, 3, seed=2), m=3)
        np.testing.assert_array_equal(sk.scales, np.ones(3))

    def test_gaussian_moments(self):
        sk = realize(SketchSpec(GAUSSIAN, 1000, seed=5), m=50)
        var = sk.dense.var()
        assert abs(var - 1e-3) <= 0.05e-3

    def test_deterministic(self):
        spec = SketchSpec(GAUSSIAN, 8, seed=9)
        np.testing.assert_array_equal(realize(spec, 20).dense,
                                      realize(spec, 20).dense)
        spec = SketchSpec(SPARSE_EMBED, 8, seed=9)
        a, b = realize(spec, 20), realize(spec, 20)
        np.testing.assert_array_equal(a.rows, b.rows)
        np.testing.assert_array_equal(a.signs, b.signs)

    def test_leverage_needs_scores(self):
        with pytest.raises(ValueError, match="scores"):
            realize(SketchSpec(LEVERAGE_ROWS, 4, seed=0), m=10)


class TestApply:
    def test_identity_sampling_preserves_gram(self):
        rng = np.random.default_rng(3)
        B = rng.standard_normal((6, 4))
        SB = apply(identity_sampling_sketch(6), B)
        np.testing.assert_array_equal(SB.T @ SB, B.T @ B)

    def test_zero_input(self):
        sk = realize(SketchSpec(GAUSSIAN, 5, seed=0), m=7)
        np.testing.assert_array_equal(apply(sk, np.zeros((7, 3))),
                                      np.zeros((5, 3)))

    def test_matches_materialized_matrix(self):
        rng = np.random.default_rng(4)
        B = rng.standard_normal((12, 3))
        scores = leverage_scores(B)
        for spec, kw in [(SketchSpec(GAUSSIAN, 6, 1), {}),
                         (SketchSpec(UNIFORM_ROWS, 6, 2), {}),
                         (SketchSpec(LEVERAGE_ROWS, 6, 3), {"scores": scores}),
                         (SketchSpec(LEVERAGE_ROWS, 6, 4, beta=0.5),
                          {"scores": scores}),
                         (SketchSpec(SPARSE_EMBED, 6, 5), {})]:
            sk = realize(spec, 12, **kw)
            np.testing.assert_allclose(apply(sk, B), sk.as_matrix() @ B,
                                       rtol=1e-13, atol=1e-13)

    def test_dimension_mismatch(self):
        sk = realize(SketchSpec(GAUSSIAN, 5, seed=0), m=7)
        with pytest.raises(DimensionError):
            apply(sk, np.zeros((8, 3)))

    def test_sparse_embed_single_pass(self):
        sk = realize(SketchSpec(SPARSE_EMBED, 4, seed=6), m=9)
        B = np.arange(27, dtype=np.float64).reshape(9, 3).view(CountingArray)
        CountingArray.touched = 0
        apply(sk, B)
        assert CountingArray.touched == 27  # each entry multiplied exactly once

    def test_gaussian_embedding_example(self):
        # s = 4 d / eps^2 with eps = 0.1 on a 100 x 5 factor
        rng = np.random.default_rng(7)
        B = rng.standard_normal((100, 5))
        sk = realize(SketchSpec(GAUSSIAN, 2000, seed=8), m=100)
        SB = apply(sk, B)
        hits = 0
        for _ in range(100):
            x = rng.standard_normal(5)
            ratio = np.sum((SB @ x) ** 2) / np.sum((B @ x) ** 2)
            hits += 0.9 <= ratio <= 1.1
        assert hits >= 95


class TestEmbeddingProperty:
    """Empirical subspace-embedding check on a 200 x 8 factor, eps = 0.3."""

    eps = 0.3

    def _hits(self, B, SB, rng, trials=100):
        hits = 0
        for _ in range(trials):
            x = rng.standard_normal(B.shape[1])
            x /= np.linalg.norm(x)
            ratio = np.sum((SB @ x) ** 2) / np.sum((B @ x) ** 2)
            hits += (1 - self.eps) <= ratio <= (1 + self.eps)
        return hits

    def test_gaussian(self):
        rng = np.random.default_rng(21)
        B = rng.standard_normal((200, 8))
        s = embedding_dim(GAUSSIAN, 8, self.eps)
        assert s == math.ceil(4 * 8 / self.eps**2)
        sk = realize(SketchSpec(GAUSSIAN, s, seed=31), m=200)
        assert self._hits(B, apply(sk, B), rng) >= 95

    def test_leverage_rows(self):
        rng = np.random.default_rng(22)
        B = rng.standard_normal((200, 8))
        B[:20] *= 6.0  # concentrate leverage so sampling matters
        s = embedding_dim(LEVERAGE_ROWS, 8, self.eps)
        assert s == math.ceil(4 * 8 * math.log(8) / self.eps**2)
        sk = realize(SketchSpec(LEVERAGE_ROWS, s, seed=32), m=200,
                     scores=leverage_scores(B))
        assert self._hits(B, apply(sk, B), rng) >= 95


class TestLeverageScores:
    def test_identity_columns(self):
        m, d = 9, 4
        B = np.eye(m)[:, :d]
        scores = leverage_scores(B)
        np.testing.assert_allclose(scores[:d], 1.0 / d, rtol=1e-14)
        np.testing.assert_allclose(scores[d:], 0.0, atol=1e-14)
        assert scores.sum() == pytest.approx(1.0, rel=1e-12)

    def test_column_scaling_invariance(self):
        rng = np.random.default_rng(23)
        B = rng.standard_normal((15, 4))
        D = np.diag(rng.uniform(0.1, 10.0, size=4))
        np.testing.assert_allclose(leverage_scores(B @ D), leverage_scores(B),
                                   rtol=1e-9, atol=1e-12)

    def test_normalization(self):
        rng = np.random.default_rng(24)
        scores = leverage_scores(rng.standard_normal((50, 5)))
        assert scores.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(scores >= 0) and np.all(scores <= 1 / 5 + 1e-12)

    def test_accepts_sparse_matrix(self):
        from subnewton.data import dense_to_sparse
        rng = np.random.default_rng(28)
        B = rng.standard_normal((20, 4))
        np.testing.assert_allclose(leverage_scores(dense_to_sparse(B)),
                                   leverage_scores(B), rtol=1e-12)
        assert coherence(dense_to_sparse(B)) == pytest.approx(coherence(B))

    def test_rank_error(self):
        B = np.ones((10, 3))
        with pytest.raises(RankError):
            leverage_scores(B)

    def test_needs_tall_matrix(self):
        with pytest.raises(DimensionError):
            leverage_scores(np.ones((2, 5)))


class TestCoherence:
    def test_equal_scores_design(self):
        B = np.vstack([np.eye(4), np.eye(4)])  # every row has leverage 1/8
        assert coherence(B) == pytest.approx(1.0, rel=1e-12)

    def test_identity_columns_max(self):
        m, d = 12, 3
        assert coherence(np.eye(m)[:, :d]) == pytest.approx(m / d, rel=1e-12)

    def test_random_gaussian_range(self):
        mu = coherence(np.random.default_rng(25).standard_normal((200, 5)))
        assert 1.0 <= mu <= 40.0
        assert mu < 5.0  # typical for a Gaussian design


class TestSamplingDistribution:
    def test_leverage_chi_square(self):
        rng = np.random.default_rng(26)
        B = rng.standard_normal((10, 3)) * rng.uniform(0.2, 3.0, size=(10, 1))
        scores = leverage_scores(B)
        sk = realize(SketchSpec(LEVERAGE_ROWS, 100_000, seed=41), m=10,
                     scores=scores)
        counts = np.bincount(sk.rows, minlength=10)
        result = scipy.stats.chisquare(counts, f_exp=scores * 100_000)
        assert result.pvalue > 0.001

    def test_beta_mixture_chi_square(self):
        rng = np.random.default_rng(27)
        B = rng.standard_normal((10, 3)) * rng.uniform(0.2, 3.0, size=(10, 1))
        scores = leverage_scores(B)
        beta = 0.5
        sk = realize(SketchSpec(LEVERAGE_ROWS, 100_000, seed=42, beta=beta),
                     m=10, scores=scores)
        expected = (beta * scores + (1 - beta) / 10) * 100_000
        counts = np.bincount(sk.rows, minlength=10)
        assert scipy.stats.chisquare(counts, f_exp=expected).pvalue > 0.001
        # mixture respects the p_i >= beta * l_i floor
        assert np.all(beta * scores + (1 - beta) / 10 >= beta * scores)


class TestSampleSizes:
    def test_unit_log_case(self):
        # log(2p/delta) = 1 when p = 2, delta = 4/e
        assert sample_size_subnewton(1.0, 1.0, 2.0, 4.0 / math.e, 1.0) == 16

    def test_formula_evaluation(self):
        assert sample_size_subnewton(1.0, 0.1, 100.0, 0.1, 0.5) == 48646

    def test_doubling_k_quadruples(self):
        base = sample_size_subnewton(1.0, 1.0, 2.0, 4.0 / math.e, 1.0)
        assert sample_size_subnewton(2.0, 1.0, 2.0, 4.0 / math.e, 1.0) == 4 * base

    def test_coherent_unit_case(self):
        assert sample_size_coherent(1.0, math.e, 1.0, 1.0, c=1.0) == 3

    def test_coherent_doubling_mu(self):
        one = sample_size_coherent(1.0, math.e, 1.0, 1.0, c=1.0)
        assert sample_size_coherent(2.0, math.e, 1.0, 1.0, c=1.0) == 2 * one

    def test_coherent_formula_evaluation(self):
        # 16 * 3 * 20 * log(400) / 0.25, evaluated independently
        expected = math.ceil(16 * 3 * 20 * math.log(400.0) / 0.25)
        assert expected == 23008
        assert sample_size_coherent(3.0, 20.0, 0.05, 0.5, c=16.0) == expected

    def test_embedding_dim_rules(self):
        assert embedding_dim(SPARSE_EMBED, 8, 0.5) == math.ceil(64 / 0.25)
        assert embedding_dim(GAUSSIAN, 8, 0.5, c=2.0) == math.ceil(2 * 4 * 8 / 0.25)
        with pytest.raises(ValueError):
            embedding_dim(UNIFORM_ROWS, 8, 0.5)
