"""Randomized sketching operators, leverage scores, and sample-size rules.

A sketch is a random s x m matrix S applied to a tall factor B so that the
Gram matrix of S B spectrally approximates that of B. Four constructions are
supported: dense Gaussian, uniform row sampling, leverage-score row sampling
(with an optional uniform mixture), and the one-nonzero-per-column sparse
embedding. Realizations are deterministic in (spec, source size).
"""

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .data import DimensionError, SparseMatrix
from .rng import stream

GAUSSIAN = "gaussian"
UNIFORM_ROWS = "uniform_rows"
LEVERAGE_ROWS = "leverage_rows"
SPARSE_EMBED = "sparse_embed"
KINDS = (GAUSSIAN, UNIFORM_ROWS, LEVERAGE_ROWS, SPARSE_EMBED)


class RankError(ValueError):
    """Matrix is numerically rank deficient."""


@dataclass(frozen=True)
class SketchSpec:
    """Recipe for a random embedding: kind, target dimension, seed.

    ``beta`` mixes the leverage distribution with uniform, p_i = beta*l_i +
    (1-beta)/m; it is meaningful only for ``leverage_rows``.
    """

    kind: str
    target_dim: int
    seed: int
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sketch kind {self.kind!r}")
        if self.target_dim < 1:
            raise ValueError("target_dim must be >= 1")
        if not (0.0 < self.beta <= 1.0):
            raise ValueError("beta must be in (0, 1]")


@dataclass(frozen=True)
class RealizedSketch:
    """A drawn sketching matrix, stored in kind-specific form.

    gaussian: ``dense`` holds the s x m matrix. Sampling kinds: ``rows`` are
    the chosen source rows, ``scales`` the 1/sqrt(p_i s) rescalings. Sparse
    embedding: ``rows`` maps each source row to its target row and ``signs``
    holds the +-1 entries (one nonzero per column of S).
    """

    spec: SketchSpec
    source_rows: int
    dense: Optional[np.ndarray] = None
    rows: Optional[np.ndarray] = None
    scales: Optional[np.ndarray] = None
    signs: Optional[np.ndarray] = None

    def as_matrix(self) -> np.ndarray:
        """Materialize S (for tests and small problems)."""
        s, m = self.spec.target_dim, self.source_rows
        if self.spec.kind == GAUSSIAN:
            return self.dense.copy()
        S = np.zeros((s, m))
        if self.spec.kind == SPARSE_EMBED:
            S[self.rows, np.arange(m)] = self.signs
        else:
            S[np.arange(s), self.rows] = self.scales
        return S


def realize(spec: SketchSpec, m: int,
            scores: Optional[np.ndarray] = None) -> RealizedSketch:
    """Draw the sketching matrix for ``m`` source rows.

    Deterministic given (spec, m, scores). ``scores`` is the leverage-score
    vector of the target factor and is required for ``leverage_rows``.
    """
    if m < 1:
        raise ValueError("need at least one source row")
    rng = stream(spec.seed)
    s = spec.target_dim

    if spec.kind == GAUSSIAN:
        dense = rng.standard_normal((s, m)) / math.sqrt(s)
        return RealizedSketch(spec=spec, source_rows=m, dense=dense)

    if spec.kind == SPARSE_EMBED:
        rows = rng.integers(0, s, size=m)
        signs = rng.integers(0, 2, size=m) * 2.0 - 1.0
        return RealizedSketch(spec=spec, source_rows=m, rows=rows, signs=signs)

    if spec.kind == UNIFORM_ROWS:
        probs = np.full(m, 1.0 / m)
    else:
        if scores is None:
            raise ValueError(
                "leverage_rows needs the leverage-score vector of the factor; "
                "pass scores=leverage_scores(B)")
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (m,):
            raise DimensionError(f"scores has shape {scores.shape}, expected ({m},)")
        probs = spec.beta * scores + (1.0 - spec.beta) / m
        probs = probs / probs.sum()
    rows = rng.choice(m, size=s, replace=True, p=probs)
    scales = 1.0 / np.sqrt(probs[rows] * s)
    return RealizedSketch(spec=spec, source_rows=m, rows=rows, scales=scales)


def apply(sk: RealizedSketch, B: np.ndarray) -> np.ndarray:
    """Compute S @ B.

    Sampling kinds gather and rescale rows; the sparse embedding makes a
    single pass over the entries of B (one multiply and one scatter-add per
    entry).
    """
    B = np.asanyarray(B)
    if B.ndim != 2 or B.shape[0] != sk.source_rows:
        raise DimensionError(
            f"B has shape {B.shape}, expected ({sk.source_rows}, d)")
    kind = sk.spec.kind
    if kind == GAUSSIAN:
        return sk.dense @ B
    if kind == SPARSE_EMBED:
        out = np.zeros((sk.spec.target_dim, B.shape[1]), dtype=B.dtype)
        np.add.at(out, sk.rows, sk.signs[:, None] * B)
        return out
    return sk.scales[:, None] * B[sk.rows]


def _thin_svd(B: Union[np.ndarray, SparseMatrix]):
    if isinstance(B, SparseMatrix):
        B = B.to_dense()
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] < B.shape[1]:
        raise DimensionError("need a tall matrix (m >= d)")
    U, svals, _ = np.linalg.svd(B, full_matrices=False)
    if svals[-1] < 1e-10 * svals[0]:
        raise RankError(
            f"rank deficient: singular value ratio {svals[-1] / svals[0]:.2e}")
    return U, svals


def leverage_scores(B: Union[np.ndarray, SparseMatrix]) -> np.ndarray:
    """Exact leverage scores l_i = ||u_i||^2 / d via a thin factorization.

    ``u_i`` are rows of an orthonormal column basis of B, so the scores sum
    to 1 and each is at most 1/d. Invariant under column scaling of B. Raises
    :class:`RankError` when B is numerically rank deficient.
    """
    U, _ = _thin_svd(B)
    return np.sum(U**2, axis=1) / U.shape[1]


def coherence(B: Union[np.ndarray, SparseMatrix]) -> float:
    """Row-coherence mu(B) = m * max_i l_i, in [1, m/d]."""
    scores = leverage_scores(B)
    return float(len(scores) * scores.max())


def sample_size_subnewton(K: float, sigma: float, p: float, delta: float,
                          epsilon: float) -> int:
    """Uniform with-replacement sample size 16 K^2 log(2p/delta) / (sigma eps)^2."""
    return math.ceil(16.0 * K**2 * math.log(2.0 * p / delta)
                     / (sigma**2 * epsilon**2))


def sample_size_coherent(mu: float, p: float, delta: float, epsilon: float,
                         c: float = 16.0) -> int:
    """Coherence-based sample size c * mu * p * log(p/delta) / eps^2.

    ``c`` is the user-chosen constant hidden in the asymptotic bound.
    """
    return math.ceil(c * mu * p * math.log(p / delta) / epsilon**2)


def embedding_dim(kind: str, d: int, epsilon: float, c: float = 1.0) -> int:
    """Target dimension giving an epsilon-embedding for a d-column factor.

    gaussian: c * 4 d / eps^2; leverage_rows: c * 4 d log(d) / eps^2;
    sparse_embed: c * d^2 / eps^2. ``c`` scales the constant. Uniform row
    sampling has no data-oblivious rule (it depends on coherence); use
    :func:`sample_size_coherent`.
    """
    if kind == GAUSSIAN:
        raw = 4.0 * d / epsilon**2
    elif kind == LEVERAGE_ROWS:
        raw = 4.0 * d * max(math.log(d), 1.0) / epsilon**2
    elif kind == SPARSE_EMBED:
        raw = d**2 / epsilon**2
    else:
        raise ValueError(f"no sizing rule for sketch kind {kind!r}")
    return max(1, math.ceil(c * raw))
