"""Objective functions as capability bundles.

An objective is an average of convex per-sample terms plus an exact ridge
term. Solvers talk to it through a handle exposing value, gradient,
Hessian-vector products, the explicit (small) Hessian, sub-sampled Hessians,
rows of a factor B with ``hessian = B.T B + ridge * I``, and sub-sampled
gradients. Two instantiations are provided: ridge logistic regression over a
:class:`~subnewton.data.Dataset`, and a quadratic test objective.
"""

from typing import Optional, Sequence

import numpy as np

from .data import Dataset, DimensionError, spmv, spmv_t

EXPLICIT_HESSIAN_MAX_DIM = 10_000
# floor on curvature weights before sqrt: keeps factor rows nonzero for
# effectively separable samples
_WEIGHT_FLOOR = 1e-300

_ALL_CAPABILITIES = frozenset({
    "value", "gradient", "hessian_vec", "explicit_hessian", "sub_hessian",
    "factor_row", "per_term_gradient",
})


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Logistic function, branch form; no overflow for any finite input."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus_neg(z: np.ndarray) -> np.ndarray:
    """log(1 + exp(-z)) computed as max(0, -z) + log1p(exp(-|z|))."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(0.0, -z) + np.log1p(np.exp(-np.abs(z)))


def _check_vector(x, dim: int, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dim,):
        raise DimensionError(f"{name} has shape {x.shape}, expected ({dim},)")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


class ObjectiveHandle:
    """Capability bundle for an average-of-terms objective.

    Subclasses set ``dim``, ``n_terms`` and ``ridge`` and implement the
    capabilities they support; unsupported ones raise ``NotImplementedError``.
    Handles are immutable and safe to share; every operation is a pure
    function of ``(handle, arguments)``.
    """

    dim: int
    n_terms: int
    ridge: float

    @property
    def capabilities(self) -> frozenset:
        return frozenset(c for c in _ALL_CAPABILITIES
                         if getattr(type(self), self._method_of(c), None)
                         is not getattr(ObjectiveHandle, self._method_of(c)))

    @staticmethod
    def _method_of(cap: str) -> str:
        return {"factor_row": "factor_rows"}.get(cap, cap)

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian_vec(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def explicit_hessian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sub_hessian(self, x: np.ndarray, sample: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    def factor_rows(self, x: np.ndarray, rows: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    def per_term_gradient(self, x: np.ndarray,
                          sample: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    def curvature_bounds(self) -> tuple[float, float]:
        """Estimates (K, sigma): max per-term Hessian norm, min Hessian eigenvalue."""
        raise NotImplementedError

    def _guard_explicit(self):
        if self.dim > EXPLICIT_HESSIAN_MAX_DIM:
            raise ValueError(
                f"refusing to materialize a {self.dim}x{self.dim} Hessian "
                f"(limit {EXPLICIT_HESSIAN_MAX_DIM})")

    def _check_sample(self, sample) -> np.ndarray:
        sample = np.asarray(sample, dtype=np.int64)
        if sample.ndim != 1 or len(sample) == 0:
            raise ValueError("sample must be a nonempty 1-d index collection")
        if sample.min() < 0 or sample.max() >= self.n_terms:
            raise IndexError("sample index out of range")
        return sample


class RidgeLogistic(ObjectiveHandle):
    """Ridge logistic regression.

        F(x) = (1/n) sum_i log(1 + exp(-b_i <a_i, x>)) + (ridge/2) ||x||^2

    The ridge term is carried exactly everywhere: sub-sampled and factored
    Hessians sample only the data part. Per-term curvature weights
    ``w_i = s_i (1 - s_i)`` with ``s_i = sigmoid(b_i <a_i, x>)`` lie in
    (0, 1/4].
    """

    def __init__(self, dataset: Dataset, lam: float):
        if lam < 0:
            raise ValueError("ridge weight must be nonnegative")
        self.data = dataset
        self.lam = float(lam)
        self.dim = dataset.n_features
        self.n_terms = dataset.n_samples
        self.ridge = self.lam
        self._dense: Optional[np.ndarray] = None

    def _dense_features(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self.data.features.to_dense()
            self._dense.flags.writeable = False
        return self._dense

    def _margins(self, x: np.ndarray) -> np.ndarray:
        return self.data.labels * spmv(self.data.features, x)

    def weights(self, x: np.ndarray) -> np.ndarray:
        """Per-term curvature weights w_i = s_i (1 - s_i) in (0, 1/4]."""
        x = _check_vector(x, self.dim)
        s = sigmoid(self._margins(x))
        return s * (1.0 - s)

    def value(self, x: np.ndarray) -> float:
        x = _check_vector(x, self.dim)
        loss = float(np.mean(softplus_neg(self._margins(x)))) if self.n_terms else 0.0
        return loss + 0.5 * self.lam * float(x @ x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = _check_vector(x, self.dim)
        if self.n_terms == 0:
            return self.lam * x
        coeff = -sigmoid(-self._margins(x)) * self.data.labels / self.n_terms
        return spmv_t(self.data.features, coeff) + self.lam * x

    def hessian_vec(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        x = _check_vector(x, self.dim)
        v = _check_vector(v, self.dim, "v")
        if self.n_terms == 0:
            return self.lam * v
        w = self.weights(x)
        Av = spmv(self.data.features, v)
        return spmv_t(self.data.features, w * Av) / self.n_terms + self.lam * v

    def explicit_hessian(self, x: np.ndarray) -> np.ndarray:
        self._guard_explicit()
        x = _check_vector(x, self.dim)
        if self.n_terms == 0:
            return self.lam * np.eye(self.dim)
        A = self._dense_features()
        w = self.weights(x)
        H = (A * w[:, None]).T @ A / self.n_terms + self.lam * np.eye(self.dim)
        return 0.5 * (H + H.T)

    def sub_hessian(self, x: np.ndarray, sample: Sequence[int]) -> np.ndarray:
        """Average of per-term Hessians over a with-replacement sample.

        The ridge contribution is exact, never sampled.
        """
        sample = self._check_sample(sample)
        x = _check_vector(x, self.dim)
        counts = np.bincount(sample, minlength=self.n_terms).astype(np.float64)
        w = self.weights(x) * counts / len(sample)
        A = self._dense_features()
        H = (A * w[:, None]).T @ A + self.lam * np.eye(self.dim)
        return 0.5 * (H + H.T)

    def factor_rows(self, x: np.ndarray, rows: Sequence[int]) -> np.ndarray:
        """Rows sqrt(w_i / n) a_i of the factor B with B.T B + ridge*I = Hessian."""
        x = _check_vector(x, self.dim)
        rows = np.asarray(rows, dtype=np.int64)
        if rows.ndim != 1:
            raise ValueError("rows must be a 1-d index collection")
        if len(rows) == 0:
            return np.zeros((0, self.dim))
        if rows.min() < 0 or rows.max() >= self.n_terms:
            raise IndexError("row index out of range")
        w = np.maximum(self.weights(x)[rows], _WEIGHT_FLOOR)
        A = self._dense_features()
        return np.sqrt(w / self.n_terms)[:, None] * A[rows]

    def per_term_gradient(self, x: np.ndarray,
                          sample: Sequence[int]) -> np.ndarray:
        """Gradient averaged over a sample of terms; ridge included exactly."""
        sample = self._check_sample(sample)
        x = _check_vector(x, self.dim)
        counts = np.bincount(sample, minlength=self.n_terms).astype(np.float64)
        coeff = -sigmoid(-self._margins(x)) * self.data.labels * counts / len(sample)
        return spmv_t(self.data.features, coeff) + self.lam * x

    def curvature_bounds(self) -> tuple[float, float]:
        """K = max_i ||a_i||^2 / 4 + ridge, sigma = ridge."""
        k_hat = float(self.data.features.row_norms_sq().max(initial=0.0)) / 4.0
        return k_hat + self.lam, self.lam


class Quadratic(ObjectiveHandle):
    """Quadratic test objective F(x) = x.T A x / 2 - b.T x with SPD ``A``.

    Every per-term Hessian equals ``A``, so any sub-sample reproduces the
    exact Hessian; the factor is the upper Cholesky triangle of ``A``.
    """

    def __init__(self, A: np.ndarray, b: np.ndarray):
        A = np.asarray(A, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or b.shape != (A.shape[0],):
            raise DimensionError("A must be square and b conformal")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, abs(A).max())):
            raise ValueError("A must be symmetric")
        self.A = A
        self.b = b
        self.dim = A.shape[0]
        self.n_terms = A.shape[0]
        self.ridge = 0.0
        self._factor = np.linalg.cholesky(A).T  # upper; factor.T @ factor = A

    def value(self, x: np.ndarray) -> float:
        x = _check_vector(x, self.dim)
        return 0.5 * float(x @ self.A @ x) - float(self.b @ x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = _check_vector(x, self.dim)
        return self.A @ x - self.b

    def hessian_vec(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        _check_vector(x, self.dim)
        v = _check_vector(v, self.dim, "v")
        return self.A @ v

    def explicit_hessian(self, x: np.ndarray) -> np.ndarray:
        self._guard_explicit()
        _check_vector(x, self.dim)
        return self.A.copy()

    def sub_hessian(self, x: np.ndarray, sample: Sequence[int]) -> np.ndarray:
        self._check_sample(sample)
        _check_vector(x, self.dim)
        return self.A.copy()

    def factor_rows(self, x: np.ndarray, rows: Sequence[int]) -> np.ndarray:
        _check_vector(x, self.dim)
        rows = np.asarray(rows, dtype=np.int64)
        if len(rows) == 0:
            return np.zeros((0, self.dim))
        if rows.min() < 0 or rows.max() >= self.n_terms:
            raise IndexError("row index out of range")
        return self._factor[rows].copy()

    def per_term_gradient(self, x: np.ndarray,
                          sample: Sequence[int]) -> np.ndarray:
        self._check_sample(sample)
        return self.gradient(x)

    def curvature_bounds(self) -> tuple[float, float]:
        eigs = np.linalg.eigvalsh(self.A)
        return float(eigs[-1]), float(eigs[0])
