"""Dense kernels: SPD factor/solve, preconditioned CG, truncated eigenpairs.

The CG here is the standard preconditioned form (alpha_i = r_i.T y_i /
d_i.T A d_i, solution accumulated and returned once the residual passes the
absolute tolerance). Tolerances are absolute on the residual norm throughout,
mirroring the solvers' inner-loop tests.
"""

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg

from .data import DimensionError
from .rng import stream

_EIG_DENSE_MAX_DIM = 500


class NotSpdError(np.linalg.LinAlgError):
    """Matrix is not positive definite, even after jitter escalation."""


class NegativeCurvatureError(np.linalg.LinAlgError):
    """CG met a direction of nonpositive curvature (operator is not SPD)."""


class EigenConvergenceError(np.linalg.LinAlgError):
    """Iterative eigensolver failed to converge within its restart budget."""


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky triangle of H + jitter_applied * I."""

    dim: int
    lower: np.ndarray
    jitter_applied: float

    def solve(self, b: np.ndarray) -> np.ndarray:
        return spd_solve(self, b)


def spd_factor(H: np.ndarray, max_jitter_retries: int = 3) -> SpdFactor:
    """Cholesky-factor a symmetric positive definite matrix.

    On a failed pivot, retries with jitter 1e-12 * trace(H)/p added to the
    diagonal, escalating tenfold up to ``max_jitter_retries`` times before
    raising :class:`NotSpdError`. Any applied jitter is recorded on the
    factor.
    """
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionError("H must be square")
    scale = max(abs(H).max(initial=0.0), 1.0)
    if not np.allclose(H, H.T, rtol=0, atol=1e-8 * scale):
        raise ValueError("H must be symmetric")
    p = H.shape[0]
    base = 1e-12 * np.trace(H) / p
    jitter = 0.0
    for attempt in range(max_jitter_retries + 1):
        try:
            lower = np.linalg.cholesky(H if jitter == 0.0
                                       else H + jitter * np.eye(p))
            return SpdFactor(dim=p, lower=lower, jitter_applied=jitter)
        except np.linalg.LinAlgError:
            jitter = base * 10.0**attempt
            if jitter <= 0.0:
                break
    raise NotSpdError("matrix is not positive definite after jitter escalation")


def spd_solve(factor: SpdFactor, b: np.ndarray) -> np.ndarray:
    """Solve H x = b via the two triangular solves; never forms the inverse."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (factor.dim,):
        raise DimensionError(f"b has shape {b.shape}, expected ({factor.dim},)")
    return scipy.linalg.cho_solve((factor.lower, True), b)


class PcgResult(NamedTuple):
    solution: np.ndarray
    residual_norm: float
    iterations: int


def pcg(apply_a: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
        precond_solve: Callable[[np.ndarray], np.ndarray], tol_abs: float,
        max_iter: int) -> PcgResult:
    """Preconditioned conjugate gradient on an SPD operator.

    Iterates from zero until ``||A z - b|| <= tol_abs`` or ``max_iter``;
    returns the accumulated solution either way (the caller can compare the
    returned residual against the tolerance). A step with nonpositive or
    non-finite curvature d.T A d raises :class:`NegativeCurvatureError`.
    """
    b = np.asarray(b, dtype=np.float64)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side contains non-finite entries")
    z = np.zeros_like(b)
    r = b.copy()
    rnorm = float(np.linalg.norm(r))
    if rnorm <= tol_abs:
        return PcgResult(z, rnorm, 0)
    y = precond_solve(r)
    d = y.copy()
    rho = float(r @ y)
    for i in range(1, max_iter + 1):
        q = apply_a(d)
        curvature = float(d @ q)
        if not np.isfinite(curvature) or curvature <= 0.0:
            raise NegativeCurvatureError(
                f"curvature d.T A d = {curvature:.3e} at iteration {i}")
        alpha = rho / curvature
        z += alpha * d
        r -= alpha * q
        rnorm = float(np.linalg.norm(r))
        if rnorm <= tol_abs:
            return PcgResult(z, rnorm, i)
        y = precond_solve(r)
        rho_new = float(r @ y)
        d = y + (rho_new / rho) * d
        rho = rho_new
    return PcgResult(z, rnorm, max_iter)


def _lanczos_top_eig(H: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k eigenpairs by Lanczos with full reorthogonalization.

    Grows the Krylov budget over a few restarts until the top-k residuals
    ``||H u - lambda u||`` pass 1e-8 * lambda_1.
    """
    p = H.shape[0]
    rng = stream(0x1A2C05)
    budget = min(p, max(4 * k, 40))
    for _ in range(4):
        Q = np.zeros((p, budget))
        alphas = np.zeros(budget)
        betas = np.zeros(budget - 1)
        q = rng.standard_normal(p)
        q /= np.linalg.norm(q)
        Q[:, 0] = q
        for j in range(budget):
            u = H @ Q[:, j]
            alphas[j] = Q[:, j] @ u
            u -= alphas[j] * Q[:, j]
            if j > 0:
                u -= betas[j - 1] * Q[:, j - 1]
            # full reorthogonalization against all previous Lanczos vectors
            u -= Q[:, :j + 1] @ (Q[:, :j + 1].T @ u)
            if j + 1 < budget:
                beta = np.linalg.norm(u)
                if beta < 1e-14:
                    budget = j + 1
                    Q = Q[:, :budget]
                    alphas = alphas[:budget]
                    betas = betas[:budget - 1]
                    break
                betas[j] = beta
                Q[:, j + 1] = u / beta
        T = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
        tvals, tvecs = np.linalg.eigh(T)
        if len(tvals) < k:
            raise EigenConvergenceError(
                f"Krylov space exhausted with {len(tvals)} < {k} eigenpairs")
        order = np.argsort(tvals)[::-1][:k]
        vals = tvals[order]
        vecs = Q @ tvecs[:, order]
        residuals = np.linalg.norm(H @ vecs - vecs * vals, axis=0)
        if np.all(residuals <= 1e-8 * max(abs(vals[0]), 1e-300)):
            return vals, vecs
        if budget >= p:
            break
        budget = min(p, budget * 2)
    raise EigenConvergenceError("Lanczos failed to converge within restarts")


def top_r_eig(H: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Top r+1 eigenvalues (descending) and the leading r eigenvectors.

    Uses a full symmetric eigendecomposition for dimensions up to 500 and
    Lanczos with full reorthogonalization above.
    """
    H = np.asarray(H, dtype=np.float64)
    p = H.shape[0]
    if H.ndim != 2 or H.shape[1] != p:
        raise DimensionError("H must be square")
    if r + 1 > p:
        raise ValueError(f"need r+1 <= p, got r={r}, p={p}")
    if p <= _EIG_DENSE_MAX_DIM:
        vals, vecs = np.linalg.eigh(H)
        vals = vals[::-1][:r + 1]
        vecs = vecs[:, ::-1][:, :r]
        return vals.copy(), vecs.copy()
    vals, vecs = _lanczos_top_eig(H, r + 1)
    return vals, vecs[:, :r]
