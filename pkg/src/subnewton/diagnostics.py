"""Post-hoc convergence analysis.

Classifies a gradient-norm trace as linear / superlinear / quadratic, and
measures the forcing term gamma = ||(hessian - H) H^{-1}|| of an approximate
Hessian. Gradient norms stand in for the (unobservable) Hessian-weighted
distance to the optimum; on quadratics the two coincide exactly, which is
what the classifier tests pin.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import spd_factor, spd_solve
from .objectives import ObjectiveHandle
from .rng import stream

# classification thresholds; pragmatic heuristics, not theory constants
_QUAD_SPREAD = 10.0
_QUAD_FINAL_RHO = 1e-2
_SUPERLINEAR_FINAL_RHO = 0.1
_LINEAR_BAND = 0.2

_USABLE_FLOOR_FACTOR = 100.0


@dataclass(frozen=True)
class ConvergenceReport:
    """Per-step ratios and the resulting classification.

    ``rhos[t] = g[t+1]/g[t]`` and ``qs[t] = g[t+1]/g[t]^2`` over the usable
    prefix of the trace (gradient norms above 100 * eps * g0).
    """

    rhos: np.ndarray
    qs: np.ndarray
    classification: str
    window: int


def usable_grad_norms(grad_norms: Sequence[float]) -> np.ndarray:
    """Leading run of gradient norms above the floating-point noise floor."""
    g = np.asarray(grad_norms, dtype=np.float64)
    if len(g) == 0:
        return g
    floor = _USABLE_FLOOR_FACTOR * np.finfo(np.float64).eps * g[0]
    keep = len(g)
    for i, gi in enumerate(g):
        if gi <= floor:
            keep = i
            break
    return g[:keep]


def classify(records, window: int) -> ConvergenceReport:
    """Classify the convergence order of an iteration trace.

    ``records`` is a sequence of iteration records (anything with a
    ``grad_norm`` attribute) or raw gradient norms. The tail of ``window``
    ratios decides:

    - quadratic: q-ratios flat (max <= 10x median) and final rho below 1e-2;
    - superlinear: rho strictly decreasing with final rho below 0.1;
    - linear: rho within +-20% of its median, which is below 1;
    - inconclusive otherwise.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    norms = [r.grad_norm if hasattr(r, "grad_norm") else float(r)
             for r in records]
    g = usable_grad_norms(norms)
    if len(g) < window + 1:
        raise ValueError(
            f"need at least {window + 1} usable records, have {len(g)}")
    rhos = g[1:] / g[:-1]
    qs = g[1:] / g[:-1] ** 2
    tail_r = rhos[-window:]
    tail_q = qs[-window:]

    classification = "inconclusive"
    med_q = float(np.median(tail_q))
    med_r = float(np.median(tail_r))
    if tail_q.max() <= _QUAD_SPREAD * med_q and tail_r[-1] < _QUAD_FINAL_RHO:
        classification = "quadratic"
    elif np.all(np.diff(tail_r) < 0) and tail_r[-1] < _SUPERLINEAR_FINAL_RHO:
        classification = "superlinear"
    elif med_r < 1.0 and np.all(np.abs(tail_r - med_r) <= _LINEAR_BAND * med_r):
        classification = "linear"
    return ConvergenceReport(rhos=rhos, qs=qs, classification=classification,
                             window=window)


def measure_gamma(obj: ObjectiveHandle, x: np.ndarray, H: np.ndarray) -> float:
    """Forcing term ||(hessian(x) - H) H^{-1}|| by power iteration.

    Runs 100 power steps on the nonsymmetric product from two random starts
    and returns the larger estimate. Requires the dimension to be small
    enough to materialize the exact Hessian.
    """
    H = np.asarray(H, dtype=np.float64)
    D = obj.explicit_hessian(x) - H
    factor = spd_factor(H)

    def apply_m(v):
        return D @ spd_solve(factor, v)

    def apply_mt(v):
        return spd_solve(factor, D @ v)

    best = 0.0
    for restart in range(2):
        rng = stream(0xD1A6, restart)
        v = rng.standard_normal(obj.dim)
        v /= np.linalg.norm(v)
        for _ in range(100):
            w = apply_mt(apply_m(v))
            norm = np.linalg.norm(w)
            if norm < 1e-300:
                break
            v = w / norm
        best = max(best, float(np.linalg.norm(apply_m(v))))
    return best


def residual_check(obj: ObjectiveHandle, x: np.ndarray, p: np.ndarray,
                   grad: np.ndarray) -> float:
    """Inexact-Newton residual norm ||hessian(x) p - grad||."""
    return float(np.linalg.norm(obj.hessian_vec(x, p) - np.asarray(grad)))
