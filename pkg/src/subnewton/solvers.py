"""Newton-type outer loop and its direction-finding strategies.

One driver handles every variant: exact Newton, sub-sampled and sketched
Hessians, both refined variants (iterative refinement of the direction until
the true-Hessian residual passes a tolerance schedule), preconditioned
Newton-CG, spectrally truncated and regularized sub-sampling, CG on the
sub-sampled system, and sub-sampled gradients. All variants take unit steps
and share one termination rule and one trace format.

The refinement inner loop is the Richardson iteration

    p <- p - H^{-1} (hessian(x) p - grad)

which contracts the error whenever the approximate Hessian H and the true
one are spectrally within a factor (1 +- eps) of each other; each sweep
costs one Hessian-vector product and one pair of triangular solves.
"""

import math
import time
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from . import sketch as sk
from .diagnostics import measure_gamma, residual_check
from .linalg import (EigenConvergenceError, NegativeCurvatureError,
                     NotSpdError, SpdFactor, pcg, spd_factor, spd_solve,
                     top_r_eig)
from .objectives import ObjectiveHandle
from .rng import stream
from .sketch import RankError, SketchSpec

EXACT_NEWTON = "exact_newton"
SUB_NEWTON = "sub_newton"
SKETCH_NEWTON = "sketch_newton"
RE_SUB_NEWTON = "re_sub_newton"
RE_SKETCH_NEWTON = "re_sketch_newton"
PCG_NEWTON = "pcg_newton"
NEWSAMP = "newsamp"
REG_SUB_NEWTON = "reg_sub_newton"
SUB_HESS_GRAD = "sub_hess_grad"
SNCG = "sncg"

STRATEGIES = (EXACT_NEWTON, SUB_NEWTON, SKETCH_NEWTON, RE_SUB_NEWTON,
              RE_SKETCH_NEWTON, PCG_NEWTON, NEWSAMP, REG_SUB_NEWTON,
              SUB_HESS_GRAD, SNCG)

_SAMPLE_STRATEGIES = {SUB_NEWTON, RE_SUB_NEWTON, NEWSAMP, REG_SUB_NEWTON,
                      SUB_HESS_GRAD, SNCG}
_SKETCH_STRATEGIES = {SKETCH_NEWTON, RE_SKETCH_NEWTON}

GTOL_REACHED = "gtol_reached"
MAX_OUTER = "max_outer"
NUMERICAL_FAILURE = "numerical_failure"

_GAMMA_MAX_DIM = 500
_INNER_HARD_CAP = 200


class RefinementDivergenceError(np.linalg.LinAlgError):
    """Refinement residual rose three sweeps in a row.

    Signals that the approximate Hessian is not spectrally within a factor
    two of the true one, so the Richardson sweep cannot contract.
    """


class CgStagnationError(np.linalg.LinAlgError):
    """CG failed to reach its forcing tolerance within the iteration budget."""


@dataclass(frozen=True)
class TolSchedule:
    """Inner-loop tolerance as a function of the current gradient norm.

    kinds: ``constant`` (tol = value); ``adaptive`` (tol = min(value,
    sqrt(g)) * g, which forces the residual-to-gradient ratio to zero and
    with it a superlinear outer rate); ``quadratic`` (tol = value * g^2,
    the quadratic-rate regime).
    """

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("constant", "adaptive", "quadratic"):
            raise ValueError(f"unknown tolerance schedule {self.kind!r}")
        if self.value <= 0:
            raise ValueError("schedule constant must be positive")

    def tol(self, grad_norm: float) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "adaptive":
            return min(self.value, math.sqrt(grad_norm)) * grad_norm
        return self.value * grad_norm**2


DEFAULT_TOL_SCHEDULE = TolSchedule("adaptive", 0.1)


@dataclass(frozen=True)
class SolverConfig:
    """Strategy selection plus every tolerance, size, and schedule.

    ``sample_size`` and ``grad_sample`` may be absolute counts or fractions
    of n in (0, 1). A resolved size of n (or more) means every index is taken
    exactly once, which makes the sub-sampled Hessian exact.
    """

    strategy: str
    sample_size: Optional[Union[int, float]] = None
    sketch: Optional[SketchSpec] = None
    epsilon: float = 0.5
    tol_schedule: TolSchedule = DEFAULT_TOL_SCHEDULE
    inner_max: Optional[int] = None
    cg_eps0: float = 0.05
    grad_sample: Optional[Union[int, float]] = None
    newsamp_rank: int = 1
    newsamp_eta: float = 1.0
    reg_alpha: float = 0.0
    gtol: float = 1e-10
    max_outer: int = 100
    seed: int = 0
    warmup_iters: int = 0
    damping: bool = False
    allow_singular: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy in _SAMPLE_STRATEGIES and self.sample_size is None:
            raise ValueError(f"{self.strategy} needs sample_size")
        if self.strategy in _SKETCH_STRATEGIES and self.sketch is None:
            raise ValueError(f"{self.strategy} needs a sketch spec")
        if self.strategy == PCG_NEWTON and self.sample_size is None \
                and self.sketch is None:
            raise ValueError("pcg_newton needs sample_size or a sketch spec")
        if self.strategy == SUB_HESS_GRAD and self.grad_sample is None:
            raise ValueError("sub_hess_grad needs grad_sample")
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError("epsilon must be in (0, 1)")
        if self.strategy == SNCG and not (0.0 < self.cg_eps0 < 1.0):
            raise ValueError("cg_eps0 must be in (0, 1)")
        if self.strategy == NEWSAMP:
            if self.newsamp_rank < 1:
                raise ValueError("newsamp_rank must be >= 1")
            if self.newsamp_eta <= 0:
                raise ValueError("newsamp_eta must be positive")
        if self.reg_alpha < 0:
            raise ValueError("reg_alpha must be nonnegative")
        if self.gtol <= 0 or self.max_outer < 1:
            raise ValueError("need gtol > 0 and max_outer >= 1")
        if self.warmup_iters < 0:
            raise ValueError("warmup_iters must be nonnegative")


@dataclass(frozen=True)
class IterationRecord:
    """One row of the per-iteration trace (the CSV row)."""

    t: int
    f: float
    grad_norm: float
    inner_iters: int
    residual_norm: float
    direction_norm: float
    wall_seconds: float
    gamma_estimate: Optional[float] = None


@dataclass(frozen=True)
class RunResult:
    x: np.ndarray
    records: list
    termination: str

    @property
    def grad_norms(self) -> np.ndarray:
        return np.array([r.grad_norm for r in self.records])


class RefineResult(NamedTuple):
    direction: np.ndarray
    residual_norm: float
    iterations: int


class DirectionInfo(NamedTuple):
    """What a strategy hands back to the driver.

    ``residual_norm`` is None when the strategy has no inner loop (the driver
    then measures the true-Hessian residual itself). ``h_matrix`` is the
    approximate Hessian when one was materialized, for forcing-term
    diagnostics.
    """

    direction: np.ndarray
    inner_iters: int
    residual_norm: Optional[float]
    h_matrix: Optional[np.ndarray]


def resolve_sample_size(size: Union[int, float], n: int) -> int:
    """Turn a count or fraction-of-n into a concrete sample size."""
    if isinstance(size, float) and 0.0 < size < 1.0:
        return max(1, math.ceil(size * n))
    count = int(size)
    if count < 1:
        raise ValueError(f"sample size {size!r} resolves to less than 1")
    return count


def draw_sample(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    """Uniform with-replacement sample; a size of n or more takes every index once."""
    if size >= n:
        return np.arange(n)
    return rng.integers(0, n, size=size)


def refine_sweep_bound(K: float, sigma: float, grad_norm: float, tol: float,
                       epsilon: float) -> int:
    """Worst-case refinement sweep count ceil(log(K g / (sigma tol)) / log(1/eps))."""
    arg = K * grad_norm / (sigma * tol)
    if arg <= 1.0:
        return 0
    return math.ceil(math.log(arg) / math.log(1.0 / epsilon))


def gradient_sample_size(G: float, eps0: float) -> int:
    """Sample size G^2 / eps0^2 for a relative-error eps0 sub-sampled gradient.

    ``G`` bounds the per-term gradient norms.
    """
    return math.ceil((G / eps0) ** 2)


def _auto_inner_max(obj: ObjectiveHandle, grad_norm: float, tol: float,
                    epsilon: float) -> int:
    """Default inner budget: the worst-case bound plus slack, hard-capped."""
    try:
        K, sigma = obj.curvature_bounds()
    except NotImplementedError:
        return _INNER_HARD_CAP
    if sigma <= 0 or tol <= 0 or grad_norm <= 0:
        return _INNER_HARD_CAP
    bound = refine_sweep_bound(K, sigma, grad_norm, tol, epsilon)
    return min(bound + 5, _INNER_HARD_CAP)


def refine_loop(obj: ObjectiveHandle, x: np.ndarray, grad: np.ndarray,
                h_factor: SpdFactor, tol: float, inner_max: int) -> RefineResult:
    """Refine H^{-1} grad until the true-Hessian residual passes ``tol``.

    Starts from the plain solve and applies Richardson sweeps
    ``p <- p - H^{-1} (hessian(x) p - grad)``; every Hessian application goes
    through ``hessian_vec`` (the Hessian is never materialized). Stops at
    ``tol`` or after ``inner_max`` sweeps, whichever first; the returned
    residual tells which. Three consecutive residual increases raise
    :class:`RefinementDivergenceError`.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    p = spd_solve(h_factor, grad)
    r = obj.hessian_vec(x, p) - grad
    rnorm = float(np.linalg.norm(r))
    iterations = 0
    rises = 0
    while rnorm > tol and iterations < inner_max:
        p = p - spd_solve(h_factor, r)
        r = obj.hessian_vec(x, p) - grad
        new_norm = float(np.linalg.norm(r))
        iterations += 1
        rises = rises + 1 if new_norm > rnorm else 0
        rnorm = new_norm
        if rises >= 3:
            raise RefinementDivergenceError(
                f"residual rose 3 consecutive sweeps (now {rnorm:.3e})")
    return RefineResult(p, rnorm, iterations)


def _subsampled_hessian(obj, x, cfg, rng):
    size = resolve_sample_size(cfg.sample_size, obj.n_terms)
    sample = draw_sample(rng, obj.n_terms, size)
    return obj.sub_hessian(x, sample), sample


def _sketched_hessian(obj, x, cfg, rng):
    """Gram matrix of the sketched factor, plus the exact ridge term."""
    n = obj.n_terms
    spec = replace(cfg.sketch, seed=int(rng.integers(1 << 63)))
    if spec.kind == sk.UNIFORM_ROWS:
        realized = sk.realize(spec, n)
        SB = realized.scales[:, None] * obj.factor_rows(x, realized.rows)
    else:
        B = obj.factor_rows(x, np.arange(n))
        scores = sk.leverage_scores(B) if spec.kind == sk.LEVERAGE_ROWS else None
        realized = sk.realize(spec, n, scores=scores)
        SB = sk.apply(realized, B)
    H = SB.T @ SB + obj.ridge * np.eye(obj.dim)
    return 0.5 * (H + H.T)


def dir_exact_newton(obj, x, grad, cfg, rng) -> DirectionInfo:
    H = obj.explicit_hessian(x)
    p = spd_solve(spd_factor(H), grad)
    return DirectionInfo(p, 0, None, H)


def dir_sub_newton(obj, x, grad, cfg, rng) -> DirectionInfo:
    """Plain sub-sampled Newton step H^{-1} grad."""
    H, _ = _subsampled_hessian(obj, x, cfg, rng)
    p = spd_solve(spd_factor(H), grad)
    return DirectionInfo(p, 0, None, H)


def dir_sketch_newton(obj, x, grad, cfg, rng) -> DirectionInfo:
    """Plain sketched Newton step on the factored Hessian."""
    H = _sketched_hessian(obj, x, cfg, rng)
    p = spd_solve(spd_factor(H), grad)
    return DirectionInfo(p, 0, None, H)


def _refined_direction(obj, x, grad, cfg, rng, build) -> DirectionInfo:
    """Shared body of the refined strategies: build H, solve, refine.

    On refinement divergence the approximate Hessian is rebuilt once from a
    fresh stream before the error propagates.
    """
    gnorm = float(np.linalg.norm(grad))
    tol = cfg.tol_schedule.tol(gnorm)
    inner_max = cfg.inner_max if cfg.inner_max is not None else \
        _auto_inner_max(obj, gnorm, tol, cfg.epsilon)
    H = build(rng)
    try:
        result = refine_loop(obj, x, grad, spd_factor(H), tol, inner_max)
    except RefinementDivergenceError:
        H = build(rng.spawn(1)[0])
        result = refine_loop(obj, x, grad, spd_factor(H), tol, inner_max)
    return DirectionInfo(result.direction, result.iterations,
                         result.residual_norm, H)


def dir_re_sub_newton(obj, x, grad, cfg, rng) -> DirectionInfo:
    """Sub-sampled Newton with the refinement inner loop."""
    return _refined_direction(
        obj, x, grad, cfg, rng,
        lambda r: _subsampled_hessian(obj, x, cfg, r)[0])


def dir_re_sketch_newton(obj, x, grad, cfg, rng) -> DirectionInfo:
    """Sketched Newton with the refinement inner loop."""
    return _refined_direction(
        obj, x, grad, cfg, rng,
        lambda r: _sketched_hessian(obj, x, cfg, r))


def dir_pcg_newton(obj, x, grad, cfg, rng) -> DirectionInfo:
    """Newton-CG on the true Hessian, preconditioned by the approximate one.

    The preconditioner is the sub-sampled Hessian, or the sketched one when a
    sketch spec is configured; CG runs until the true-Hessian residual passes
    the tolerance schedule.
    """
    gnorm = float(np.linalg.norm(grad))
    tol = cfg.tol_schedule.tol(gnorm)
    inner_max = cfg.inner_max if cfg.inner_max is not None else max(
        _auto_inner_max(obj, gnorm, tol, cfg.epsilon), 2 * obj.dim)
    if cfg.sketch is not None:
        H = _sketched_hessian(obj, x, cfg, rng)
    else:
        H, _ = _subsampled_hessian(obj, x, cfg, rng)
    factor = spd_factor(H)
    result = pcg(lambda v: obj.hessian_vec(x, v), grad,
                 lambda r: spd_solve(factor, r), tol_abs=tol,
                 max_iter=inner_max)
    return DirectionInfo(result.solution, result.iterations,
                         result.residual_norm, H)


def newsamp_modified_hessian(h_sample: np.ndarray, rank: int,
                             eta: float) -> np.ndarray:
    """Flatten the spectral tail of a sampled Hessian at eigenvalue rank+1.

    Returns (U_r (L_r - l_{r+1} I) U_r^T + l_{r+1} I) / eta, the conditioned
    curvature model used by the truncated-spectrum strategy.
    """
    vals, U = top_r_eig(h_sample, rank)
    tail = vals[rank]
    if tail <= 0:
        raise RankError(f"eigenvalue {rank + 1} is {tail:.3e}, not positive")
    p = h_sample.shape[0]
    H = (U * (vals[:rank] - tail)) @ U.T + tail * np.eye(p)
    return 0.5 * (H + H.T) / eta


def newsamp_apply_inverse(h_sample: np.ndarray, rank: int, eta: float,
                          g: np.ndarray) -> np.ndarray:
    """Apply the inverse of the tail-flattened Hessian via its low-rank form.

    Uses eta * (g / l_{r+1} + U_r (L_r^{-1} - I/l_{r+1}) U_r^T g); no dense
    solve.
    """
    vals, U = top_r_eig(h_sample, rank)
    tail = vals[rank]
    if tail <= 0:
        raise RankError(f"eigenvalue {rank + 1} is {tail:.3e}, not positive")
    coeffs = 1.0 / vals[:rank] - 1.0 / tail
    return eta * (g / tail + U @ (coeffs * (U.T @ g)))


def dir_newsamp(obj, x, grad, cfg, rng) -> DirectionInfo:
    """Sub-sampled Hessian with its spectral tail flattened at rank r+1."""
    if cfg.newsamp_rank + 1 > obj.dim:
        raise ValueError("newsamp_rank + 1 must not exceed the dimension")
    h_sample, _ = _subsampled_hessian(obj, x, cfg, rng)
    p = newsamp_apply_inverse(h_sample, cfg.newsamp_rank, cfg.newsamp_eta, grad)
    H = newsamp_modified_hessian(h_sample, cfg.newsamp_rank, cfg.newsamp_eta)
    return DirectionInfo(p, 0, None, H)


def dir_reg_sub_newton(obj, x, grad, cfg, rng) -> DirectionInfo:
    """Sub-sampled Hessian plus an alpha * I conditioning shift."""
    H, _ = _subsampled_hessian(obj, x, cfg, rng)
    H = H + cfg.reg_alpha * np.eye(obj.dim)
    p = spd_solve(spd_factor(H), grad)
    return DirectionInfo(p, 0, None, H)


def dir_sncg(obj, x, grad, cfg, rng) -> DirectionInfo:
    """CG on the sub-sampled system until ||H p - grad|| <= eps0 ||grad||.

    The sampled Hessian is applied as an operator and never factored.
    """
    H, _ = _subsampled_hessian(obj, x, cfg, rng)
    gnorm = float(np.linalg.norm(grad))
    inner_max = cfg.inner_max if cfg.inner_max is not None \
        else 4 * obj.dim + 50
    result = pcg(lambda v: H @ v, grad, lambda r: r,
                 tol_abs=cfg.cg_eps0 * gnorm, max_iter=inner_max)
    if result.residual_norm > cfg.cg_eps0 * gnorm:
        raise CgStagnationError(
            f"CG stalled at residual {result.residual_norm:.3e} after "
            f"{result.iterations} iterations")
    return DirectionInfo(result.solution, result.iterations,
                         result.residual_norm, H)


def dir_sub_hess_grad(obj, x, grad, cfg, rng) -> DirectionInfo:
    """Both Hessian and gradient sub-sampled, on independent streams.

    ``grad`` (the full gradient) is only used by the caller for termination
    and tracing; the step is H^{-1} g with g the sampled gradient.
    """
    grad_rng = rng.spawn(1)[0]
    H, _ = _subsampled_hessian(obj, x, cfg, rng)
    g_size = resolve_sample_size(cfg.grad_sample, obj.n_terms)
    g_sample = draw_sample(grad_rng, obj.n_terms, g_size)
    g = obj.per_term_gradient(x, g_sample)
    p = spd_solve(spd_factor(H), g)
    return DirectionInfo(p, 0, None, H)


_DISPATCH: dict[str, Callable] = {
    EXACT_NEWTON: dir_exact_newton,
    SUB_NEWTON: dir_sub_newton,
    SKETCH_NEWTON: dir_sketch_newton,
    RE_SUB_NEWTON: dir_re_sub_newton,
    RE_SKETCH_NEWTON: dir_re_sketch_newton,
    PCG_NEWTON: dir_pcg_newton,
    NEWSAMP: dir_newsamp,
    REG_SUB_NEWTON: dir_reg_sub_newton,
    SUB_HESS_GRAD: dir_sub_hess_grad,
    SNCG: dir_sncg,
}

_FAILURE_ERRORS = (NotSpdError, NegativeCurvatureError,
                   RefinementDivergenceError, CgStagnationError, RankError,
                   EigenConvergenceError)


def _damped_step(obj, x, grad, p, max_halvings: int = 30) -> np.ndarray:
    """Armijo backtracking on the objective value (global-phase option)."""
    f0 = obj.value(x)
    slope = float(grad @ p)
    step = 1.0
    for _ in range(max_halvings):
        if obj.value(x - step * p) <= f0 - 1e-4 * step * slope:
            break
        step *= 0.5
    return x - step * p


def newton_drive(obj: ObjectiveHandle, cfg: SolverConfig,
                 x0: Optional[np.ndarray] = None) -> RunResult:
    """Run the configured Newton variant until ||grad|| <= gtol or max_outer.

    The update is x <- x - p with unit step (damping is opt-in and off by
    default). One record is appended per outer iteration, including the
    terminal one; direction-strategy failures terminate the run with the
    partial trace and a ``numerical_failure`` marker. Deterministic given
    (obj, cfg, x0): iteration t draws from the Philox stream (cfg.seed, t).
    """
    _, sigma = obj.curvature_bounds()
    if sigma <= 0 and not cfg.allow_singular:
        raise ValueError(
            "objective has no positive curvature floor (e.g. ridge weight 0); "
            "pass allow_singular to override")
    direction_fn = _DISPATCH[cfg.strategy]
    x = np.zeros(obj.dim) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    records = []
    termination = MAX_OUTER
    start = time.perf_counter()

    for t in range(cfg.max_outer + 1):
        f = obj.value(x)
        grad = obj.gradient(x)
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= cfg.gtol or t == cfg.max_outer:
            records.append(IterationRecord(
                t=t, f=f, grad_norm=gnorm, inner_iters=0, residual_norm=0.0,
                direction_norm=0.0,
                wall_seconds=time.perf_counter() - start))
            termination = GTOL_REACHED if gnorm <= cfg.gtol else MAX_OUTER
            break

        strategy_fn = direction_fn
        if cfg.warmup_iters and t < cfg.warmup_iters \
                and cfg.strategy in (RE_SUB_NEWTON, RE_SKETCH_NEWTON) \
                and cfg.sample_size is not None:
            strategy_fn = dir_sncg

        rng = stream(cfg.seed, t)
        try:
            info = strategy_fn(obj, x, grad, cfg, rng)
        except _FAILURE_ERRORS:
            records.append(IterationRecord(
                t=t, f=f, grad_norm=gnorm, inner_iters=0, residual_norm=gnorm,
                direction_norm=0.0,
                wall_seconds=time.perf_counter() - start))
            termination = NUMERICAL_FAILURE
            break

        residual = info.residual_norm
        if residual is None:
            residual = residual_check(obj, x, info.direction, grad)
        gamma = None
        if info.h_matrix is not None and obj.dim <= _GAMMA_MAX_DIM:
            gamma = measure_gamma(obj, x, info.h_matrix)
        records.append(IterationRecord(
            t=t, f=f, grad_norm=gnorm, inner_iters=info.inner_iters,
            residual_norm=residual,
            direction_norm=float(np.linalg.norm(info.direction)),
            wall_seconds=time.perf_counter() - start, gamma_estimate=gamma))

        if cfg.damping:
            x = _damped_step(obj, x, grad, info.direction)
        else:
            x = x - info.direction

    return RunResult(x=x, records=records, termination=termination)
