"""Sub-sampled and sketched Newton methods with refined inner loops."""

from .data import (Dataset, SparseMatrix, parse_libsvm, serialize_libsvm,
                   spmv, spmv_t, synth_logistic)
from .diagnostics import ConvergenceReport, classify, measure_gamma, residual_check
from .linalg import SpdFactor, pcg, spd_factor, spd_solve, top_r_eig
from .objectives import ObjectiveHandle, Quadratic, RidgeLogistic
from .sketch import (RealizedSketch, SketchSpec, apply, coherence,
                     embedding_dim, leverage_scores, realize,
                     sample_size_coherent, sample_size_subnewton)
from .solvers import (IterationRecord, RunResult, SolverConfig, TolSchedule,
                      newton_drive, refine_loop)

__all__ = [
    "Dataset", "SparseMatrix", "parse_libsvm", "serialize_libsvm", "spmv",
    "spmv_t", "synth_logistic",
    "ConvergenceReport", "classify", "measure_gamma", "residual_check",
    "SpdFactor", "pcg", "spd_factor", "spd_solve", "top_r_eig",
    "ObjectiveHandle", "Quadratic", "RidgeLogistic",
    "RealizedSketch", "SketchSpec", "apply", "coherence", "embedding_dim",
    "leverage_scores", "realize", "sample_size_coherent",
    "sample_size_subnewton",
    "IterationRecord", "RunResult", "SolverConfig", "TolSchedule",
    "newton_drive", "refine_loop",
]
