"""Benchmark CLI: run solver comparisons and emit CSV traces plus a summary.

One invocation loads (or synthesizes) a dataset, builds a ridge logistic
objective, runs every requested solver for the requested number of
repetitions, and writes one CSV trace per (solver, repetition) plus a text
summary table. Reruns with the same seed produce byte-identical CSVs; real
wall-clock numbers appear in the summary, and in the CSVs only with
``--wall-clock`` (which trades away byte-reproducibility).

Exit codes: 0 success (solver numerical failures are reported, not fatal),
2 unreadable dataset or output I/O failure, 64 usage error.
"""

import argparse
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from . import data as data_mod
from . import sketch as sk
from . import solvers
from .diagnostics import classify
from .objectives import RidgeLogistic
from .rng import derive_seed
from .solvers import SolverConfig, TolSchedule, newton_drive

EX_OK = 0
EX_IOERR = 2
EX_USAGE = 64

_SHORT_NAMES = {
    "exact": solvers.EXACT_NEWTON,
    "sub": solvers.SUB_NEWTON,
    "sketch": solvers.SKETCH_NEWTON,
    "resub": solvers.RE_SUB_NEWTON,
    "resketch": solvers.RE_SKETCH_NEWTON,
    "pcg": solvers.PCG_NEWTON,
    "newsamp": solvers.NEWSAMP,
    "regsub": solvers.REG_SUB_NEWTON,
    "subgrad": solvers.SUB_HESS_GRAD,
    "sncg": solvers.SNCG,
}
_STRATEGY_ALIASES = dict(_SHORT_NAMES)
_STRATEGY_ALIASES.update({name: name for name in solvers.STRATEGIES})

_SKETCH_KINDS = {
    "gaussian": sk.GAUSSIAN,
    "uniform": sk.UNIFORM_ROWS,
    "leverage": sk.LEVERAGE_ROWS,
    "sparse": sk.SPARSE_EMBED,
}

_FLOAT_KEYS = {"eps", "eps0", "eta", "alpha", "beta", "sc"}
_INT_KEYS = {"inner", "rank", "warmup"}
_SIZE_KEYS = {"sample", "gsample"}
_ALL_KEYS = _FLOAT_KEYS | _INT_KEYS | _SIZE_KEYS | {
    "tol", "skind", "sdim", "embed", "damping"}

CSV_HEADER = "t,f,grad_norm,inner_iters,residual_norm,wall_seconds,gamma"


class UsageError(ValueError):
    """Invalid flag value; rendered as a usage error (exit 64)."""


@dataclass(frozen=True)
class SolverRequest:
    """One --solver flag: strategy plus its key=value options."""

    strategy: str
    options: dict
    raw: str


@dataclass(frozen=True)
class SynthSpec:
    n: int
    p: int
    cond: float


@dataclass(frozen=True)
class ExperimentConfig:
    data_path: Optional[str]
    synth: Optional[SynthSpec]
    lam: float
    solvers: list
    out_dir: str
    repetitions: int
    seed: int
    gtol: float
    max_outer: int
    normalize: bool
    allow_singular: bool
    wall_clock: bool


class _Parser(argparse.ArgumentParser):
    """argparse with BSD-style usage exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def _parse_kv(text: str, flag: str) -> dict:
    out = {}
    for item in text.split(","):
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"{flag}: expected key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _parse_size(value: str, flag: str):
    """A sample size: integer count, or fraction of n when in (0, 1)."""
    try:
        num = float(value)
    except ValueError:
        raise UsageError(f"{flag}: {value!r} is not a number") from None
    if 0.0 < num < 1.0:
        return num
    if num >= 1.0 and num == int(num):
        return int(num)
    raise UsageError(f"{flag}: size must be a count >= 1 or a fraction in (0,1)")


def _parse_tol(value: str, flag: str) -> TolSchedule:
    kind, sep, const = value.partition(":")
    aliases = {"adaptive": "adaptive", "const": "constant", "constant": "constant",
               "quad": "quadratic", "quadratic": "quadratic"}
    if kind not in aliases:
        raise UsageError(f"{flag}: unknown tolerance schedule {kind!r}")
    default = {"adaptive": 0.1, "constant": 1e-8, "quadratic": 1.0}[aliases[kind]]
    try:
        c = float(const) if sep else default
    except ValueError:
        raise UsageError(f"{flag}: bad schedule constant {const!r}") from None
    try:
        return TolSchedule(aliases[kind], c)
    except ValueError as exc:
        raise UsageError(f"{flag}: {exc}") from None


def parse_solver_spec(text: str) -> SolverRequest:
    """Parse one ``name:key=val,...`` solver specification."""
    name, sep, rest = text.partition(":")
    strategy = _STRATEGY_ALIASES.get(name.strip())
    if strategy is None:
        raise UsageError(f"--solver: unknown strategy {name!r}")
    options = {}
    if sep and rest:
        for key, value in _parse_kv(rest, "--solver").items():
            if key not in _ALL_KEYS:
                raise UsageError(f"--solver: unknown option {key!r}")
            if key in _FLOAT_KEYS:
                try:
                    options[key] = float(value)
                except ValueError:
                    raise UsageError(
                        f"--solver: {key} needs a number, got {value!r}") from None
            elif key in _INT_KEYS:
                try:
                    options[key] = int(value)
                except ValueError:
                    raise UsageError(
                        f"--solver: {key} needs an integer, got {value!r}") from None
            elif key in _SIZE_KEYS:
                options[key] = _parse_size(value, f"--solver {key}")
            elif key == "tol":
                options[key] = _parse_tol(value, "--solver tol")
            elif key == "skind":
                if value not in _SKETCH_KINDS:
                    raise UsageError(f"--solver: unknown sketch kind {value!r}")
                options[key] = _SKETCH_KINDS[value]
            elif key == "sdim":
                options[key] = "auto" if value == "auto" else int(value)
            elif key == "embed":
                if value not in ("direct", "scaled"):
                    raise UsageError(
                        f"--solver: embed must be direct or scaled, got {value!r}")
                options[key] = value
            elif key == "damping":
                options[key] = value.lower() in ("1", "true", "yes", "on")
    return SolverRequest(strategy=strategy, options=options, raw=text)


def parse_args(argv) -> ExperimentConfig:
    """Parse CLI flags into an :class:`ExperimentConfig`; exits 64 on misuse."""
    parser = _Parser(
        prog="subnewton-bench",
        description="Benchmark Newton-type solvers on ridge logistic regression.")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--data", metavar="PATH",
                        help="LIBSVM text file to load")
    source.add_argument("--synth", metavar="n=N,p=P,cond=C",
                        help="generate a synthetic problem instead")
    parser.add_argument("--lambda", dest="lam", type=float, default=1e-3,
                        metavar="R", help="ridge weight (default 1e-3)")
    parser.add_argument("--solver", action="append", metavar="SPEC",
                        required=True,
                        help="solver spec name:key=val,... (repeatable); names: "
                             + ", ".join(sorted(_SHORT_NAMES)))
    parser.add_argument("--gtol", type=float, default=1e-10, metavar="R",
                        help="outer gradient-norm tolerance (default 1e-10)")
    parser.add_argument("--max-outer", type=int, default=100, metavar="N",
                        help="outer iteration cap (default 100)")
    parser.add_argument("--seed", type=int, default=0, metavar="N")
    parser.add_argument("--reps", type=int, default=1, metavar="N",
                        help="repetitions per solver (default 1)")
    parser.add_argument("--out", default=".", metavar="DIR",
                        help="output directory for CSVs and summary")
    parser.add_argument("--normalize", action="store_true",
                        help="max-abs scale each feature column")
    parser.add_argument("--allow-singular", action="store_true",
                        help="permit lambda = 0 (no curvature floor)")
    parser.add_argument("--wall-clock", action="store_true",
                        help="write measured wall time into the CSVs "
                             "(breaks byte-reproducibility of reruns)")
    ns = parser.parse_args(argv)

    try:
        synth = None
        if ns.synth is not None:
            kv = _parse_kv(ns.synth, "--synth")
            extra = set(kv) - {"n", "p", "cond"}
            if extra or not {"n", "p"} <= set(kv):
                raise UsageError("--synth needs n=,p=[,cond=]")
            synth = SynthSpec(n=int(kv["n"]), p=int(kv["p"]),
                              cond=float(kv.get("cond", "10")))
            if synth.n < synth.p or synth.p < 1 or synth.cond < 1:
                raise UsageError("--synth: need n >= p >= 1 and cond >= 1")
        requests = [parse_solver_spec(s) for s in ns.solver]
        if ns.lam < 0 or (ns.lam == 0 and not ns.allow_singular):
            raise UsageError("--lambda must be positive (or pass --allow-singular)")
        if ns.reps < 1:
            raise UsageError("--reps must be >= 1")
        if ns.gtol <= 0:
            raise UsageError("--gtol must be positive")
        if ns.max_outer < 1:
            raise UsageError("--max-outer must be >= 1")
    except UsageError as exc:
        parser.error(str(exc))

    return ExperimentConfig(
        data_path=ns.data, synth=synth, lam=ns.lam, solvers=requests,
        out_dir=ns.out, repetitions=ns.reps, seed=ns.seed, gtol=ns.gtol,
        max_outer=ns.max_outer, normalize=ns.normalize,
        allow_singular=ns.allow_singular, wall_clock=ns.wall_clock)


def _build_solver_config(req: SolverRequest, cfg: ExperimentConfig,
                         obj: RidgeLogistic) -> SolverConfig:
    """Resolve a parsed solver request against the loaded problem."""
    opt = dict(req.options)
    epsilon = opt.pop("eps", 0.5)
    sketch_spec = None
    needs_sketch = req.strategy in (solvers.SKETCH_NEWTON,
                                    solvers.RE_SKETCH_NEWTON) or "skind" in opt
    if needs_sketch:
        kind = opt.pop("skind", sk.GAUSSIAN)
        sdim = opt.pop("sdim", "auto")
        c = opt.pop("sc", 1.0)
        embed = opt.pop("embed", "direct")
        if sdim == "auto":
            eps_eff = epsilon
            if embed == "scaled":
                K_hat, sigma_hat = obj.curvature_bounds()
                eps_eff = epsilon * sigma_hat / K_hat
            if kind == sk.UNIFORM_ROWS:
                raise UsageError(
                    "--solver: uniform sketch has no data-oblivious auto size; "
                    "give sdim explicitly")
            sdim = sk.embedding_dim(kind, obj.dim, eps_eff, c=c)
        sketch_spec = sk.SketchSpec(kind=kind, target_dim=int(sdim), seed=0,
                                    beta=opt.pop("beta", 1.0))
    else:
        for key in ("sdim", "sc", "embed", "beta"):
            opt.pop(key, None)

    try:
        return SolverConfig(
            strategy=req.strategy,
            sample_size=opt.get("sample"),
            sketch=sketch_spec,
            epsilon=epsilon,
            tol_schedule=opt.get("tol", solvers.DEFAULT_TOL_SCHEDULE),
            inner_max=opt.get("inner"),
            cg_eps0=opt.get("eps0", 0.05),
            grad_sample=opt.get("gsample"),
            newsamp_rank=opt.get("rank", 1),
            newsamp_eta=opt.get("eta", 1.0),
            reg_alpha=opt.get("alpha", 0.0),
            gtol=cfg.gtol,
            max_outer=cfg.max_outer,
            warmup_iters=opt.get("warmup", 0),
            damping=opt.get("damping", False),
            allow_singular=cfg.allow_singular)
    except ValueError as exc:
        raise UsageError(f"--solver {req.raw!r}: {exc}") from None


def _format_real(x: float) -> str:
    return f"{x:.17g}"


def write_trace_csv(path: Path, records, wall_clock: bool) -> None:
    """One row per outer iteration; reals at 17 significant digits.

    Without ``wall_clock`` the wall column is written as 0 so reruns are
    byte-identical; measured times live in the run summary.
    """
    lines = [CSV_HEADER]
    for r in records:
        gamma = "" if r.gamma_estimate is None else _format_real(r.gamma_estimate)
        wall = _format_real(r.wall_seconds) if wall_clock else "0"
        lines.append(",".join([
            str(r.t), _format_real(r.f), _format_real(r.grad_norm),
            str(r.inner_iters), _format_real(r.residual_norm), wall, gamma]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _classification(records) -> str:
    try:
        return classify(records, window=4).classification
    except ValueError:
        return "n/a"


def summarize(rows) -> str:
    """Fixed-width comparison table, one line per (solver, repetition)."""
    header = (f"{'run':<28} {'status':<18} {'outer':>5} {'inner':>6} "
              f"{'wall_s':>9} {'final_grad':>12} {'class':<12}")
    lines = [header, "-" * len(header)]
    for name, result in rows:
        records = result.records
        outer = len(records) - 1
        inner = sum(r.inner_iters for r in records)
        wall = records[-1].wall_seconds
        lines.append(
            f"{name:<28} {result.termination:<18} {outer:>5} {inner:>6} "
            f"{wall:>9.3f} {records[-1].grad_norm:>12.3e} "
            f"{_classification(records):<12}")
    return "\n".join(lines)


def run_experiment(cfg: ExperimentConfig) -> int:
    """Execute the experiment; returns the process exit code."""
    try:
        if cfg.data_path is not None:
            with open(cfg.data_path, "r", encoding="utf-8") as fh:
                dataset = data_mod.parse_libsvm(fh)
        else:
            dataset = data_mod.synth_logistic(cfg.synth.n, cfg.synth.p,
                                              cfg.synth.cond, seed=cfg.seed)
    except (OSError, data_mod.LibsvmParseError, data_mod.DimensionError) as exc:
        print(f"error: cannot load dataset: {exc}", file=sys.stderr)
        return EX_IOERR

    if cfg.normalize:
        dataset = data_mod.max_abs_scale(dataset)
    objective = RidgeLogistic(dataset, cfg.lam)

    out_dir = Path(cfg.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return EX_IOERR

    rows = []
    try:
        for i, req in enumerate(cfg.solvers):
            try:
                base = _build_solver_config(req, cfg, objective)
            except UsageError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EX_USAGE
            for rep in range(cfg.repetitions):
                run_cfg = replace(base, seed=derive_seed(cfg.seed, i, rep))
                try:
                    result = newton_drive(objective, run_cfg)
                except ValueError as exc:
                    print(f"error: --solver {req.raw!r}: {exc}",
                          file=sys.stderr)
                    return EX_USAGE
                name = f"{i:02d}_{req.strategy}_rep{rep}"
                write_trace_csv(out_dir / f"{name}.csv", result.records,
                                cfg.wall_clock)
                rows.append((name, result))
        table = summarize(rows)
        (out_dir / "summary.txt").write_text(table + "\n", encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot write results: {exc}", file=sys.stderr)
        return EX_IOERR
    print(table)
    return EX_OK


def main(argv=None) -> int:
    cfg = parse_args(argv if argv is not None else sys.argv[1:])
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
