"""Monte Carlo experiment harness: strong convergence, stability traces, reports.

Strong error at the endpoint t_N is estimated as

    eps(scheme, h) = (1/M) sum_i | y_N^{(i)}(scheme, h) - y_ref^{(i)} |

where the reference endpoint of path i is the split-step scheme run at a fine
dyadic stepsize on the *same* Brownian path (coarse increments are exact
partial sums of the fine ones).  Path i of a run is always driven by the
stream seeded with (master_seed, i), so results are independent of how the
ensemble is chunked across workers; sample means reduce a single path-ordered
array, which keeps reports byte-identical for every worker count.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import __version__
from .errors import ConfigError, NotApplicableError
from .paths import coarsen_array, exact_steps, generate, path_seed
from .problem import SddeProblem, get_preset
from .stepper import (
    DEFAULT_BLOWUP_THRESHOLD,
    SCHEMES,
    SolverConfig,
    TrajectoryResult,
    run_ensemble,
)

__all__ = [
    "ConvergenceConfig",
    "StabilityTraceConfig",
    "RowStat",
    "ExperimentReport",
    "TraceResult",
    "Table1Result",
    "strong_error",
    "fit_order",
    "ms_trace",
    "empirical_rate",
    "table1",
    "TABLE1_STEPSIZES",
    "format_float",
    "report_csv_text",
    "table1_csv_text",
    "trace_csv_text",
    "trajectory_csv_text",
    "sidecar_text",
]

TABLE1_STEPSIZES = (2.0**-3, 2.0**-4, 2.0**-5, 2.0**-6, 2.0**-7)
TABLE1_SCHEMES = ("em", "ssbe-legacy", "ssbe")
TABLE1_PROBLEMS = ("example2", "example3")


def _resolve_problem(problem, horizon: float) -> SddeProblem:
    if isinstance(problem, SddeProblem):
        return problem
    return get_preset(problem, horizon=horizon)


def _problem_label(problem) -> str:
    if isinstance(problem, SddeProblem):
        return problem.name or "<custom>"
    return str(problem)


def _power_of_two_factor(h: float, reference_h: float) -> int:
    ratio = h / reference_h
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9 * max(1.0, ratio):
        raise ConfigError(
            f"stepsize {h} is not an integer multiple of reference_h {reference_h}"
        )
    if factor & (factor - 1):
        raise ConfigError(
            f"stepsize {h} / reference_h {reference_h} = {factor} "
            "must be a power of two for exact Brownian coupling"
        )
    return factor


@dataclass(frozen=True)
class ConvergenceConfig:
    """Strong-convergence study configuration.

    Every stepsize and the reference stepsize must tile [0, t_end] exactly,
    and each h must be a power-of-two multiple of reference_h (h equal to
    reference_h is allowed and yields the exact self-comparison eps = 0).
    """

    problem: object  # preset name or SddeProblem
    schemes: tuple[str, ...]
    stepsizes: tuple[float, ...]
    samples: int
    t_end: float
    master_seed: int
    reference_h: float = 2.0**-12
    interp: str = "linear"
    solver: SolverConfig = field(default_factory=SolverConfig)
    blowup_threshold: float = DEFAULT_BLOWUP_THRESHOLD

    def __post_init__(self):
        if not self.schemes:
            raise ConfigError("at least one scheme is required")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}")
        if not self.stepsizes:
            raise ConfigError("at least one stepsize is required")
        if self.samples < 1:
            raise ConfigError(f"samples must be >= 1, got {self.samples}")
        exact_steps(self.t_end, self.reference_h)
        for h in self.stepsizes:
            exact_steps(self.t_end, h)
            _power_of_two_factor(h, self.reference_h)
        if min(self.stepsizes) < self.reference_h:
            raise ConfigError("reference_h must not exceed the smallest stepsize")

    def echo(self) -> dict:
        return {
            "problem": _problem_label(self.problem),
            "schemes": list(self.schemes),
            "stepsizes": [float(h) for h in self.stepsizes],
            "samples": self.samples,
            "t_end": self.t_end,
            "master_seed": self.master_seed,
            "reference_h": self.reference_h,
            "interp": self.interp,
            "solver": _solver_echo(self.solver),
            "blowup_threshold": self.blowup_threshold,
        }


def _solver_echo(cfg: SolverConfig) -> dict:
    return {
        "mode": cfg.mode,
        "rel_tol": cfg.rel_tol,
        "abs_tol": cfg.abs_tol,
        "max_iter": cfg.max_iter,
        "jacobian": cfg.jacobian is not None,
    }


@dataclass(frozen=True)
class RowStat:
    """One (scheme, stepsize) cell of a convergence study."""

    scheme: str
    h: float
    epsilon: float
    std_error: float
    blowups: int
    failures: int
    wall_time: float


@dataclass
class ExperimentReport:
    rows: list[RowStat]
    orders: dict[str, float | None]
    config: dict
    master_seed: int
    reference: dict
    flags: dict


def _chunks(total: int, workers: int) -> list[tuple[int, int]]:
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    size = math.ceil(total / workers)
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


def _stacked_increments(master_seed, lo, hi, horizon, step, dim_noise):
    cols = [
        generate(path_seed(master_seed, i), horizon, step, dim_noise).increments
        for i in range(lo, hi)
    ]
    return np.stack(cols, axis=1)


def strong_error(cfg: ConvergenceConfig, workers: int = 1) -> ExperimentReport:
    """Endpoint strong error of each (scheme, h) against the fine reference.

    Blown-up paths enter the average with their clipped magnitude, so they
    inflate eps rather than being dropped; their count is reported per row.
    """
    problem = _resolve_problem(cfg.problem, cfg.t_end)
    n_ref = exact_steps(cfg.t_end, cfg.reference_h)
    pairs = [(s, h) for s in cfg.schemes for h in cfg.stepsizes]
    errors = {p: [] for p in pairs}
    blowups = {p: 0 for p in pairs}
    failures = {p: 0 for p in pairs}
    wall = {p: 0.0 for p in pairs}
    ref_trouble = 0
    ref_wall = 0.0

    for lo, hi in _chunks(cfg.samples, workers):
        t0 = time.perf_counter()
        fine = _stacked_increments(
            cfg.master_seed, lo, hi, cfg.t_end, cfg.reference_h, problem.dim_noise
        )
        ref = run_ensemble(
            problem, "ssbe", cfg.reference_h, fine,
            interp=cfg.interp, cfg=cfg.solver,
            blowup_threshold=cfg.blowup_threshold, collect="endpoint",
        )
        ref_trouble += int(np.sum(ref.statuses != 0))
        ref_wall += time.perf_counter() - t0
        for scheme, h in pairs:
            t1 = time.perf_counter()
            factor = _power_of_two_factor(h, cfg.reference_h)
            inc = fine if factor == 1 else coarsen_array(fine, factor)
            res = run_ensemble(
                problem, scheme, h, inc,
                interp=cfg.interp, cfg=cfg.solver,
                blowup_threshold=cfg.blowup_threshold, collect="endpoint",
            )
            diff = res.endpoints - ref.endpoints
            errors[(scheme, h)].append(np.sqrt((diff * diff).sum(axis=-1)))
            blowups[(scheme, h)] += res.count("blow-up")
            failures[(scheme, h)] += res.count("solver-failure")
            wall[(scheme, h)] += time.perf_counter() - t1

    rows = []
    for scheme, h in pairs:
        err = np.concatenate(errors[(scheme, h)])
        eps = float(np.mean(err))
        std = float(np.std(err, ddof=1) / np.sqrt(err.size)) if err.size > 1 else 0.0
        rows.append(
            RowStat(
                scheme=scheme,
                h=float(h),
                epsilon=eps,
                std_error=std,
                blowups=blowups[(scheme, h)],
                failures=failures[(scheme, h)],
                wall_time=wall[(scheme, h)],
            )
        )

    orders: dict[str, float | None] = {}
    for scheme in cfg.schemes:
        fitted = [(r.h, r.epsilon) for r in rows if r.scheme == scheme and r.epsilon > 0]
        if len(fitted) >= 2:
            orders[scheme] = fit_order([h for h, _ in fitted], [e for _, e in fitted])
        else:
            orders[scheme] = None

    return ExperimentReport(
        rows=rows,
        orders=orders,
        config=cfg.echo(),
        master_seed=cfg.master_seed,
        reference={"scheme": "ssbe", "h": cfg.reference_h, "wall_time": ref_wall},
        flags={"reference_trouble": ref_trouble},
    )


def fit_order(stepsizes: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(eps) against log(h)."""
    h = np.asarray(stepsizes, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.size != e.size or h.size < 2:
        raise ConfigError("order fit needs at least two (h, eps) pairs")
    if np.any(h <= 0):
        raise ConfigError("stepsizes must be positive")
    if np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise ConfigError("order fit needs positive finite errors")
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


# ---------------------------------------------------------------------------
# mean-square stability traces


@dataclass(frozen=True)
class StabilityTraceConfig:
    problem: object
    scheme: str
    h: float
    horizon: float
    samples: int
    master_seed: int
    interp: str = "linear"
    solver: SolverConfig = field(default_factory=SolverConfig)
    blowup_threshold: float = DEFAULT_BLOWUP_THRESHOLD

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.samples < 1:
            raise ConfigError(f"samples must be >= 1, got {self.samples}")
        exact_steps(self.horizon, self.h)

    def echo(self) -> dict:
        return {
            "problem": _problem_label(self.problem),
            "scheme": self.scheme,
            "h": self.h,
            "horizon": self.horizon,
            "samples": self.samples,
            "master_seed": self.master_seed,
            "interp": self.interp,
            "solver": _solver_echo(self.solver),
            "blowup_threshold": self.blowup_threshold,
        }


@dataclass
class TraceResult:
    """Sample mean of |X_n|^2 on the grid, with divergence bookkeeping.

    Aborted paths keep contributing their frozen clipped value; rows at or
    after any abort are flagged divergent.
    """

    scheme: str
    h: float
    times: np.ndarray
    mean_sq: np.ndarray
    n_active: np.ndarray
    divergent: np.ndarray
    status_counts: dict
    config: dict
    flags: dict


def ms_trace(cfg: StabilityTraceConfig, workers: int = 1) -> TraceResult:
    """Mean squared norm at every grid point across the ensemble."""
    problem = _resolve_problem(cfg.problem, cfg.horizon)
    n_steps = exact_steps(cfg.horizon, cfg.h)
    sq_blocks = []
    aborts = []
    status_counts = {"ok": 0, "blow-up": 0, "solver-failure": 0}
    flags = {}
    for lo, hi in _chunks(cfg.samples, workers):
        inc = _stacked_increments(
            cfg.master_seed, lo, hi, cfg.horizon, cfg.h, problem.dim_noise
        )
        res = run_ensemble(
            problem, cfg.scheme, cfg.h, inc,
            interp=cfg.interp, cfg=cfg.solver,
            blowup_threshold=cfg.blowup_threshold, collect="trace",
        )
        sq_blocks.append(res.sq_norms)
        aborts.append(res.abort_steps)
        for name in status_counts:
            status_counts[name] += res.count(name)
        flags.update(res.flags)

    sq = np.concatenate(sq_blocks, axis=1)  # (N+1, M)
    abort_steps = np.concatenate(aborts)
    times = np.arange(n_steps + 1) * cfg.h
    row_idx = np.arange(n_steps + 1)
    aborted = abort_steps >= 0
    # a path aborted at step k carries frozen values from row k+1 on
    frozen_from = np.where(aborted, abort_steps + 1, n_steps + 1)
    active_counts = (row_idx[:, None] < frozen_from[None, :]).sum(axis=1)
    divergent = active_counts < cfg.samples
    return TraceResult(
        scheme=cfg.scheme,
        h=cfg.h,
        times=times,
        mean_sq=sq.mean(axis=1),
        n_active=active_counts.astype(np.int64),
        divergent=divergent,
        status_counts=status_counts,
        config=cfg.echo(),
        flags=flags,
    )


def empirical_rate(trace: TraceResult) -> float:
    """Negated log-linear slope of the trace over the second half of the run."""
    horizon = trace.times[-1]
    window = trace.times >= 0.5 * horizon - 1e-12 * max(1.0, horizon)
    t = trace.times[window]
    ms = trace.mean_sq[window]
    if t.size < 2:
        raise NotApplicableError("rate fit needs at least two trace points")
    if np.any(ms <= 0) or not np.all(np.isfinite(ms)):
        raise NotApplicableError(
            "trace is nonpositive or non-finite in the fit window"
        )
    slope = float(np.polyfit(t, np.log(ms), 1)[0])
    return -slope


# ---------------------------------------------------------------------------
# published-table reproduction


@dataclass
class Table1Result:
    reports: dict[str, ExperimentReport]
    config: dict


def table1(
    samples: int,
    master_seed: int,
    reference_h: float = 2.0**-12,
    stepsizes: tuple[float, ...] = TABLE1_STEPSIZES,
    t_end: float = 8.0,
    interp: str = "linear",
    solver: SolverConfig | None = None,
    workers: int = 1,
) -> Table1Result:
    """Endpoint errors of all three schemes on the two stiff linear presets."""
    solver = solver or SolverConfig()
    reports = {}
    for name in TABLE1_PROBLEMS:
        cfg = ConvergenceConfig(
            problem=name,
            schemes=TABLE1_SCHEMES,
            stepsizes=stepsizes,
            samples=samples,
            t_end=t_end,
            master_seed=master_seed,
            reference_h=reference_h,
            interp=interp,
            solver=solver,
        )
        reports[name] = strong_error(cfg, workers=workers)
    config = {
        "problems": list(TABLE1_PROBLEMS),
        "schemes": list(TABLE1_SCHEMES),
        "stepsizes": [float(h) for h in stepsizes],
        "samples": samples,
        "t_end": t_end,
        "master_seed": master_seed,
        "reference_h": reference_h,
        "interp": interp,
        "solver": _solver_echo(solver),
    }
    return Table1Result(reports=reports, config=config)


def table1_text(result: Table1Result) -> str:
    """Fixed-width grid: one row per stepsize, one column per problem x scheme."""
    headers = ["h"]
    for name in result.config["problems"]:
        for scheme in result.config["schemes"]:
            headers.append(f"{name}/{scheme}")
    lines = ["  ".join(f"{h:>18s}" for h in headers)]
    for h in result.config["stepsizes"]:
        cells = [f"{h:>18.6g}"]
        for name in result.config["problems"]:
            report = result.reports[name]
            eps = {(r.scheme, r.h): r.epsilon for r in report.rows}
            for scheme in result.config["schemes"]:
                cells.append(f"{eps[(scheme, h)]:>18.6g}")
        lines.append("  ".join(cells))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# serialization


def format_float(x: float) -> str:
    """Shortest round-trip decimal form; keeps CSV output byte-stable."""
    return repr(float(x))


def report_csv_text(report: ExperimentReport) -> str:
    lines = ["scheme,h,epsilon,std_error,blowups"]
    for r in report.rows:
        lines.append(
            f"{r.scheme},{format_float(r.h)},{format_float(r.epsilon)},"
            f"{format_float(r.std_error)},{r.blowups}"
        )
    return "\n".join(lines) + "\n"


def table1_csv_text(result: Table1Result) -> str:
    lines = ["problem,scheme,h,epsilon,std_error,blowups"]
    for name in result.config["problems"]:
        for r in result.reports[name].rows:
            lines.append(
                f"{name},{r.scheme},{format_float(r.h)},{format_float(r.epsilon)},"
                f"{format_float(r.std_error)},{r.blowups}"
            )
    return "\n".join(lines) + "\n"


def trace_csv_text(trace: TraceResult) -> str:
    lines = ["t,mean_sq,n_active,divergent"]
    for k in range(trace.times.size):
        lines.append(
            f"{format_float(trace.times[k])},{format_float(trace.mean_sq[k])},"
            f"{int(trace.n_active[k])},{int(trace.divergent[k])}"
        )
    return "\n".join(lines) + "\n"


def trajectory_csv_text(traj: TrajectoryResult) -> str:
    d = traj.states.shape[1]
    header = "t," + ",".join(f"y{k}" for k in range(d))
    lines = [header]
    for k in range(traj.times.size):
        row = [format_float(traj.times[k])]
        row.extend(format_float(v) for v in traj.states[k])
        lines.append(",".join(row))
    lines.append(f"# status={traj.status}")
    if traj.abort_step >= 0:
        lines.append(f"# abort_step={traj.abort_step}")
    return "\n".join(lines) + "\n"


def sidecar_text(config: dict, master_seed, wall_times: dict, extra: dict | None = None) -> str:
    payload = {
        "config": config,
        "master_seed": master_seed,
        "versions": {
            "sddeint": __version__,
            "numpy": np.__version__,
        },
        "wall_times": wall_times,
    }
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
