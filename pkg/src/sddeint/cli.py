"""Command line front end.

Commands::

    sddeint simulate   one path, trajectory CSV
    sddeint converge   strong-error study across stepsizes, report CSV
    sddeint stability  mean-square trace of an ensemble, trace CSV
    sddeint table1     the three-scheme error grid on the two stiff presets
    sddeint analyze    analytic stability profile of a problem (no files)

Stepsizes accept plain floats, powers like ``2^-6``, comma lists, and dyadic
ranges like ``2^-3..2^-7``.  Every file-producing command writes a JSON
sidecar next to its CSV with the effective configuration, master seed,
package versions, and wall times; re-running with ``--config sidecar.json``
reproduces the CSV byte for byte (flags still override individual values).

Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, NotApplicableError, SddeError
from .experiments import (
    ConvergenceConfig,
    StabilityTraceConfig,
    ms_trace,
    report_csv_text,
    sidecar_text,
    strong_error,
    table1,
    table1_csv_text,
    table1_text,
    trace_csv_text,
    trajectory_csv_text,
)
from .paths import exact_steps, generate
from .problem import get_preset, preset_names
from .stability import linear_ms_stable, make_profile
from .stepper import SCHEMES, SolverConfig, run_trajectory

OUT_ENV = "SDDEINT_OUT"

__all__ = ["main", "parse_stepsizes"]


# ---------------------------------------------------------------------------
# argument plumbing


def _dyadic_exponent(token: str) -> int:
    m = re.fullmatch(r"2\^(-?\d+)", token.strip())
    if not m:
        raise ConfigError(f"range endpoints must look like 2^-k, got {token!r}")
    return int(m.group(1))


def _parse_one_h(token: str) -> float:
    token = token.strip()
    m = re.fullmatch(r"(\d+)\^(-?\d+)", token)
    if m:
        return float(int(m.group(1)) ** float(int(m.group(2))))
    try:
        value = float(token)
    except ValueError:
        raise ConfigError(f"cannot parse stepsize {token!r}") from None
    return value


def parse_stepsizes(spec: str) -> list[float]:
    """Parse ``0.125``, ``2^-3``, ``2^-3,2^-5``, or ``2^-3..2^-7``."""
    out: list[float] = []
    for token in str(spec).split(","):
        token = token.strip()
        if not token:
            continue
        if ".." in token:
            lo_s, hi_s = token.split("..", 1)
            lo, hi = _dyadic_exponent(lo_s), _dyadic_exponent(hi_s)
            step = 1 if hi >= lo else -1
            out.extend(2.0**k for k in range(lo, hi + step, step))
        else:
            out.append(_parse_one_h(token))
    if not out:
        raise ConfigError(f"no stepsizes in {spec!r}")
    for h in out:
        if not h > 0:
            raise ConfigError(f"stepsizes must be positive, got {h}")
    return out


def _load_config_file(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    if isinstance(data.get("config"), dict):  # accept a sidecar directly
        data = data["config"]
    flat = dict(data)
    solver = flat.pop("solver", None)
    if isinstance(solver, dict):
        for key in ("mode", "rel_tol", "abs_tol", "max_iter"):
            if key in solver:
                flat[f"solver_{key}"] = solver[key]
    return flat


def _pick(args, config: dict, key: str, default=None, config_key: str | None = None):
    value = getattr(args, key, None)
    if value is not None:
        return value
    ck = config_key or key
    if ck in config:
        return config[ck]
    return default


def _solver_from(args, config: dict) -> SolverConfig:
    return SolverConfig(
        mode=str(_pick(args, config, "solver_mode", "auto")),
        rel_tol=float(_pick(args, config, "solver_rel_tol", 1e-12)),
        abs_tol=float(_pick(args, config, "solver_abs_tol", 1e-14)),
        max_iter=int(_pick(args, config, "solver_max_iter", 50)),
    )


def _out_dir(args, config: dict) -> Path:
    out = _pick(args, config, "out", os.environ.get(OUT_ENV, "out"))
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _stepsize_list(value) -> list[float]:
    if isinstance(value, str):
        return parse_stepsizes(value)
    if isinstance(value, (int, float)):
        return [float(value)]
    return [float(v) for v in value]


def _scheme_list(value) -> list[str]:
    names = value.split(",") if isinstance(value, str) else list(value)
    names = [s.strip() for s in names if str(s).strip()]
    if not names:
        raise ConfigError("at least one scheme is required")
    for s in names:
        if s not in SCHEMES:
            raise ConfigError(f"unknown scheme {s!r}; available: {', '.join(SCHEMES)}")
    return names


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# commands


def _cmd_simulate(args) -> int:
    config = _load_config_file(args.config) if args.config else {}
    problem_name = _pick(args, config, "problem")
    scheme = _pick(args, config, "scheme", "ssbe")
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; available: {', '.join(SCHEMES)}")
    if problem_name is None:
        raise ConfigError("--problem is required")
    h_raw = _pick(args, config, "h")
    if h_raw is None:
        raise ConfigError("--h is required")
    h = _stepsize_list(h_raw)[0]
    horizon = float(_pick(args, config, "horizon", 1.0, config_key="horizon"))
    seed = int(_pick(args, config, "seed", 0, config_key="master_seed"))
    interp = str(_pick(args, config, "interp", "linear"))
    threshold = float(_pick(args, config, "blowup_threshold", 1e10))
    solver = _solver_from(args, config)

    problem = get_preset(str(problem_name), horizon=horizon)
    n_steps = exact_steps(horizon, h)
    t0 = time.perf_counter()
    lattice = generate(seed, horizon, h, problem.dim_noise)
    traj = run_trajectory(
        problem, scheme, h, lattice.increments,
        interp=interp, cfg=solver, blowup_threshold=threshold,
    )
    wall = time.perf_counter() - t0

    out = _out_dir(args, config)
    stem = f"simulate_{problem_name}_{scheme}"
    echo = {
        "problem": str(problem_name),
        "scheme": scheme,
        "h": float(h),
        "horizon": horizon,
        "master_seed": seed,
        "interp": interp,
        "blowup_threshold": threshold,
        "solver": {
            "mode": solver.mode,
            "rel_tol": solver.rel_tol,
            "abs_tol": solver.abs_tol,
            "max_iter": solver.max_iter,
            "jacobian": False,
        },
    }
    _write(out / f"{stem}.csv", trajectory_csv_text(traj))
    _write(
        out / f"{stem}.json",
        sidecar_text(echo, seed, {"simulate": wall}, {"status": traj.status, "flags": traj.flags}),
    )
    print(f"{n_steps} steps, status {traj.status}, endpoint {traj.endpoint}")
    return 0 if traj.status == "ok" else 1


def _cmd_converge(args) -> int:
    config = _load_config_file(args.config) if args.config else {}
    problem_name = _pick(args, config, "problem")
    if problem_name is None:
        raise ConfigError("--problem is required")
    schemes = _scheme_list(_pick(args, config, "schemes", "ssbe"))
    h_raw = _pick(args, config, "h", config_key="stepsizes")
    if h_raw is None:
        raise ConfigError("--h is required")
    cfg = ConvergenceConfig(
        problem=str(problem_name),
        schemes=tuple(schemes),
        stepsizes=tuple(_stepsize_list(h_raw)),
        samples=int(_pick(args, config, "M", 1000, config_key="samples")),
        t_end=float(_pick(args, config, "tN", 1.0, config_key="t_end")),
        master_seed=int(_pick(args, config, "seed", 0, config_key="master_seed")),
        reference_h=_stepsize_list(_pick(args, config, "ref_h", 2.0**-12, config_key="reference_h"))[0],
        interp=str(_pick(args, config, "interp", "linear")),
        solver=_solver_from(args, config),
        blowup_threshold=float(_pick(args, config, "blowup_threshold", 1e10)),
    )
    report = strong_error(cfg, workers=_workers(args))
    _print_report(report)
    out = _out_dir(args, config)
    stem = f"converge_{problem_name}"
    wall_times = {f"{r.scheme}@h={r.h}": r.wall_time for r in report.rows}
    wall_times["reference"] = report.reference["wall_time"]
    _write(out / f"{stem}.csv", report_csv_text(report))
    _write(
        out / f"{stem}.json",
        sidecar_text(
            report.config,
            report.master_seed,
            wall_times,
            {"orders": report.orders, "reference": {k: v for k, v in report.reference.items() if k != "wall_time"}, "flags": report.flags},
        ),
    )
    return 0


def _cmd_stability(args) -> int:
    config = _load_config_file(args.config) if args.config else {}
    problem_name = _pick(args, config, "problem")
    if problem_name is None:
        raise ConfigError("--problem is required")
    scheme = str(_pick(args, config, "scheme", "ssbe"))
    h_raw = _pick(args, config, "h")
    if h_raw is None:
        raise ConfigError("--h is required")
    (h,) = _stepsize_list(h_raw)[:1]
    cfg = StabilityTraceConfig(
        problem=str(problem_name),
        scheme=scheme,
        h=float(h),
        horizon=float(_pick(args, config, "horizon", 60.0)),
        samples=int(_pick(args, config, "M", 1000, config_key="samples")),
        master_seed=int(_pick(args, config, "seed", 0, config_key="master_seed")),
        interp=str(_pick(args, config, "interp", "linear")),
        solver=_solver_from(args, config),
        blowup_threshold=float(_pick(args, config, "blowup_threshold", 1e10)),
    )
    t0 = time.perf_counter()
    trace = ms_trace(cfg, workers=_workers(args))
    wall = time.perf_counter() - t0
    first, last = trace.mean_sq[0], trace.mean_sq[-1]
    print(
        f"{cfg.scheme} on {problem_name}, h={h}: mean|X|^2 {first:.6g} -> {last:.6g} "
        f"over [0, {cfg.horizon}] ({trace.status_counts})"
    )
    out = _out_dir(args, config)
    stem = f"stability_{problem_name}_{scheme}"
    _write(out / f"{stem}.csv", trace_csv_text(trace))
    _write(
        out / f"{stem}.json",
        sidecar_text(
            trace.config, cfg.master_seed, {"stability": wall},
            {"status_counts": trace.status_counts, "flags": trace.flags},
        ),
    )
    return 0


def _cmd_table1(args) -> int:
    config = _load_config_file(args.config) if args.config else {}
    stepsizes_raw = _pick(args, config, "h", config_key="stepsizes")
    kwargs = {}
    if stepsizes_raw is not None:
        kwargs["stepsizes"] = tuple(_stepsize_list(stepsizes_raw))
    result = table1(
        samples=int(_pick(args, config, "M", 1000, config_key="samples")),
        master_seed=int(_pick(args, config, "seed", 0, config_key="master_seed")),
        reference_h=_stepsize_list(_pick(args, config, "ref_h", 2.0**-12, config_key="reference_h"))[0],
        t_end=float(_pick(args, config, "tN", 8.0, config_key="t_end")),
        interp=str(_pick(args, config, "interp", "linear")),
        solver=_solver_from(args, config),
        workers=_workers(args),
        **kwargs,
    )
    print(table1_text(result))
    out = _out_dir(args, config)
    wall_times = {}
    for name, report in result.reports.items():
        for r in report.rows:
            wall_times[f"{name}/{r.scheme}@h={r.h}"] = r.wall_time
        wall_times[f"{name}/reference"] = report.reference["wall_time"]
    orders = {name: report.orders for name, report in result.reports.items()}
    _write(out / "table1.csv", table1_csv_text(result))
    _write(
        out / "table1.json",
        sidecar_text(result.config, result.config["master_seed"], wall_times, {"orders": orders}),
    )
    return 0


def _cmd_analyze(args) -> int:
    config = _load_config_file(args.config) if args.config else {}
    problem_name = _pick(args, config, "problem")
    if problem_name is None:
        raise ConfigError("--problem is required")
    h = float(_pick(args, config, "h", 1.0))
    problem = get_preset(str(problem_name), horizon=max(1.0, h))
    if problem.gammas is None:
        raise NotApplicableError(
            f"problem {problem_name!r} carries no growth constants to analyze"
        )
    tau_raw = _pick(args, config, "tau")
    tau = float(tau_raw) if tau_raw is not None else problem.delay_ceiling
    if tau is None:
        raise NotApplicableError(
            "the delay is unbounded; pass --tau to analyze a bounded window"
        )
    profile = make_profile(problem.gammas, tau, h)
    g = profile.gammas
    payload = {
        "problem": str(problem_name),
        "gammas": [g.gamma1, g.gamma2, g.gamma3, g.gamma4],
        "tau": profile.tau,
        "h": profile.h,
        "kappa": profile.kappa,
        "delta": profile.delta,
        "beta": profile.beta,
        "beta1": profile.beta1,
        "beta2": profile.beta2,
        "beta_h": profile.beta_h,
        "nu_plus": profile.nu_plus,
        "nu_h_plus": profile.nu_h_plus,
        "solvability_h": profile.solvability_h,
        "verdict": (
            "mean-square contraction certified for every stepsize (beta < 0)"
            if profile.certified
            else "decay certificate not applicable (beta >= 0)"
        ),
    }
    if problem.linear is not None:
        payload["linear_ms_stable"] = linear_ms_stable(problem.linear)
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
        return 0
    width = max(len(k) for k in payload)
    for key, value in payload.items():
        if key == "solvability_h" and value == float("inf"):
            value = "unbounded (gamma1 + gamma2 <= 0)"
        print(f"{key:<{width}}  {value}")
    return 0


def _workers(args) -> int:
    if getattr(args, "workers", None) is not None:
        return int(args.workers)
    return max(1, os.cpu_count() or 1)


def _print_report(report) -> None:
    print(f"{'scheme':<12} {'h':>12} {'epsilon':>14} {'std_error':>12} {'blowups':>8}")
    for r in report.rows:
        print(
            f"{r.scheme:<12} {r.h:>12.6g} {r.epsilon:>14.6g} "
            f"{r.std_error:>12.3g} {r.blowups:>8d}"
        )
    for scheme, order in report.orders.items():
        shown = "n/a" if order is None else f"{order:.4f}"
        print(f"fitted order [{scheme}]: {shown}")


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (or a sidecar); flags override")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--interp", choices=("linear", "constant"), help="delayed-value interpolation")
    p.add_argument("--workers", type=int, help="ensemble chunking degree; never affects results")
    p.add_argument("--blowup-threshold", dest="blowup_threshold", type=float,
                   help="per-component abort threshold (default 1e10)")
    p.add_argument("--solver-mode", dest="solver_mode", choices=("auto", "newton", "fixed-point"))
    p.add_argument("--rel-tol", dest="solver_rel_tol", type=float)
    p.add_argument("--abs-tol", dest="solver_abs_tol", type=float)
    p.add_argument("--max-iter", dest="solver_max_iter", type=int)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sddeint",
        description="Split-step integrators and stability analytics for stochastic delay equations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate one path and dump the trajectory")
    p.add_argument("--problem", choices=preset_names())
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--h")
    p.add_argument("--T", dest="horizon", type=float)
    _add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("converge", help="strong-error study across stepsizes")
    p.add_argument("--problem", choices=preset_names())
    p.add_argument("--schemes", help="comma list from: " + ", ".join(SCHEMES))
    p.add_argument("--h", help="stepsizes, e.g. 2^-3..2^-7")
    p.add_argument("--ref-h", dest="ref_h")
    p.add_argument("--M", dest="M", type=int)
    p.add_argument("--tN", dest="tN", type=float)
    _add_common(p)
    p.set_defaults(func=_cmd_converge)

    p = sub.add_parser("stability", help="mean-square trace of an ensemble")
    p.add_argument("--problem", choices=preset_names())
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--h")
    p.add_argument("--T", dest="horizon", type=float)
    p.add_argument("--M", dest="M", type=int)
    _add_common(p)
    p.set_defaults(func=_cmd_stability)

    p = sub.add_parser("table1", help="three-scheme error grid on the stiff presets")
    p.add_argument("--M", dest="M", type=int)
    p.add_argument("--h", help="stepsizes (default 2^-3..2^-7)")
    p.add_argument("--ref-h", dest="ref_h")
    p.add_argument("--tN", dest="tN", type=float)
    _add_common(p)
    p.set_defaults(func=_cmd_table1)

    p = sub.add_parser("analyze", help="analytic stability profile")
    p.add_argument("--problem", choices=preset_names())
    p.add_argument("--h", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--json", action="store_true")
    _add_common(p)
    p.set_defaults(func=_cmd_analyze)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SddeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
