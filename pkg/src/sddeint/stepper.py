"""Delayed-argument lookups, the implicit stage solve, and the schemes.

Three schemes integrate dx = f(x, x_tau) dt + g(x, x_tau) dw on the uniform
grid t_n = n*h:

``ssbe`` (split-step backward Euler, the headline scheme)
    y*_n   = y_n + h f(y*_n, y~*_n)
    y_{n+1} = y*_n + g(y*_n, y~*_n) dw_n
    where the delayed argument y~*_n interpolates *stage* values y*_j:
    with t_n - tau(t_n) in [t_j, t_{j+1}), y~*_n = (1-mu) y*_j + mu y*_{j+1}
    (mu = 0 under piecewise-constant interpolation).  When the delayed time
    lands in the current interval (j + 1 = n) the stage equation couples to
    its own unknown and is solved in that coupled form.

``ssbe-legacy`` (scalar linear problems with constant lag tau = kappa*h)
    z*_n   = z_n + h (a z*_n + b z_{n-kappa+1})
    z_{n+1} = z*_n + (c z*_n + d z_{n-kappa+1}) dw_n
    with the delayed value taken from the *committed* sequence.

``em`` (Euler-Maruyama baseline)
    y_{n+1} = y_n + h f(y_n, y~_n) + g(y_n, y~_n) dw_n
    with y~_n interpolating committed values (never coupled).

State arrays carry an optional leading batch axis: a single trajectory works
on shape (d,), an ensemble of M independent paths on (M, d).  Within the
solver and the runners, each path's iterates are frozen the moment that path
converges or aborts, so results are bit-for-bit independent of how an
ensemble is chunked.
"""

from __future__ import annotations

import collections
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    ConfigError,
    DivergenceError,
    HistoryUnderflowError,
    StageSolveError,
)
from .problem import LinearSddeParams, SddeProblem

__all__ = [
    "SCHEMES",
    "DelayedRef",
    "StageHistory",
    "SolverConfig",
    "TrajectoryResult",
    "EnsembleResult",
    "delayed_ref",
    "solve_stage",
    "ssbe_step",
    "ssbe_legacy_step",
    "em_step",
    "run_trajectory",
    "run_ensemble",
    "legacy_kappa",
]

SCHEMES = ("ssbe", "ssbe-legacy", "em")

STATUS_OK = "ok"
STATUS_BLOWUP = "blow-up"
STATUS_FAILURE = "solver-failure"
_STATUS_NAMES = (STATUS_OK, STATUS_BLOWUP, STATUS_FAILURE)

_SNAP = 1e-9
_SQRT_EPS = float(np.sqrt(np.finfo(float).eps))
DEFAULT_BLOWUP_THRESHOLD = 1e10


# ---------------------------------------------------------------------------
# delayed references


@dataclass(frozen=True)
class DelayedRef:
    """Where a delayed lookup lands.

    ``kind`` is "initial" (delayed time below zero, value already evaluated
    from the initial path) or "interpolated" (value between grid nodes
    ``left`` and ``left + 1`` with weight ``mu`` in [0, 1] on the right node).
    ``couples_current`` marks the case where the right node is the stage
    currently being solved for; ``clamped`` marks a vanishing delay that was
    clamped to the mu -> 1 limit.
    """

    kind: str
    time: float = 0.0
    value: np.ndarray | None = None
    left: int = 0
    mu: float = 0.0
    couples_current: bool = False
    clamped: bool = False


def delayed_ref(n: int, h: float, problem: SddeProblem, interp: str = "linear") -> DelayedRef:
    """Locate x(t_n - tau(t_n)) on the grid.

    Grid positions r = n - tau(t_n)/h within 1e-9 relative of an integer snap
    to it, so constant lags tau = kappa*h always hit nodes exactly.
    """
    if n < 0:
        raise ConfigError(f"step index must be nonnegative, got {n}")
    if not h > 0:
        raise ConfigError(f"stepsize must be positive, got {h}")
    if interp not in ("linear", "constant"):
        raise ConfigError(f"interp must be 'linear' or 'constant', got {interp!r}")
    t_n = n * h
    tau = float(problem.delay(t_n))
    if not math.isfinite(tau) or tau < 0:
        raise ConfigError(f"delay({t_n}) = {tau} must be finite and nonnegative")
    r = n - tau / h
    nearest = round(r)
    if abs(r - nearest) <= _SNAP * max(1.0, abs(r)):
        r = float(nearest)
    if r < 0:
        s = r * h
        floor_t = -problem.delay_floor
        if s < floor_t - _SNAP * max(1.0, abs(floor_t)):
            raise HistoryUnderflowError(
                f"delayed time {s} precedes the initial segment "
                f"[{floor_t}, 0] of problem {problem.name or '<anonymous>'}"
            )
        s = max(s, floor_t)
        return DelayedRef(kind="initial", time=s, value=np.asarray(problem.initial(s), float))
    j = int(math.floor(r))
    mu = r - j
    clamped = False
    if j >= n:  # tau(t_n) = 0 after snapping: take the mu -> 1 limit
        j, mu, clamped = n - 1, 1.0, True
    if interp == "constant" and not clamped:
        mu = 0.0
    couples = (j + 1 == n) and (mu > 0.0)
    return DelayedRef(
        kind="interpolated",
        time=t_n - tau,
        left=j,
        mu=mu,
        couples_current=couples,
        clamped=clamped,
    )


# ---------------------------------------------------------------------------
# history


class _Ring:
    """Append-only sequence with optional eviction of old entries."""

    __slots__ = ("_items", "_total")

    def __init__(self, keep: int | None = None):
        self._items = collections.deque(maxlen=keep)
        self._total = 0

    def append(self, value) -> None:
        self._items.append(value)
        self._total += 1

    def __len__(self) -> int:
        return self._total

    def get(self, j: int):
        start = self._total - len(self._items)
        if j < 0 or j >= self._total:
            raise HistoryUnderflowError(
                f"index {j} outside the computed range [0, {self._total})"
            )
        if j < start:
            raise HistoryUnderflowError(
                f"index {j} was evicted (ring keeps the last {len(self._items)} entries)"
            )
        return self._items[j - start]


class StageHistory:
    """Committed states y_n and stage values y*_n of one run.

    The two sequences are kept separate: Euler-Maruyama interpolates committed
    values, the split-step schemes interpolate stage values.  Entries are
    never mutated after being appended; ``keep`` bounds how many trailing
    entries stay reachable (None keeps everything).
    """

    def __init__(
        self,
        problem: SddeProblem,
        h: float,
        batch_shape: tuple[int, ...] = (),
        keep: int | None = None,
    ):
        if not h > 0:
            raise ConfigError(f"stepsize must be positive, got {h}")
        self.problem = problem
        self.h = float(h)
        self.batch_shape = tuple(batch_shape)
        self._stages = _Ring(keep)
        self._committed = _Ring(keep)
        y0 = np.asarray(problem.initial(0.0), dtype=float)
        y0 = np.broadcast_to(y0, self.batch_shape + y0.shape).copy()
        self._committed.append(y0)

    @property
    def n_committed(self) -> int:
        return len(self._committed)

    @property
    def n_stages(self) -> int:
        return len(self._stages)

    def committed(self, j: int) -> np.ndarray:
        return self._committed.get(j)

    def stage(self, j: int) -> np.ndarray:
        return self._stages.get(j)

    def append_committed(self, value: np.ndarray) -> None:
        self._committed.append(value)

    def append_stage(self, value: np.ndarray) -> None:
        self._stages.append(value)

    def _resolve(self, ref: DelayedRef, lookup) -> np.ndarray:
        if ref.kind == "initial":
            return np.broadcast_to(ref.value, self.batch_shape + ref.value.shape)
        left = lookup(ref.left) if ref.mu < 1.0 else None
        right = lookup(ref.left + 1) if ref.mu > 0.0 else None
        if right is None:
            return left
        if left is None:
            return right
        return (1.0 - ref.mu) * left + ref.mu * right

    def resolve_stages(self, ref: DelayedRef) -> np.ndarray:
        """Delayed value interpolated from stage values (split-step schemes)."""
        if ref.couples_current:
            raise ConfigError(
                "delayed value couples the current unknown stage; "
                "it must be resolved by the stage solve itself"
            )
        return self._resolve(ref, self.stage)

    def resolve_committed(self, ref: DelayedRef) -> np.ndarray:
        """Delayed value interpolated from committed states (Euler-Maruyama)."""
        return self._resolve(ref, self.committed)


# ---------------------------------------------------------------------------
# implicit stage solve


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the implicit stage solve.

    ``mode`` is "newton", "fixed-point", or "auto" (resolves to Newton, which
    also handles stiff h).  ``jacobian``, when given, must map (x, y) to the
    pair (df/dx, df/dy) of (..., d, d) arrays; otherwise forward finite
    differences with perturbation sqrt(eps)*(1+|x|) are used.
    """

    mode: str = "auto"
    rel_tol: float = 1e-12
    abs_tol: float = 1e-14
    max_iter: int = 50
    jacobian: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None

    def __post_init__(self):
        if self.mode not in ("auto", "newton", "fixed-point"):
            raise ConfigError(f"unknown solver mode {self.mode!r}")
        if self.rel_tol < 0 or self.abs_tol < 0 or self.rel_tol + self.abs_tol == 0:
            raise ConfigError("solver tolerances must be nonnegative and not both zero")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")


def _warn_solvability(problem: SddeProblem, h: float) -> None:
    g = problem.gammas
    if g is not None and (g.gamma1 + g.gamma2) * h >= 1.0:
        warnings.warn(
            f"(gamma1 + gamma2) * h = {(g.gamma1 + g.gamma2) * h:.3g} >= 1: "
            "the stage equation may lack a unique solution",
            RuntimeWarning,
            stacklevel=3,
        )


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt((x * x).sum(axis=-1))


def _fd_jacobian(phi, c: np.ndarray, fc: np.ndarray) -> np.ndarray:
    """Forward-difference Jacobian of phi at c, shape (..., d, d)."""
    d = c.shape[-1]
    cols = []
    for k in range(d):
        delta = _SQRT_EPS * (1.0 + np.abs(c[..., k]))
        cp = c.copy()
        cp[..., k] += delta
        cols.append((phi(cp) - fc) / delta[..., None])
    return np.stack(cols, axis=-1)


def _newton_direction(A: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Solve A step = -F batched; singular rows yield non-finite entries."""
    if A.shape[-1] == 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            return -F / A[..., 0]
    try:
        return np.linalg.solve(A, -F[..., None])[..., 0]
    except np.linalg.LinAlgError:
        flatA = A.reshape(-1, A.shape[-2], A.shape[-1])
        flatF = F.reshape(-1, F.shape[-1])
        out = np.empty_like(flatF)
        for i in range(flatA.shape[0]):
            try:
                out[i] = np.linalg.solve(flatA[i], -flatF[i])
            except np.linalg.LinAlgError:
                out[i] = np.nan
        return out.reshape(F.shape)


def _solve_stage_core(
    y_prev: np.ndarray,
    delayed: np.ndarray,
    mu: float,
    coupled: bool,
    h: float,
    problem: SddeProblem,
    cfg: SolverConfig,
    active: np.ndarray | None = None,
):
    """Solve c = y_prev + h f(c, v(c)) for each path in the batch.

    ``delayed`` is the known delayed value, or, when ``coupled``, the left
    node value b entering v(c) = mu*c + (1-mu)*b.  Paths stop updating the
    moment they converge, abort, or were inactive to begin with, which keeps
    every path's result independent of the batch it rides in.

    Returns (c, ok, residual_norm, diverged) with batch-shaped masks.
    """
    drift = problem.drift
    if coupled:
        def phi(c):
            return drift(c, mu * c + (1.0 - mu) * delayed)
    else:
        def phi(c):
            return drift(c, delayed)

    mode = "newton" if cfg.mode == "auto" else cfg.mode
    batch_shape = y_prev.shape[:-1]
    alive = np.ones(batch_shape, dtype=bool) if active is None else active.copy()
    ok = np.zeros(batch_shape, dtype=bool)
    diverged = np.zeros(batch_shape, dtype=bool)
    res_norm = np.full(batch_shape, np.inf)

    with np.errstate(all="ignore"):
        c = y_prev + h * phi(y_prev)  # explicit predictor
        c = np.where(alive[..., None], c, y_prev)
        for it in range(cfg.max_iter + 1):
            fc = phi(c)
            F = c - y_prev - h * fc
            r = _norm(F)
            tol = cfg.abs_tol + cfg.rel_tol * _norm(c)
            finite = np.isfinite(r)
            res_norm = np.where(alive, r, res_norm)
            newly_ok = alive & finite & (r <= tol)
            ok |= newly_ok
            alive &= ~newly_ok
            newly_div = alive & ~finite
            diverged |= newly_div
            alive &= ~newly_div
            if not alive.any() or it == cfg.max_iter:
                break
            if mode == "newton":
                if cfg.jacobian is not None:
                    v = mu * c + (1.0 - mu) * delayed if coupled else delayed
                    jx, jy = cfg.jacobian(c, np.broadcast_to(v, c.shape))
                    J = jx + mu * jy if coupled else jx
                else:
                    J = _fd_jacobian(phi, c, fc)
                d = c.shape[-1]
                A = np.broadcast_to(np.eye(d), J.shape) - h * J
                step = _newton_direction(A, F)
            else:
                step = y_prev + h * fc - c
            c = np.where(alive[..., None], c + step, c)
    return c, ok, res_norm, diverged


def solve_stage(
    y_prev: np.ndarray,
    delayed_value: np.ndarray,
    h: float,
    problem: SddeProblem,
    mu: float = 0.0,
    coupled: bool = False,
    cfg: SolverConfig | None = None,
) -> np.ndarray:
    """Solve the implicit stage equation; raise if any path fails.

    The accepted value satisfies ||c - y_prev - h f(c, v(c))|| <= abs_tol +
    rel_tol * ||c|| (verified, not assumed).
    """
    if not h > 0:
        raise ConfigError(f"stepsize must be positive, got {h}")
    if coupled and not 0.0 <= mu <= 1.0:
        raise ConfigError(f"interpolation weight mu must lie in [0, 1], got {mu}")
    cfg = cfg or SolverConfig()
    _warn_solvability(problem, h)
    y_prev = np.asarray(y_prev, dtype=float)
    delayed = np.asarray(delayed_value, dtype=float)
    c, ok, res, div = _solve_stage_core(y_prev, delayed, mu, coupled, h, problem, cfg)
    if not np.all(ok):
        if np.any(div):
            raise DivergenceError("stage iterates became non-finite", residual=res)
        raise StageSolveError(
            f"stage solve did not converge within {cfg.max_iter} iterations "
            f"(worst residual {float(np.max(res)):.3e})",
            residual=res,
        )
    return c


# ---------------------------------------------------------------------------
# one-step operations


def _apply_noise(gmat: np.ndarray, dw: np.ndarray) -> np.ndarray:
    return np.einsum("...dm,...m->...d", gmat, dw)


def _ssbe_stage_inputs(ref: DelayedRef, hist: StageHistory, like: np.ndarray):
    """(coupled, mu, delayed-or-left-value) for the stage solve.

    Initial-segment values are broadcast to the batch shape so coefficient
    callables always see matching (..., d) arguments.
    """
    if ref.kind == "initial":
        return False, 0.0, np.broadcast_to(ref.value, like.shape)
    if ref.couples_current:
        if ref.mu < 1.0:
            left = hist.stage(ref.left)
        else:
            left = np.zeros_like(like)  # weight 0, never read
        return True, ref.mu, left
    return False, 0.0, hist.resolve_stages(ref)


def ssbe_step(
    n: int,
    state: StageHistory,
    increment: np.ndarray,
    problem: SddeProblem,
    interp: str = "linear",
    cfg: SolverConfig | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One split-step backward Euler step; returns (y*_n, y_{n+1}) and
    appends both to the history."""
    cfg = cfg or SolverConfig()
    y_n = state.committed(n)
    ref = delayed_ref(n, state.h, problem, interp)
    coupled, mu, delayed = _ssbe_stage_inputs(ref, state, y_n)
    ystar = solve_stage(y_n, delayed, state.h, problem, mu=mu, coupled=coupled, cfg=cfg)
    ytilde = mu * ystar + (1.0 - mu) * delayed if coupled else delayed
    dw = np.asarray(increment, dtype=float)
    y_next = ystar + _apply_noise(problem.diffusion(ystar, ytilde), dw)
    state.append_stage(ystar)
    state.append_committed(y_next)
    return ystar, y_next


def legacy_kappa(params: LinearSddeParams, h: float) -> int:
    """Integer lag multiple for the legacy scheme; rejects h not dividing the lag."""
    ratio = params.lag / h
    kappa = int(round(ratio))
    if kappa < 1 or abs(ratio - kappa) > _SNAP * max(1.0, abs(ratio)):
        raise ConfigError(
            f"legacy scheme needs h = lag/kappa for an integer kappa; "
            f"lag {params.lag} / h {h} = {ratio} is not an integer"
        )
    return kappa


def ssbe_legacy_step(
    n: int,
    state: StageHistory,
    increment: np.ndarray,
    params: LinearSddeParams,
    kappa: int,
    cfg: SolverConfig | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One legacy split-step backward Euler step on the scalar linear problem.

    The delayed value is the committed z_{n-kappa+1} (indices below zero read
    the initial path at the matching grid time); the implicit part is linear
    and solved in closed form.  Returns (z*_n, z_{n+1}) and appends both.
    """
    h = state.h
    z_n = state.committed(n)
    i = n - kappa + 1
    if i >= 0:
        z_del = state.committed(i)
    else:
        z_del = np.asarray(state.problem.initial(i * h), dtype=float)
    damping = 1.0 - h * params.a
    if damping <= 0.0:
        raise ConfigError(
            f"legacy stage is singular: 1 - h*a = {damping} <= 0 for h = {h}"
        )
    zstar = (z_n + h * params.b * z_del) / damping
    dw = np.asarray(increment, dtype=float)
    z_next = zstar + (params.c * zstar + params.d * z_del) * dw
    state.append_stage(zstar)
    state.append_committed(z_next)
    return zstar, z_next


def em_step(
    n: int,
    state: StageHistory,
    increment: np.ndarray,
    problem: SddeProblem,
    interp: str = "linear",
    cfg: SolverConfig | None = None,
) -> np.ndarray:
    """One Euler-Maruyama step; delayed values interpolate committed states
    (all known, never coupled).  Returns y_{n+1} and appends it."""
    y_n = state.committed(n)
    ref = delayed_ref(n, state.h, problem, interp)
    ytilde = state.resolve_committed(ref)
    dw = np.asarray(increment, dtype=float)
    y_next = (
        y_n
        + state.h * problem.drift(y_n, ytilde)
        + _apply_noise(problem.diffusion(y_n, ytilde), dw)
    )
    state.append_committed(y_next)
    return y_next


# ---------------------------------------------------------------------------
# trajectory and ensemble runners


@dataclass
class TrajectoryResult:
    """Committed path of one run: states[k] is the state at times[k].

    ``status`` is "ok", "blow-up", or "solver-failure"; aborted paths carry
    their frozen (clipped) value forward so states always has N+1 rows.
    ``abort_step`` is the step index that failed (-1 when ok).
    """

    scheme: str
    h: float
    times: np.ndarray
    states: np.ndarray
    status: str
    abort_step: int
    flags: dict

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class EnsembleResult:
    """Batched run over M independent paths."""

    scheme: str
    h: float
    n_steps: int
    endpoints: np.ndarray  # (M, d)
    statuses: np.ndarray  # (M,) uint8 indices into _STATUS_NAMES
    abort_steps: np.ndarray  # (M,)
    sq_norms: np.ndarray | None  # (N+1, M) squared norms, trace mode only
    paths: np.ndarray | None  # (N+1, M, d), path mode only
    flags: dict

    def status_names(self) -> list[str]:
        return [_STATUS_NAMES[s] for s in self.statuses]

    def count(self, name: str) -> int:
        return int(np.sum(self.statuses == _STATUS_NAMES.index(name)))


def _ring_keep(problem: SddeProblem, h: float, scheme: str, kappa: int | None) -> int | None:
    if scheme == "ssbe-legacy":
        return int(kappa) + 2
    if problem.delay_ceiling is None:
        return None
    ratio = problem.delay_ceiling / h
    nearest = round(ratio)
    if abs(ratio - nearest) <= _SNAP * max(1.0, abs(ratio)):
        ratio = float(nearest)
    return int(math.ceil(ratio)) + 3


def _clip_blown(values: np.ndarray, threshold: float) -> np.ndarray:
    cleaned = np.nan_to_num(values, nan=threshold, posinf=threshold, neginf=-threshold)
    return np.clip(cleaned, -threshold, threshold)


def _run_core(
    problem: SddeProblem,
    scheme: str,
    h: float,
    increments: np.ndarray,
    interp: str,
    cfg: SolverConfig,
    collect: str,
    blowup_threshold: float,
) -> EnsembleResult:
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; available: {', '.join(SCHEMES)}")
    if increments.ndim != 3:
        raise ConfigError("increments must have shape (n_steps, n_paths, dim_noise)")
    n_steps, n_paths, m = increments.shape
    if m != problem.dim_noise:
        raise ConfigError(
            f"increments carry {m} noise components, problem has {problem.dim_noise}"
        )
    if not blowup_threshold > 0:
        raise ConfigError("blowup_threshold must be positive")

    params = kappa = None
    if scheme == "ssbe-legacy":
        if problem.linear is None or problem.dim_state != 1 or problem.dim_noise != 1:
            raise ConfigError(
                "legacy scheme requires a scalar linear problem with constant lag"
            )
        params = problem.linear
        kappa = legacy_kappa(params, h)

    _warn_solvability(problem, h)
    keep = None if collect == "path" else _ring_keep(problem, h, scheme, kappa)
    hist = StageHistory(problem, h, batch_shape=(n_paths,), keep=keep)
    y = hist.committed(0)
    d = problem.dim_state

    active = np.ones(n_paths, dtype=bool)
    statuses = np.zeros(n_paths, dtype=np.uint8)
    abort_steps = np.full(n_paths, -1, dtype=np.int64)
    clamped_any = False

    path_rows = [y] if collect == "path" else None
    sq_rows = [(y * y).sum(axis=-1)] if collect == "trace" else None

    with np.errstate(all="ignore"):
        for n in range(n_steps):
            dw = increments[n]
            was_active = active.copy()
            has_stage = True
            ok = was_active
            if scheme == "ssbe":
                ref = delayed_ref(n, h, problem, interp)
                clamped_any |= ref.clamped
                coupled, mu, delayed = _ssbe_stage_inputs(ref, hist, y)
                stage_val, solved, _, _ = _solve_stage_core(
                    y, delayed, mu, coupled, h, problem, cfg, active=was_active
                )
                ok = solved
                ytilde = mu * stage_val + (1.0 - mu) * delayed if coupled else delayed
                y_prop = stage_val + _apply_noise(
                    problem.diffusion(stage_val, ytilde), dw
                )
            elif scheme == "em":
                has_stage = False
                ref = delayed_ref(n, h, problem, interp)
                clamped_any |= ref.clamped
                ytilde = hist.resolve_committed(ref)
                y_prop = (
                    y
                    + h * problem.drift(y, ytilde)
                    + _apply_noise(problem.diffusion(y, ytilde), dw)
                )
                stage_val = y_prop
            else:  # ssbe-legacy
                i = n - kappa + 1
                if i >= 0:
                    z_del = hist.committed(i)
                else:
                    z_del = np.asarray(problem.initial(i * h), dtype=float)
                damping = 1.0 - h * params.a
                if damping <= 0.0:
                    raise ConfigError(
                        f"legacy stage is singular: 1 - h*a = {damping} <= 0"
                    )
                stage_val = (y + h * params.b * z_del) / damping
                y_prop = stage_val + (params.c * stage_val + params.d * z_del) * dw

            # carry frozen paths forward untouched
            y_new = np.where(was_active[:, None], y_prop, y)
            stage_new = np.where(was_active[:, None], stage_val, y) if has_stage else None

            failed = was_active & ~ok
            if failed.any():
                statuses[failed] = 2
                abort_steps[failed] = n
                y_new[failed] = y[failed]
                if has_stage:
                    stage_new[failed] = y[failed]
                active &= ~failed

            finite = np.isfinite(y_new).all(axis=-1)
            over = (np.abs(y_new) > blowup_threshold).any(axis=-1)
            blown = active & (~finite | over)
            if blown.any():
                statuses[blown] = 1
                abort_steps[blown] = n
                y_new[blown] = _clip_blown(y_new[blown], blowup_threshold)
                if has_stage:
                    stage_new[blown] = _clip_blown(stage_new[blown], blowup_threshold)
                active &= ~blown

            if has_stage:
                hist.append_stage(stage_new)
            hist.append_committed(y_new)
            y = y_new
            if path_rows is not None:
                path_rows.append(y)
            if sq_rows is not None:
                sq_rows.append((y * y).sum(axis=-1))

    return EnsembleResult(
        scheme=scheme,
        h=float(h),
        n_steps=n_steps,
        endpoints=y,
        statuses=statuses,
        abort_steps=abort_steps,
        sq_norms=np.stack(sq_rows, axis=0) if sq_rows is not None else None,
        paths=np.stack(path_rows, axis=0) if path_rows is not None else None,
        flags={"zero_delay_clamped": clamped_any},
    )


def _as_batch(increments: np.ndarray) -> np.ndarray:
    inc = np.asarray(increments, dtype=float)
    if inc.ndim == 1:
        inc = inc[:, None]
    if inc.ndim == 2:
        inc = inc[:, None, :]
    if inc.ndim != 3:
        raise ConfigError("increments must have shape (n_steps, dim_noise)")
    return inc


def run_trajectory(
    problem: SddeProblem,
    scheme: str,
    h: float,
    increments: np.ndarray,
    interp: str = "linear",
    cfg: SolverConfig | None = None,
    blowup_threshold: float = DEFAULT_BLOWUP_THRESHOLD,
) -> TrajectoryResult:
    """Integrate one path from its (n_steps, dim_noise) increment array.

    Numerical trouble is recorded in ``status`` ("blow-up" above the
    per-component threshold, "solver-failure" when the stage solve gives up),
    never raised; the path is frozen at its clipped last value from the abort
    step on.
    """
    inc = _as_batch(increments)
    if inc.shape[1] != 1:
        raise ConfigError("run_trajectory expects a single path of increments")
    cfg = cfg or SolverConfig()
    res = _run_core(
        problem, scheme, h, inc, interp, cfg, collect="path",
        blowup_threshold=blowup_threshold,
    )
    times = np.arange(res.n_steps + 1) * h
    return TrajectoryResult(
        scheme=scheme,
        h=float(h),
        times=times,
        states=res.paths[:, 0, :],
        status=_STATUS_NAMES[res.statuses[0]],
        abort_step=int(res.abort_steps[0]),
        flags=res.flags,
    )


def run_ensemble(
    problem: SddeProblem,
    scheme: str,
    h: float,
    increments: np.ndarray,
    interp: str = "linear",
    cfg: SolverConfig | None = None,
    blowup_threshold: float = DEFAULT_BLOWUP_THRESHOLD,
    collect: str = "endpoint",
) -> EnsembleResult:
    """Integrate a batch of independent paths from (n_steps, M, dim_noise)
    increments.  ``collect`` is "endpoint", "trace" (keeps squared norms at
    every grid point), or "path" (keeps everything)."""
    if collect not in ("endpoint", "trace", "path"):
        raise ConfigError(f"unknown collect mode {collect!r}")
    inc = np.asarray(increments, dtype=float)
    if inc.ndim != 3:
        raise ConfigError("increments must have shape (n_steps, n_paths, dim_noise)")
    cfg = cfg or SolverConfig()
    return _run_core(
        problem, scheme, h, inc, interp, cfg, collect=collect,
        blowup_threshold=blowup_threshold,
    )
