"""Problem definitions: coefficients, delays, initial paths, and presets.

A problem bundles the drift ``f(x, y)``, diffusion ``g(x, y)``, delay
``tau(t)`` and initial path ``psi(s)`` of the Ito stochastic delay equation

    dx(t) = f(x(t), x(t - tau(t))) dt + g(x(t), x(t - tau(t))) dw(t),  t >= 0
    x(s)  = psi(s),                                 s in [-tau_bar, 0]

together with the state/noise dimensions and, when known, the one-sided
Lipschitz constants used by :mod:`sddeint.stability`.

Coefficient callables must broadcast over an optional leading batch axis:
``drift`` maps arrays of shape (..., d) x (..., d) -> (..., d) and
``diffusion`` maps to (..., d, m).  ``delay`` takes a scalar time and returns
a scalar; ``initial`` takes a scalar time in [-tau_bar, 0] and returns a
(d,) state vector.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import ConfigError

__all__ = [
    "OneSidedLipschitzData",
    "LinearSddeParams",
    "SddeProblem",
    "gamma_map_linear",
    "make_linear",
    "make_nonlinear_example",
    "make_pantograph",
    "get_preset",
    "preset_names",
]


@dataclass(frozen=True)
class OneSidedLipschitzData:
    """Growth constants of the coefficient pair.

    ``gamma1`` bounds <x2-x1, f(x2,y)-f(x1,y)> <= gamma1*|x2-x1|^2 (may be
    negative), ``gamma2`` is the Lipschitz constant of f in the delayed
    argument, and ``gamma3``/``gamma4`` bound the mean-square variation of g:
    |g(x2,y2)-g(x1,y1)|^2 <= gamma3*|x2-x1|^2 + gamma4*|y2-y1|^2.
    """

    gamma1: float
    gamma2: float
    gamma3: float
    gamma4: float

    def __post_init__(self):
        for name in ("gamma2", "gamma3", "gamma4"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")


@dataclass(frozen=True)
class LinearSddeParams:
    """Coefficients of the scalar test equation
    dx = (a*x + b*x(t-lag)) dt + (c*x + d*x(t-lag)) dw."""

    a: float
    b: float
    c: float
    d: float
    lag: float

    def __post_init__(self):
        if not self.lag > 0:
            raise ConfigError(f"lag must be positive, got {self.lag}")


@dataclass(frozen=True)
class SddeProblem:
    """A fully specified initial value problem."""

    dim_state: int
    dim_noise: int
    drift: Callable[[np.ndarray, np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray, np.ndarray], np.ndarray]
    delay: Callable[[float], float]
    initial: Callable[[float], np.ndarray]
    horizon: float
    delay_floor: float  # tau_bar: initial path covers [-delay_floor, 0]
    delay_ceiling: float | None = None  # sup of tau(t) on [0, horizon], if bounded
    gammas: OneSidedLipschitzData | None = None
    linear: LinearSddeParams | None = None
    name: str = ""

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_noise < 1:
            raise ConfigError("dim_state and dim_noise must be >= 1")
        if not self.horizon > 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if self.delay_floor < 0:
            raise ConfigError("delay_floor must be nonnegative")

    def validate(self) -> None:
        """Probe the coefficients at the initial point and insist on finite values."""
        x0 = np.asarray(self.initial(0.0), dtype=float)
        if x0.shape != (self.dim_state,):
            raise ConfigError(
                f"initial(0.0) must have shape ({self.dim_state},), got {x0.shape}"
            )
        y0 = np.asarray(self.initial(-self.delay_floor), dtype=float)
        f0 = np.asarray(self.drift(x0, y0), dtype=float)
        g0 = np.asarray(self.diffusion(x0, y0), dtype=float)
        if f0.shape != (self.dim_state,):
            raise ConfigError(f"drift must return shape ({self.dim_state},), got {f0.shape}")
        if g0.shape != (self.dim_state, self.dim_noise):
            raise ConfigError(
                f"diffusion must return shape ({self.dim_state}, {self.dim_noise}), "
                f"got {g0.shape}"
            )
        if not (np.all(np.isfinite(f0)) and np.all(np.isfinite(g0))):
            raise ConfigError("coefficients are not finite at the initial point")
        tau0 = float(self.delay(0.0))
        if not np.isfinite(tau0) or tau0 < 0:
            raise ConfigError(f"delay(0) must be finite and nonnegative, got {tau0}")


def gamma_map_linear(params: LinearSddeParams) -> OneSidedLipschitzData:
    """Growth constants of the scalar linear equation:
    (a, |b|, c^2 + |c*d|, d^2 + |c*d|)."""
    a, b, c, d = params.a, params.b, params.c, params.d
    cd = abs(c * d)
    return OneSidedLipschitzData(a, abs(b), c * c + cd, d * d + cd)


def _constant_initial(value: float, dim: int) -> Callable[[float], np.ndarray]:
    vec = np.full(dim, float(value))

    def psi(s: float) -> np.ndarray:
        return vec

    return psi


def make_linear(
    params: LinearSddeParams,
    initial: float | Callable[[float], np.ndarray] = 0.5,
    horizon: float = 1.0,
) -> SddeProblem:
    """Scalar linear problem with constant lag; attaches gamma constants."""
    if not horizon > 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    a, b, c, d = params.a, params.b, params.c, params.d
    psi = initial if callable(initial) else _constant_initial(initial, 1)

    def drift(x, y):
        return a * x + b * y

    def diffusion(x, y):
        return (c * x + d * y)[..., None]

    lag = params.lag
    problem = SddeProblem(
        dim_state=1,
        dim_noise=1,
        drift=drift,
        diffusion=diffusion,
        delay=lambda t: lag,
        initial=psi,
        horizon=float(horizon),
        delay_floor=lag,
        delay_ceiling=lag,
        gammas=gamma_map_linear(params),
        linear=params,
        name=f"linear(a={a}, b={b}, c={c}, d={d}, lag={lag})",
    )
    problem.validate()
    return problem


def make_nonlinear_example(horizon: float = 1.0) -> SddeProblem:
    """Cubic-drift scalar problem with the decaying delay tau(t) = 1/(1+t^2).

    f(x, y) = -4x - 3x^3 + y, g(x, y) = x + y, psi = 1 on [-1, 0].
    The drift is one-sided Lipschitz with gamma1 = -4, gamma2 = 1; the
    diffusion satisfies the mean-square bound with gamma3 = gamma4 = 2.
    """
    if not horizon > 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")

    def drift(x, y):
        return -4.0 * x - 3.0 * x**3 + y

    def diffusion(x, y):
        return (x + y)[..., None]

    problem = SddeProblem(
        dim_state=1,
        dim_noise=1,
        drift=drift,
        diffusion=diffusion,
        delay=lambda t: 1.0 / (1.0 + t * t),
        initial=_constant_initial(1.0, 1),
        horizon=float(horizon),
        delay_floor=1.0,
        delay_ceiling=1.0,
        gammas=OneSidedLipschitzData(-4.0, 1.0, 2.0, 2.0),
        name="nonlinear-cubic",
    )
    problem.validate()
    return problem


def make_pantograph(
    q: float,
    drift: Callable[[np.ndarray, np.ndarray], np.ndarray],
    diffusion: Callable[[np.ndarray, np.ndarray], np.ndarray],
    initial: float | Callable[[float], np.ndarray],
    horizon: float,
    dim_state: int = 1,
    dim_noise: int = 1,
    gammas: OneSidedLipschitzData | None = None,
) -> SddeProblem:
    """Proportional-delay problem: tau(t) = (1-q)t, so x is sampled at q*t.

    The delayed time q*t never drops below zero, hence no initial segment is
    needed beyond psi(0); the lag itself is unbounded in general but reaches
    at most (1-q)*horizon on the integration window.
    """
    if not 0.0 < q < 1.0:
        raise ConfigError(f"pantograph ratio q must lie in (0, 1), got {q}")
    if not horizon > 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    psi = initial if callable(initial) else _constant_initial(initial, dim_state)
    problem = SddeProblem(
        dim_state=dim_state,
        dim_noise=dim_noise,
        drift=drift,
        diffusion=diffusion,
        delay=lambda t: (1.0 - q) * t,
        initial=psi,
        horizon=float(horizon),
        delay_floor=0.0,
        delay_ceiling=(1.0 - q) * float(horizon),
        gammas=gammas,
        name=f"pantograph(q={q})",
    )
    problem.validate()
    return problem


_LINEAR_PRESETS = {
    # name: (a, b, c, d), lag=1, psi = 0.5 on [-1, 0]
    "example1": LinearSddeParams(-2.0, 1.0, 0.5, 0.5, lag=1.0),
    "example2": LinearSddeParams(-6.0, 3.0, 1.0, 1.0, lag=1.0),
    "example3": LinearSddeParams(-20.0, 12.0, 2.0, 1.0, lag=1.0),
}


def _make_pantograph_preset(horizon: float) -> SddeProblem:
    def drift(x, y):
        return -2.0 * x + y

    def diffusion(x, y):
        return (0.5 * x + 0.5 * y)[..., None]

    return make_pantograph(
        0.5,
        drift,
        diffusion,
        initial=0.5,
        horizon=horizon,
        gammas=OneSidedLipschitzData(-2.0, 1.0, 0.5, 0.5),
    )


def get_preset(name: str, horizon: float = 1.0) -> SddeProblem:
    """Build a named preset problem on [0, horizon]."""
    if name in _LINEAR_PRESETS:
        problem = make_linear(_LINEAR_PRESETS[name], initial=0.5, horizon=horizon)
        return replace(problem, name=name)
    if name == "nonlinear":
        return make_nonlinear_example(horizon)
    if name == "pantograph":
        return _make_pantograph_preset(horizon)
    raise ConfigError(
        f"unknown problem preset {name!r}; available: {', '.join(preset_names())}"
    )


def preset_names() -> tuple[str, ...]:
    return tuple(_LINEAR_PRESETS) + ("nonlinear", "pantograph")
