"""Mean-square stability analytics for problems with one-sided Lipschitz data.

With gamma constants (gamma1..gamma4) and a delay bound tau, define

    beta   = 2*gamma1 + 2*gamma2 + gamma3 + gamma4
    beta1  = 2*gamma1 + gamma2 + gamma3
    beta2  = gamma2 + gamma4            (so beta = beta1 + beta2)

For beta < 0 the exact solution decays in mean square at rate nu_plus, the
unique zero of L(nu) = nu + beta1 + beta2 * exp(nu * tau) in (0, -beta].
The split-step scheme with stepsize h contracts its stage second moments by

    beta_h = (1 + h*(gamma2 + gamma3 + gamma4)) / (1 - h*(2*gamma1 + gamma2))

per step over a window of kappa + 1 steps, where kappa = ceil(tau / h); the
induced discrete decay rate is

    nu_h_plus = ln(1 / beta_h) / (2 * (kappa + 1) * h).

All of this is unconditional in h as long as beta < 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, NotApplicableError
from .problem import LinearSddeParams, OneSidedLipschitzData

__all__ = [
    "beta",
    "beta_split",
    "kappa_delta",
    "nu_plus",
    "beta_h",
    "nu_h_plus",
    "linear_ms_stable",
    "solvability_bound",
    "StabilityProfile",
    "make_profile",
]

_SNAP = 1e-9


def beta(gammas: OneSidedLipschitzData) -> float:
    """Continuous-problem decay indicator; negative means certified decay."""
    return 2.0 * gammas.gamma1 + 2.0 * gammas.gamma2 + gammas.gamma3 + gammas.gamma4


def beta_split(gammas: OneSidedLipschitzData) -> tuple[float, float]:
    """(beta1, beta2) with beta = beta1 + beta2 and beta2 >= 0."""
    b1 = 2.0 * gammas.gamma1 + gammas.gamma2 + gammas.gamma3
    b2 = gammas.gamma2 + gammas.gamma4
    return b1, b2


def kappa_delta(tau: float, h: float) -> tuple[int, float]:
    """Grid covering of the delay bound: tau = (kappa - delta) * h.

    kappa = ceil(tau/h) >= 1 and delta in [0, 1); ratios within 1e-9 relative
    of an integer snap to it, so tau = kappa*h yields delta = 0 even when h is
    not binary-representable.  tau = 0 degenerates to kappa = 1, delta = 1.
    """
    if tau < 0:
        raise ConfigError(f"delay bound must be nonnegative, got {tau}")
    if not h > 0:
        raise ConfigError(f"stepsize must be positive, got {h}")
    ratio = tau / h
    nearest = round(ratio)
    if abs(ratio - nearest) <= _SNAP * max(1.0, abs(ratio)):
        ratio = float(nearest)
    kappa = max(1, math.ceil(ratio))
    delta = min(max(kappa - tau / h, 0.0), 1.0)
    return kappa, delta


def nu_plus(gammas: OneSidedLipschitzData, tau: float, tol: float = 1e-12) -> float:
    """Decay rate of the exact solution: the zero of L(nu) in (0, -beta].

    Bisection, at most 200 halvings, stopping when |L| <= tol; beta2 = 0 and
    tau = 0 return the closed forms -beta1 and -beta exactly.
    """
    if tau < 0:
        raise ConfigError(f"delay bound must be nonnegative, got {tau}")
    b = beta(gammas)
    b1, b2 = beta_split(gammas)
    if b >= 0:
        raise NotApplicableError(f"no certified decay: beta = {b} >= 0")
    if b2 == 0.0:
        return -b1
    if tau == 0.0:
        return -b

    def L(nu: float) -> float:
        try:
            grow = math.exp(nu * tau)
        except OverflowError:
            grow = math.inf
        return nu + b1 + b2 * grow

    lo, hi = 0.0, -b  # L(lo) = beta < 0, L(hi) = beta2*(exp(-beta*tau) - 1) >= 0
    # Converge past tol/4 so the residual stays below tol even when a caller
    # re-evaluates L with a slightly different rounding of exp(nu*tau).
    best, best_val = hi, abs(L(hi))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        val = L(mid)
        if abs(val) < best_val:
            best, best_val = mid, abs(val)
        if abs(val) <= 0.25 * tol:
            return mid
        if val < 0.0:
            lo = mid
        else:
            hi = mid
    if lo > 0.0 and abs(L(lo)) < best_val:
        best = lo
    return best


def _moment_ratio(gammas: OneSidedLipschitzData, h: float) -> tuple[float, float]:
    """(growth, damping) with beta_h = growth / damping."""
    growth = 1.0 + h * (gammas.gamma2 + gammas.gamma3 + gammas.gamma4)
    damping = 1.0 - h * (2.0 * gammas.gamma1 + gammas.gamma2)
    return growth, damping


def beta_h(gammas: OneSidedLipschitzData, h: float) -> float:
    """Per-step contraction factor of the scheme's stage second moments."""
    if not h > 0:
        raise ConfigError(f"stepsize must be positive, got {h}")
    growth, damping = _moment_ratio(gammas, h)
    if damping <= 0.0:
        raise ConfigError(
            f"1 - h*(2*gamma1 + gamma2) = {damping} <= 0: contraction undefined"
        )
    return growth / damping


def nu_h_plus(gammas: OneSidedLipschitzData, tau: float, h: float) -> float:
    """Discrete mean-square decay rate for stepsize h and delay bound tau."""
    if not h > 0:
        raise ConfigError(f"stepsize must be positive, got {h}")
    b = beta(gammas)
    if b >= 0:
        raise NotApplicableError(f"no certified decay: beta = {b} >= 0")
    growth, damping = _moment_ratio(gammas, h)
    if damping <= 0.0:
        raise ConfigError(
            f"1 - h*(2*gamma1 + gamma2) = {damping} <= 0: rate undefined"
        )
    kappa, _ = kappa_delta(tau, h)
    return math.log(damping / growth) / (2.0 * (kappa + 1) * h)


def linear_ms_stable(params: LinearSddeParams) -> bool:
    """Strict mean-square stability test for the scalar linear equation:
    a < -|b| - (|c| + |d|)^2 / 2."""
    return params.a < -abs(params.b) - 0.5 * (abs(params.c) + abs(params.d)) ** 2


def solvability_bound(gammas: OneSidedLipschitzData) -> float:
    """Largest stepsize with a guaranteed unique stage solution.

    The implicit stage equation is uniquely solvable for
    (gamma1 + gamma2) * h < 1; when gamma1 + gamma2 <= 0 every stepsize
    works and the bound is infinite.
    """
    s = gammas.gamma1 + gammas.gamma2
    if s <= 0.0:
        return math.inf
    return 1.0 / s


@dataclass(frozen=True)
class StabilityProfile:
    """All decay indicators for one (gammas, tau, h) triple.

    The rate fields are None when beta >= 0 (no certificate applies).
    """

    gammas: OneSidedLipschitzData
    tau: float
    h: float
    kappa: int
    delta: float
    beta: float
    beta1: float
    beta2: float
    beta_h: float | None
    nu_plus: float | None
    nu_h_plus: float | None
    solvability_h: float

    @property
    def certified(self) -> bool:
        return self.beta < 0


def make_profile(gammas: OneSidedLipschitzData, tau: float, h: float) -> StabilityProfile:
    b = beta(gammas)
    b1, b2 = beta_split(gammas)
    kappa, delta = kappa_delta(tau, h)
    if b < 0:
        bh = beta_h(gammas, h)
        nu = nu_plus(gammas, tau)
        nuh = nu_h_plus(gammas, tau, h)
    else:
        bh = nu = nuh = None
    return StabilityProfile(
        gammas=gammas,
        tau=tau,
        h=h,
        kappa=kappa,
        delta=delta,
        beta=b,
        beta1=b1,
        beta2=b2,
        beta_h=bh,
        nu_plus=nu,
        nu_h_plus=nuh,
        solvability_h=solvability_bound(gammas),
    )
