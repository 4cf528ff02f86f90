"""Seeded Brownian increment lattices with exact dyadic coarsening.

A lattice stores independent N(0, fine_step) increments on the uniform fine
grid of [0, horizon].  Coarse grids consume sums of consecutive fine
increments, so every stepsize in a convergence study is driven by the same
underlying Brownian path.

For power-of-two factors, coarsening is implemented as repeated pairwise
halving (``x[0::2] + x[1::2]``).  Floating-point addition is not associative,
but the halving tree composes with itself bitwise: coarsening by p*q equals
coarsening by p followed by coarsening by q, exactly, whenever p and q are
powers of two.  General divisors fall back to a groupwise sum without that
bitwise guarantee.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "BrownianLattice",
    "generate",
    "coarsen",
    "coarsen_array",
    "path_seed",
    "exact_steps",
]


@dataclass(frozen=True)
class BrownianLattice:
    """Increments of one Brownian path on the fine grid.

    ``increments[k]`` is w(t_{k+1}) - w(t_k) with t_k = k * fine_step;
    each entry is N(0, fine_step), shape (n_steps, dim_noise).
    """

    seed: object
    horizon: float
    fine_step: float
    dim_noise: int
    increments: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]


def exact_steps(horizon: float, step: float) -> int:
    """Number of steps of size ``step`` covering [0, horizon]; the ratio must
    be an integer up to 1e-9 relative tolerance."""
    if not step > 0:
        raise ConfigError(f"step must be positive, got {step}")
    if not horizon > 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    ratio = horizon / step
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
        raise ConfigError(
            f"horizon {horizon} is not an integer multiple of step {step}"
        )
    return n


def path_seed(master_seed: int, index: int) -> list[int]:
    """Seed material for path ``index`` of an ensemble.

    Feeding the pair into numpy's SeedSequence gives streams that are
    independent across indices and identical however the ensemble is chunked.
    """
    if index < 0:
        raise ConfigError(f"path index must be nonnegative, got {index}")
    return [int(master_seed), int(index)]


def generate(seed, horizon: float, fine_step: float, dim_noise: int = 1) -> BrownianLattice:
    """Draw a fresh lattice from ``seed`` (an int or a sequence of ints)."""
    if dim_noise < 1:
        raise ConfigError(f"dim_noise must be >= 1, got {dim_noise}")
    n = exact_steps(horizon, fine_step)
    rng = np.random.default_rng(seed)
    increments = rng.standard_normal((n, dim_noise)) * np.sqrt(fine_step)
    return BrownianLattice(
        seed=seed,
        horizon=float(horizon),
        fine_step=float(fine_step),
        dim_noise=int(dim_noise),
        increments=increments,
    )


def coarsen_array(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive groups of ``factor`` increments along axis 0."""
    n = increments.shape[0]
    if factor < 1 or int(factor) != factor:
        raise ConfigError(f"coarsening factor must be a positive integer, got {factor}")
    factor = int(factor)
    if n % factor:
        raise ConfigError(
            f"factor {factor} does not divide the lattice length {n}"
        )
    if factor & (factor - 1) == 0:
        out = increments
        while factor > 1:
            out = out[0::2] + out[1::2]
            factor //= 2
        return out
    groups = increments.reshape((n // factor, factor) + increments.shape[1:])
    return groups.sum(axis=1)


def coarsen(lattice: BrownianLattice, factor: int) -> np.ndarray:
    """Increments of the same path on the grid with step factor * fine_step."""
    return coarsen_array(lattice.increments, factor)
