"""Strong-order split-step integration for stochastic delay differential equations.

The package bundles three fixed-step schemes for Ito equations with
state-dependent delays (a split-step backward Euler method whose delayed
arguments interpolate stage values, its legacy variant for scalar linear
problems with constant lag, and an Euler-Maruyama baseline), exact dyadic
Brownian coupling for strong-convergence studies, analytic mean-square
stability rates, and a Monte Carlo experiment harness with a CLI.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DivergenceError,
    HistoryUnderflowError,
    NotApplicableError,
    SddeError,
    StageSolveError,
)
from .problem import (
    LinearSddeParams,
    OneSidedLipschitzData,
    SddeProblem,
    gamma_map_linear,
    get_preset,
    make_linear,
    make_nonlinear_example,
    make_pantograph,
    preset_names,
)
from .paths import BrownianLattice, coarsen, coarsen_array, exact_steps, generate, path_seed
from .stepper import (
    SCHEMES,
    DelayedRef,
    EnsembleResult,
    SolverConfig,
    StageHistory,
    TrajectoryResult,
    delayed_ref,
    em_step,
    run_ensemble,
    run_trajectory,
    solve_stage,
    ssbe_legacy_step,
    ssbe_step,
)
from .experiments import (
    ConvergenceConfig,
    ExperimentReport,
    StabilityTraceConfig,
    Table1Result,
    TraceResult,
    empirical_rate,
    fit_order,
    ms_trace,
    strong_error,
    table1,
)
from . import stability
