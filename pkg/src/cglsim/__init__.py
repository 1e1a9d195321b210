"""Pseudo-spectral Monte Carlo harness for averaging principles in
stochastic complex Ginzburg-Landau dynamics with oscillating coefficients."""

__version__ = "0.1.0"

from .torus_spectral import (
    TorusGrid,
    SpectralField,
    BlowUpError,
    make_grid,
    sobolev_norm,
    lp_norm,
    project,
    cubic_term,
)
from .coefficients import (
    CoefficientSet,
    AveragedSet,
    DiffusionOp,
    ConditionReport,
    ConditionError,
    builtin_family,
    kbm_average,
    check_conditions,
    cubic_dissipativity_scan,
)
from .noise import WienerSampler, NoiseBank, coupled_pair
from .measures import (
    EmpiricalMeasure,
    MeasureSizeError,
    wasserstein2,
    second_moment,
    hausdorff_semidistance,
)
from .sde_integrator import (
    IntegratorConfig,
    Trajectory,
    EnsembleResult,
    PullbackResult,
    PullbackNotConverged,
    step,
    solve_path,
    solve_ensemble,
    pullback_bounded_solution,
    contraction_test,
    time_increment_modulus,
)
from .experiments import (
    ExperimentConfig,
    ConvergenceReport,
    run_first_bogolyubov,
    run_second_bogolyubov,
    run_periodicity_check,
    run_global_averaging,
)

__all__ = [
    "TorusGrid", "SpectralField", "BlowUpError", "make_grid",
    "sobolev_norm", "lp_norm", "project", "cubic_term",
    "CoefficientSet", "AveragedSet", "DiffusionOp", "ConditionReport",
    "ConditionError", "builtin_family", "kbm_average", "check_conditions",
    "cubic_dissipativity_scan",
    "WienerSampler", "NoiseBank", "coupled_pair",
    "EmpiricalMeasure", "MeasureSizeError", "wasserstein2",
    "second_moment", "hausdorff_semidistance",
    "IntegratorConfig", "Trajectory", "EnsembleResult", "PullbackResult",
    "PullbackNotConverged", "step", "solve_path", "solve_ensemble",
    "pullback_bounded_solution", "contraction_test",
    "time_increment_modulus",
    "ExperimentConfig", "ConvergenceReport", "run_first_bogolyubov",
    "run_second_bogolyubov", "run_periodicity_check",
    "run_global_averaging",
]
