"""Rough-path averaging numerics: mixed fBm/Bm lifts, rough integration,
fast-slow solvers, and averaging-principle experiments."""

__version__ = "0.1.0"

from .averaging import (
    AveragedDrift,
    ConvergenceReport,
    ConvergenceRow,
    DeltaGapRow,
    FbarEstimate,
    FrozenEnsemble,
    MixingReport,
    breakpoint_floor,
    convergence_experiment,
    delta_gap_probe,
    estimate_fbar,
    khasminskii_auxiliary,
    khasminskii_delta,
    mixing_probe,
    sample_frozen_ensemble,
    solve_averaged,
    tree_sum,
)
from .cli import emit_plots_data, main as cli_main
from .config import ExperimentConfig, RunManifest
from .errors import ConfigurationError, DivergenceError, DomainError, RoughAvgError
from .integrate import (
    ControlledPath,
    TripletView,
    admissible_alpha_window,
    compensated_riemann,
    frac_integral,
    rough_integral,
)
from .lift import (
    LiftDiagnostics,
    RoughLift,
    check_chen,
    check_geometric,
    diagnose,
    lift_from_arrays,
    lift_mixed,
    save_lift,
)
from .paths import (
    GaussianPath,
    Grid,
    HolderEstimate,
    fbm_covariance,
    holder_norm_estimate,
    load_path,
    sample_bm,
    sample_fbm,
    save_path,
)
from .presets import Preset, get_preset, preset_names
from .solver import (
    CoefficientSet,
    FastSlowSolution,
    finite_difference_jacobian,
    ito_correction,
    required_substep_factor,
    solve_fast_slow,
    solve_frozen,
    solve_ito,
    solve_rde,
)

__all__ = [
    "__version__",
    "AveragedDrift",
    "CoefficientSet",
    "ConfigurationError",
    "ControlledPath",
    "ConvergenceReport",
    "ConvergenceRow",
    "DeltaGapRow",
    "DivergenceError",
    "DomainError",
    "ExperimentConfig",
    "FastSlowSolution",
    "FbarEstimate",
    "FrozenEnsemble",
    "GaussianPath",
    "Grid",
    "HolderEstimate",
    "LiftDiagnostics",
    "MixingReport",
    "Preset",
    "RoughAvgError",
    "RoughLift",
    "RunManifest",
    "TripletView",
    "admissible_alpha_window",
    "breakpoint_floor",
    "check_chen",
    "check_geometric",
    "cli_main",
    "compensated_riemann",
    "convergence_experiment",
    "delta_gap_probe",
    "diagnose",
    "emit_plots_data",
    "estimate_fbar",
    "fbm_covariance",
    "finite_difference_jacobian",
    "frac_integral",
    "holder_norm_estimate",
    "ito_correction",
    "khasminskii_auxiliary",
    "khasminskii_delta",
    "lift_from_arrays",
    "lift_mixed",
    "load_path",
    "mixing_probe",
    "preset_names",
    "get_preset",
    "required_substep_factor",
    "rough_integral",
    "sample_bm",
    "sample_fbm",
    "sample_frozen_ensemble",
    "solve_averaged",
    "save_lift",
    "save_path",
    "solve_fast_slow",
    "solve_frozen",
    "solve_ito",
    "solve_rde",
    "tree_sum",
]
