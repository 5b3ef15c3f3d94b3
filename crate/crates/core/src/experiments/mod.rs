//! Strong-error studies and diagnostic suites built on the solvers.

mod diagnostics;
mod strong;

pub use diagnostics::{
    contraction_ratio, delta_sweep, diagnostics_suite, ergodic_decay_fit, fit_decay_rate, holder_increments,
    moment_table, spread, DecayFit, DeltaSweep, DeltaSweepConfig, DiagnosticsConfig, DiagnosticsReport,
    ErgodicityConfig, HolderConfig, MomentBound, SlopeCurve,
};
pub use strong::{
    bootstrap_slope_ci, convergence_study, dyadic_grid, epsilon_grid_problems, rate_fit, strong_error,
    ConvergenceReport, RateFit, StrongError, StudyConfig,
};
