//! Experiment drivers: the n-ladder, the Euler error bound, the discrete
//! Morrey and recovery-sequence checks, smoothness and rate diagnostics.

pub mod diagnostics;
pub mod euler;
pub mod ladder;
pub mod rate;

pub use diagnostics::{morrey_property, recovery_check, smoothness_diagnostic, MorreyReport, RecoveryRow};
pub use euler::{euler_bound_check, trajectory_gap, EulerBoundReport, EulerBoundRow};
pub use ladder::{ladder_run, ContinuumFit, LadderConfig, LadderOutcome, LadderRecord};
pub use rate::rate_fit;
