//! Deep-layer limit of residual network training.
//!
//! An `n`-layer ResNet `X_{i+1} = X_i + σ(K_i X_i + b_i) / n` is the explicit
//! Euler discretization of `Ẋ = σ(K(t) X + b(t))`. This crate evaluates and
//! differentiates both training objectives exactly, minimizes them, and runs
//! the experiments that compare the two as `n` grows.

pub mod adjoint;
pub mod continuum;
pub mod error;
pub mod fit;
pub mod harness;
pub mod io;
pub mod model;
pub mod optimize;
pub mod spaces;

pub use adjoint::{fd_check, gradient_en, objective_directional, state_jvp, FdReport, GradientSet, PerturbationSet};
pub use continuum::{
    gateaux_objective, gateaux_state, gradient_einf, objective_einf, ode_solve, reg_r1inf, reg_r2inf,
    ContinuumGradient, ContinuumTrajectory, GateauxKernel, OdeMethod, OdeSolveConfig,
};
pub use error::{Error, Result};
pub use model::{
    forward_pass, reg_r1n, reg_r2n, reg_r3, reg_r4, Activation, Classifier, HyperParams, ObjectiveBreakdown,
    TrainingProblem, TrainingSet, Trajectory,
};
pub use optimize::{minimize, multistart, MultistartResult, OptimizeConfig, OptimizeResult, StepRule};
pub use spaces::{
    d1_distance, d2_distance, extend_piecewise_constant, param_distance, restrict_cell_average, upsample,
    ContinuumParams, ContinuumPath, DiscreteParams, DiscretePath, Element, Grid, MatrixPath, Nodal, ParamDistance,
    ParamSet, StepFunction, VectorPath,
};
