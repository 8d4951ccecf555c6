//! Smoothed-TV Tikhonov regularization for linear inverse problems on regular
//! grids, with Morozov discrepancy-principle parameter choice and numerical
//! certification of Bregman-distance convergence bounds.

pub mod bregman;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod forward_ops;
pub mod grid;
pub mod mdp;
pub mod scalar;
pub mod smoothed_tv;
pub mod solver;

pub use bregman::{bregman, bregman_sym, bregman_sym_gradient_form, HalfSquaredNorm, SmoothFunctional};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, RateRecord, RateReport, Strategy};
pub use forward_ops::{ForwardOperator, InjectivityDiagnostic, Measurement, OperatorKind};
pub use grid::{divergence, gradient, inner, norm_l2, Field, Grid, VectorField};
pub use mdp::{
    alpha_lower_bound, choose_alpha_mdp, discrepancy, phi_index, IndexFunction, MdpConfig, MdpError, MdpResult, TracePoint,
};
pub use scalar::Scalar;
pub use smoothed_tv::SmoothedTvPenalty;
pub use solver::{
    cost, cost_gradient, minimize, optimality_residual, variational_gap, InitialGuess, SolveConfig, SolveError, Solution,
};

pub type Grid64 = Grid<f64>;
pub type Field64 = Field<f64>;
pub type Field32 = Field<f32>;
pub type ForwardOperator64 = ForwardOperator<f64>;
pub type Measurement64 = Measurement<f64>;
pub type Penalty64 = SmoothedTvPenalty<f64>;
pub type Solution64 = Solution<f64>;
pub type MdpConfig64 = MdpConfig<f64>;
pub type IndexFunction64 = IndexFunction<f64>;
