//! Penalized synthetic control estimation for several treated units, with
//! placebo (permutation) and end-of-sample inference and a Monte Carlo
//! harness for their size and power.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the usual `f64` instantiation.

// `!(x >= 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod estimator;
pub mod inference;
pub mod panel;
pub mod scalar;
pub mod simulation;
pub mod solver;

pub use scalar::Scalar;

pub type Panel = panel::PanelData<f64>;
pub type Panel32 = panel::PanelData<f32>;
pub type Weights = solver::WeightMatrix<f64>;
pub type Weights32 = solver::WeightMatrix<f32>;
pub type Errors = estimator::ErrorMatrix<f64>;
pub type Errors32 = estimator::ErrorMatrix<f32>;
pub type CvResult = estimator::CvResult<f64>;
pub type TestResult = inference::TestResult<f64>;
pub type TestResult32 = inference::TestResult<f32>;
pub type FactorPath = simulation::FactorPath<f64>;
pub type Options = solver::SolverOptions<f64>;
