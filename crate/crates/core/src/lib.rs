//! Robust generalized score matching for pairwise exponential-family
//! graphical models.
//!
//! The pipeline is: per-observation score-matching statistics
//! ([`scorestats`]), robust aggregation by the geometric median of block
//! means ([`gmom`]), and a quadratic (optionally ℓ1-penalized) estimator
//! ([`estimator`]). [`contamination`], [`simulate`] and [`evaluation`] form
//! the simulation harness; [`ingest`] fits tabular data; [`cli`] drives it all.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the `f64`
//! aliases below are what the harness and CLI use.

pub mod cli;
pub mod contamination;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod gmom;
pub mod ingest;
pub mod linalg;
pub mod models;
pub mod scalar;
pub mod scorestats;
pub mod simulate;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type PairwiseModel = models::PairwiseModel<f64>;
pub type ScoreStats = scorestats::ScoreStats<f64>;
pub type GmomConfig = gmom::GmomConfig<f64>;
pub type ConcentrationParams = gmom::ConcentrationParams<f64>;
pub type EstimatorConfig = estimator::EstimatorConfig<f64>;
pub type EstimatorResult = estimator::EstimatorResult<f64>;
pub type IrrepDiagnostics = estimator::IrrepDiagnostics<f64>;

pub use models::{DomainSpec, Family, ParamLayout, Support};
