//! Margin-based transfer bounds for meta-learned multiclass classifiers.
//!
//! The crate covers the losses (margin, ramp margin loss, multi-margin
//! surrogate), the complexity estimators that feed the bounds (Monte Carlo
//! Gaussian and Rademacher complexity, Massart, greedy covers and chaining),
//! the bound evaluators themselves, and a synthetic task-environment
//! simulator that checks the bounds empirically.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64` and
//! `*32` aliases below name the concrete instantiations. The experiment
//! harness and CLI run in `f64`.

// `!(x > 0)` style checks are deliberate: they reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod complexity;
mod error;
pub mod harness;
pub mod learners;
pub mod losses;
pub mod sampling;
mod scalar;
pub mod seed;

pub use bounds::{BoundInputs, BoundKind, BoundReport};
pub use complexity::{ComplexityEstimate, Cover, FunctionValueMatrix};
pub use error::{Error, Result};
pub use learners::{FeatureFamily, FeatureKind, FeatureMap, Learner, LinearLearner, NearestCentroid};
pub use losses::{LossKind, MarginConfig, ScoringFunction};
pub use sampling::{EnvironmentSpec, Episode, EpisodeShape, LabeledExample, MetaSample, TaskSpec};
pub use scalar::Scalar;
pub use seed::SeedPolicy;

pub type Episode64 = Episode<f64>;
pub type MetaSample64 = MetaSample<f64>;
pub type TaskSpec64 = TaskSpec<f64>;
pub type EnvironmentSpec64 = EnvironmentSpec<f64>;
pub type FeatureFamily64 = FeatureFamily<f64>;
pub type FunctionValueMatrix64 = FunctionValueMatrix<f64>;
pub type BoundInputs64 = BoundInputs<f64>;
pub type BoundReport64 = BoundReport<f64>;

pub type Episode32 = Episode<f32>;
pub type MetaSample32 = MetaSample<f32>;
pub type EnvironmentSpec32 = EnvironmentSpec<f32>;
pub type FunctionValueMatrix32 = FunctionValueMatrix<f32>;
pub type BoundInputs32 = BoundInputs<f32>;
pub type BoundReport32 = BoundReport<f32>;
