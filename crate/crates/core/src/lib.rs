//! Spline dynamic programming.
//!
//! Value functions are represented as multivariate simplex B-splines on a
//! triangulated state domain and learned online with recursive least-squares
//! temporal-difference updates. Continuity between simplices is enforced by
//! keeping every coefficient vector in the null space of the smoothness
//! matrix, including under the directional forgetting update.
//!
//! The crate also ships the pendulum swing-up environment, a value-gradient
//! policy and an experiment harness used to exercise the learner end to end.

pub mod cli;
pub mod config;
pub mod continuity;
pub mod control;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod pendulum;
pub mod spline;

pub use config::{Config, LearningSetup};
pub use continuity::{NullSpaceProjector, SmoothnessMatrix};
pub use control::{PolicyParams, RewardParams};
pub use error::{Error, Result};
pub use estimator::{DenseEstimator, EstimatorState, Hyperparams, ReducedEstimator, TdRule, ValueLearner};
pub use geometry::{Simplex, Triangulation};
pub use harness::{ExperimentConfig, Summary, TrialRecord, Variant};
pub use pendulum::{PendulumParams, PendulumState};
pub use spline::{BasisRow, MultiIndex, SplineFunction, SplineSpace, SplineView};
