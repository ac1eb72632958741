//! Outlier-robust time-of-arrival source localization.
//!
//! The core solver is a two-block ADMM ([`admm`]) whose only
//! loss-dependent step is a scalar proximal mapping ([`loss`]). Around it
//! sit a TOA measurement model with alpha-stable noise ([`model`]),
//! Gauss-Newton and IRLS reference estimators ([`baselines`]), a registry
//! that builds any of them by name ([`estimator`]) and a Monte-Carlo
//! harness ([`experiments`]).

pub mod admm;
pub mod baselines;
pub mod estimator;
pub mod experiments;
pub mod export;
pub mod loss;
pub mod model;

pub use admm::{AdmmConfig, AdmmState, KktReport, SolveResult};
pub use estimator::{Estimate, Estimator, EstimatorRegistry};
pub use experiments::{ExperimentConfig, Geometry, Sweep, SweepResult};
pub use loss::{LossSpec, ProxParams};
pub use model::{Measurements, RngSeed, Scenario, StableParams};
