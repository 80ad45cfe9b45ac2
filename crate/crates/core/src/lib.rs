//! Effect curves for longitudinal modified treatment policies.
//!
//! The crate estimates the mean counterfactual outcome at every follow-up
//! time under a modified treatment policy. Three estimators are provided:
//! per-time sequential g-computation, a time-smoothed g-computation that
//! pools regressions along each diagonal of the outcome/time grid, and a
//! time-smoothed sequentially doubly robust estimator with isotonic
//! calibration and cross-fitting. The last one yields per-unit influence
//! values that feed pointwise intervals and multiplier-bootstrap bands.

pub mod data;
pub mod estimators;
pub mod inference;
pub mod isotonic;
pub mod learners;
pub mod nuisance;
pub mod policy;
pub mod rng;
pub mod simulation;

pub use data::{LongDataset, NodeSpec, RawTable, WideDataset};
pub use estimators::{estimate, estimate_with_oracle, CurveEstimate, EstimatorKind, EstimatorOptions};
pub use inference::{InferenceOptions, InferenceResult};
pub use simulation::{DgpConfig, Study};
pub use learners::LearnerConfig;
pub use policy::Policy;
