//! Confidence intervals for crowd-worker quality from inter-worker
//! agreement alone.
//!
//! * [`dataset`] holds sparse worker/task responses and the overlap and
//!   agreement bookkeeping every estimator reads.
//! * [`binary`] estimates binary error rates for any number of workers on
//!   non-regular data, combining worker triples with minimum-variance
//!   weights.
//! * [`kary`] recovers k-ary response-probability matrices for a worker
//!   triple by a spectral method, with delta-method intervals.
//! * [`simulator`] generates synthetic crowds and runs coverage and
//!   interval-size experiments.

pub mod binary;
pub mod dataset;
pub mod kary;
pub mod numerics;
pub mod simulator;

pub use dataset::{AgreementStats, DatasetError, GoldLabels, ResponseDataset};
pub use numerics::{ConfidenceInterval, FailureReason, Matrix};
