//! Conformal calibration for training data whose corruption is explained
//! by privileged information.
//!
//! The crate covers weighted quantiles, non-conformity scores,
//! likelihood-ratio weights, the calibrators (split CP, weighted CP,
//! Two-Staged, PCP and leave-one-out PCP), linear base models, a synthetic
//! data generator with corruption, and an experiment harness.

pub mod calibrators;
pub mod data;
pub mod error;
pub mod harness;
pub mod models;
pub mod optim;
pub mod scores;
pub mod synth;
pub mod weights;
pub mod wquantile;

pub use data::{Dataset, PredictionSet, Response, Sample, TaskKind, Threshold};
pub use error::{Error, Result};
