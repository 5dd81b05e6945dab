//! Incremental deletion propagation for linear and logistic regression
//! trained with (mini-batch) gradient descent.

pub mod baselines;
pub mod bench;
pub mod capture;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod linearizer;
pub mod metrics;
pub mod model;
pub mod opt;
pub mod provenance;
pub mod service;
pub mod trainer;
pub mod update;

pub use error::{Error, Result};
