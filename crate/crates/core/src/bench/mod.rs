//! Operator surface: data loading, error injection, synthetic data,
//! sweeps and report rendering.

pub mod ingest;
pub mod inject;
pub mod render;
pub mod sweep;
pub mod synth;
