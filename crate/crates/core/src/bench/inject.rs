use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::TrainingDataset;

pub const DEFAULT_ERROR_FACTOR: f64 = 10.0;

/// Picks `ceil(rate * n)` rows uniformly at random and multiplies their
/// features by `factor`. Returns the dirty copy and the sorted row indices.
pub fn inject_errors(ds: &TrainingDataset, rate: f64, factor: f64, seed: u64) -> Result<(TrainingDataset, Vec<u32>)> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::config(format!("error rate {rate} must lie in (0, 1)")));
    }
    if !factor.is_finite() {
        return Err(Error::config("error factor must be finite"));
    }
    let rows = pick_rows(ds.n(), rate, seed);
    Ok((ds.with_scaled_rows(&rows, factor)?, rows))
}

/// `ceil(rate * n)` distinct sorted row indices.
pub fn pick_rows(n: usize, rate: f64, seed: u64) -> Vec<u32> {
    let count = ((rate * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<u32> = rand::seq::index::sample(&mut rng, n, count)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    rows.sort_unstable();
    rows
}
