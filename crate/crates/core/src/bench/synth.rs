//! Desk-scale synthetic datasets standing in for the large benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CsrMatrix, DenseMatrix, Features, ModelKind, TrainingDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub kind: ModelKind,
    pub n: usize,
    pub m: usize,
    /// Standard deviation of the noise added to targets or class scores.
    pub noise: f64,
    /// Non-zeros per row; `None` gives a dense matrix.
    pub nnz_per_row: Option<usize>,
    /// Fraction of classifier labels replaced by a uniformly drawn wrong
    /// class, independent of the margin.
    pub flip: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            kind: ModelKind::BinaryLogistic,
            n: 1000,
            m: 10,
            noise: 0.1,
            nnz_per_row: None,
            flip: 0.0,
            seed: 0,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Features from N(0, 1); labels from a random ground-truth model plus
/// Gaussian noise (thresholded for the classifiers).
pub fn generate(spec: &SynthSpec) -> Result<TrainingDataset> {
    if spec.n == 0 || spec.m == 0 {
        return Err(Error::config("synthetic dataset needs n, m > 0"));
    }
    if !(0.0..1.0).contains(&spec.flip) {
        return Err(Error::config(format!("label flip fraction {} must lie in [0, 1)", spec.flip)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, m) = (spec.n, spec.m);
    let features = match spec.nnz_per_row {
        None => Features::Dense(DenseMatrix::new(n, m, (0..n * m).map(|_| normal(&mut rng)).collect())?),
        Some(k) => {
            if k == 0 || k > m {
                return Err(Error::config(format!("{k} non-zeros per row with {m} columns")));
            }
            let rows: Vec<Vec<(u32, f64)>> = (0..n)
                .map(|_| {
                    rand::seq::index::sample(&mut rng, m, k)
                        .into_iter()
                        .map(|c| (c as u32, normal(&mut rng)))
                        .collect()
                })
                .collect();
            Features::Sparse(CsrMatrix::from_row_entries(m, &rows)?)
        }
    };
    let scale = 1.0 / (spec.nnz_per_row.unwrap_or(m) as f64).sqrt();
    let truth: Vec<f64> = (0..spec.kind.param_dim(m)).map(|_| normal(&mut rng) * scale * 3.0).collect();
    let mut labels: Vec<f64> = (0..n)
        .map(|i| match spec.kind {
            ModelKind::Linear => features.row_dot(i, &truth) + spec.noise * normal(&mut rng),
            ModelKind::BinaryLogistic => {
                if features.row_dot(i, &truth) + spec.noise * normal(&mut rng) >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            ModelKind::MultinomialLogistic { classes } => {
                let mut best = (0, f64::NEG_INFINITY);
                for k in 0..classes {
                    let z = features.row_dot(i, &truth[k * m..(k + 1) * m]) + spec.noise * normal(&mut rng);
                    if z > best.1 {
                        best = (k, z);
                    }
                }
                best.0 as f64
            }
        })
        .collect();
    let classes = spec.kind.classes();
    if spec.flip > 0.0 && classes > 1 {
        for y in labels.iter_mut() {
            if rng.random_bool(spec.flip) {
                *y = match spec.kind {
                    ModelKind::BinaryLogistic => -*y,
                    _ => ((*y as usize + rng.random_range(1..classes)) % classes) as f64,
                };
            }
        }
    }
    TrainingDataset::new(features, labels, spec.kind)
}

/// Seeded shuffle, then the first `ceil(frac * n)` rows train and the rest
/// validate.
pub fn split(ds: &TrainingDataset, frac: f64, seed: u64) -> Result<(TrainingDataset, TrainingDataset)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::config(format!("split fraction {frac} must lie in (0, 1)")));
    }
    let n = ds.n();
    let cut = ((frac * n as f64).ceil() as usize).min(n);
    if cut == 0 || cut == n {
        return Err(Error::config("split leaves one side empty"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((ds.subset(&order[..cut])?, ds.subset(&order[cut..])?))
}
