use serde::Serialize;

use super::format::{padded, CHUNK_HEADER_LEN, HEADER_LEN};
use super::{IterMatrix, ProvenanceCache};
use crate::linalg::packed_len;
use crate::linearizer::CoeffData;

/// Serialised size of a cache, broken down by section.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheStats {
    pub header_bytes: usize,
    pub matrix_bytes: usize,
    pub moment_bytes: usize,
    pub coeff_bytes: usize,
    pub frozen_bytes: usize,
    pub param_bytes: usize,
    pub total_bytes: usize,
    /// Per-iteration data (matrices, moments, coefficients), headers included.
    pub data_bytes: usize,
    /// Mean stored rank in factor mode.
    pub average_rank: Option<f64>,
    /// `tau * r * d * 8 * 2`: the two factors at the observed mean rank.
    pub analytic_factor_bytes: Option<f64>,
}

fn chunk(payload: usize) -> usize {
    CHUNK_HEADER_LEN + padded(payload)
}

pub fn cache_stats(cache: &ProvenanceCache) -> CacheStats {
    let d = cache.param_dim();
    let mut matrix_bytes = 0;
    let mut moment_bytes = 0;
    let mut ranks = Vec::new();
    for e in &cache.iterations {
        matrix_bytes += match &e.matrix {
            IterMatrix::Full(_) => chunk(packed_len(d) * 8),
            IterMatrix::Factors { rank, .. } => {
                ranks.push(*rank);
                chunk(8 + 2 * d * rank * 8)
            }
            IterMatrix::Absent => 0,
        };
        moment_bytes += chunk(e.moment.len() * 8);
    }
    let b = cache.header.hp.batch_size;
    let coeff_bytes = match &cache.coeffs {
        None => 0,
        Some(c) => {
            let per = match &c.data {
                CoeffData::Binary(_) => chunk(b * 4),
                CoeffData::Multinomial { classes, .. } => chunk(b * classes * 8),
            };
            per * (c.slots() / b.max(1))
        }
    };
    let frozen_bytes = match &cache.frozen {
        None => 0,
        Some(c) => match &c.data {
            CoeffData::Binary(s) => chunk(s.len() * 4),
            CoeffData::Multinomial { logits, .. } => chunk(logits.len() * 8),
        },
    };
    let param_bytes = chunk(cache.w0.len() * 8) + chunk(cache.trained.len() * 8);
    let data_bytes = matrix_bytes + moment_bytes + coeff_bytes;
    let total_bytes = HEADER_LEN + data_bytes + frozen_bytes + param_bytes;
    let average_rank = (!ranks.is_empty()).then(|| ranks.iter().sum::<usize>() as f64 / ranks.len() as f64);
    CacheStats {
        header_bytes: HEADER_LEN,
        matrix_bytes,
        moment_bytes,
        coeff_bytes,
        frozen_bytes,
        param_bytes,
        total_bytes,
        data_bytes,
        average_rank,
        analytic_factor_bytes: average_rank.map(|r| cache.iterations.len() as f64 * r * d as f64 * 16.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::{train_and_capture, write_cache, CacheMode, CaptureOptions};
    use crate::model::{build_schedule, DenseMatrix, Features, Hyperparams, ModelKind, TrainingDataset};
    use crate::trainer::TrainOptions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_cache(mode: CacheMode, epsilon: f64) -> ProvenanceCache {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, m) = (40, 6);
        let x = (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ds = TrainingDataset::new(Features::Dense(DenseMatrix::new(n, m, x).unwrap()), y, ModelKind::Linear).unwrap();
        let hp = Hyperparams {
            eta: 0.1,
            lambda: 0.1,
            batch_size: 10,
            iterations: 5,
            seed: 1,
            model_kind: ModelKind::Linear,
        };
        let s = build_schedule(n, &hp).unwrap();
        let opts = CaptureOptions {
            mode,
            epsilon,
            ..Default::default()
        };
        train_and_capture(&ds, &hp, &s, &TrainOptions::default(), &opts).unwrap().1
    }

    #[test]
    fn totals_match_serialised_size() {
        for (mode, eps) in [(CacheMode::DenseFull, 0.0), (CacheMode::DenseSvd, 0.2)] {
            let c = linear_cache(mode, eps);
            assert_eq!(cache_stats(&c).total_bytes, write_cache(&c).len());
        }
    }

    #[test]
    fn empty_cache_has_no_data_bytes() {
        let mut c = linear_cache(CacheMode::DenseFull, 0.0);
        c.iterations.clear();
        assert_eq!(cache_stats(&c).data_bytes, 0);
    }

    #[test]
    fn dense_full_matrix_bytes() {
        let c = linear_cache(CacheMode::DenseFull, 0.0);
        let s = cache_stats(&c);
        let m = 6;
        assert_eq!(s.matrix_bytes, 5 * (16 + m * (m + 1) / 2 * 8));
        assert_eq!(s.moment_bytes, 5 * (16 + m * 8));
    }

    #[test]
    fn factor_bytes_scale_with_rank() {
        let mut c = linear_cache(CacheMode::DenseSvd, 0.0);
        let full = cache_stats(&c);
        for e in &mut c.iterations {
            if let IterMatrix::Factors { rank, p, v } = &mut e.matrix {
                *rank /= 2;
                p.truncate(6 * *rank);
                v.truncate(6 * *rank);
            }
        }
        let half = cache_stats(&c);
        assert_eq!(full.average_rank, Some(6.0));
        assert_eq!(half.average_rank, Some(3.0));
        let per_iter_overhead = 16 + 8;
        assert_eq!(half.matrix_bytes - 5 * per_iter_overhead, (full.matrix_bytes - 5 * per_iter_overhead) / 2);
    }
}
