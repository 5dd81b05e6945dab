//! Model comparison and validation metrics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ModelKind, TrainingDataset};
use crate::trainer::class_scores;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn l2_dist(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    let (na, nb) = (linalg::norm2(a), linalg::norm2(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedMetric("cosine of a zero vector".into()));
    }
    Ok((linalg::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn check_params(ds: &TrainingDataset, w: &[f64]) -> Result<()> {
    if w.len() != ds.param_dim() {
        return Err(Error::shape(format!(
            "parameter vector has length {}, dataset needs {}",
            w.len(),
            ds.param_dim()
        )));
    }
    Ok(())
}

/// Mean squared error of a linear model on `ds`.
pub fn mse(ds: &TrainingDataset, w: &[f64]) -> Result<f64> {
    if ds.kind() != ModelKind::Linear {
        return Err(Error::config("mse needs a linear-regression dataset"));
    }
    check_params(ds, w)?;
    let x = ds.features();
    let total: f64 = (0..ds.n())
        .map(|i| {
            let r = ds.label(i) - x.row_dot(i, w);
            r * r
        })
        .sum();
    Ok(total / ds.n() as f64)
}

/// Fraction of rows classified correctly. Ties at a zero score go to `+1`
/// (binary) or the lowest class index (multinomial).
pub fn validation_accuracy(ds: &TrainingDataset, w: &[f64]) -> Result<f64> {
    check_params(ds, w)?;
    let x = ds.features();
    let mut correct = 0usize;
    match ds.kind() {
        ModelKind::Linear => return Err(Error::config("accuracy needs a classification dataset")),
        ModelKind::BinaryLogistic => {
            for i in 0..ds.n() {
                let pred = if x.row_dot(i, w) >= 0.0 { 1.0 } else { -1.0 };
                correct += (pred == ds.label(i)) as usize;
            }
        }
        ModelKind::MultinomialLogistic { classes } => {
            let mut z = vec![0.0; classes];
            for i in 0..ds.n() {
                class_scores(x, i, w, ds.m(), &mut z);
                let mut best = 0;
                for k in 1..classes {
                    if z[k] > z[best] {
                        best = k;
                    }
                }
                correct += (best == ds.label(i) as usize) as usize;
            }
        }
    }
    Ok(correct as f64 / ds.n() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignFlips {
    pub flips: usize,
    pub max_mag_change: f64,
}

/// Coordinates whose sign differs (zero counts as positive) and the largest
/// absolute coordinate change.
pub fn sign_flip_report(a: &[f64], b: &[f64]) -> Result<SignFlips> {
    same_len(a, b)?;
    let mut out = SignFlips {
        flips: 0,
        max_mag_change: 0.0,
    };
    for (x, y) in a.iter().zip(b) {
        if (*x >= 0.0) != (*y >= 0.0) {
            out.flips += 1;
        }
        out.max_mag_change = out.max_mag_change.max((x - y).abs());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DenseMatrix, Features};
    use proptest::prelude::*;

    fn dense(rows: &[Vec<f64>], y: Vec<f64>, kind: ModelKind) -> TrainingDataset {
        TrainingDataset::new(Features::Dense(DenseMatrix::from_rows(rows).unwrap()), y, kind).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(l2_dist(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((l2_dist(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(l2_dist(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!(matches!(l2_dist(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_sim(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_sim(&[1.0, 1.0], &[-1.0, -1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 1.0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn mse_examples() {
        let ds = dense(&[vec![1.0, 1.0]], vec![3.0], ModelKind::Linear);
        assert_eq!(mse(&ds, &[1.0, 1.0]).unwrap(), 1.0);
        let ds = dense(&[vec![1.0, 0.0], vec![0.0, 2.0]], vec![2.0, -4.0], ModelKind::Linear);
        assert_eq!(mse(&ds, &[2.0, -2.0]).unwrap(), 0.0);
        assert_eq!(mse(&ds, &[0.0, 0.0]).unwrap(), 10.0);
        assert!(matches!(mse(&ds, &[0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn accuracy_examples() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]];
        let ds = dense(&rows, vec![1.0, 1.0, -1.0, 1.0], ModelKind::BinaryLogistic);
        // scores 1, 1, -1, -1 -> the last row is misclassified
        assert_eq!(validation_accuracy(&ds, &[1.0, 1.0]).unwrap(), 0.75);
        // zero scores tie to +1
        assert_eq!(validation_accuracy(&ds, &[0.0, 0.0]).unwrap(), 0.75);
        let ds = dense(&rows, vec![0.0, 1.0, 2.0, 0.0], ModelKind::MultinomialLogistic { classes: 3 });
        assert_eq!(validation_accuracy(&ds, &[0.0; 6]).unwrap(), 0.5);
        let w = [1.0, 0.0, 0.0, 1.0, -1.0, 0.0];
        // row 3 (0,-1): scores 0, -1, 0 -> tie between 0 and 2 resolves to 0
        assert_eq!(validation_accuracy(&ds, &w).unwrap(), 1.0);
    }

    #[test]
    fn sign_flip_examples() {
        let r = sign_flip_report(&[1.0, -1.0], &[1.0, -1.0]).unwrap();
        assert_eq!((r.flips, r.max_mag_change), (0, 0.0));
        let r = sign_flip_report(&[1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_eq!((r.flips, r.max_mag_change), (1, 2.0));
        let r = sign_flip_report(&[0.0, 2.0], &[-1e-9, 2.0]).unwrap();
        assert_eq!((r.flips, r.max_mag_change), (1, 1e-9));
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0..10.0f64, 3)
    }

    proptest! {
        #[test]
        fn cosine_scale_invariant(a in vec3(), b in vec3(), s in 0.01..100.0f64, t in 0.01..100.0f64) {
            prop_assume!(linalg::norm2(&a) > 1e-3 && linalg::norm2(&b) > 1e-3);
            let sa: Vec<f64> = a.iter().map(|v| v * s).collect();
            let tb: Vec<f64> = b.iter().map(|v| v * t).collect();
            prop_assert!((cosine_sim(&sa, &tb).unwrap() - cosine_sim(&a, &b).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn triangle_inequality(a in vec3(), b in vec3(), c in vec3()) {
            let lhs = l2_dist(&a, &c).unwrap();
            prop_assert!(lhs <= l2_dist(&a, &b).unwrap() + l2_dist(&b, &c).unwrap() + 1e-12);
        }

        #[test]
        fn accuracy_scale_invariant(w in prop::collection::vec(-3.0..3.0f64, 6), s in 0.01..100.0f64) {
            let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![(i as f64 - 3.5).sin(), (i as f64).cos()]).collect();
            let y: Vec<f64> = (0..8).map(|i| (i % 3) as f64).collect();
            let ds = dense(&rows, y, ModelKind::MultinomialLogistic { classes: 3 });
            let sw: Vec<f64> = w.iter().map(|v| v * s).collect();
            prop_assert_eq!(validation_accuracy(&ds, &w).unwrap(), validation_accuracy(&ds, &sw).unwrap());
            let yb: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
            let db = dense(&rows, yb, ModelKind::BinaryLogistic);
            let sw2: Vec<f64> = w[..2].iter().map(|v| v * s).collect();
            prop_assert_eq!(validation_accuracy(&db, &w[..2]).unwrap(), validation_accuracy(&db, &sw2).unwrap());
        }
    }
}
