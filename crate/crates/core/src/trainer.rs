//! Gradient-based training for the three objectives.

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{BatchSchedule, Features, Hyperparams, ModelKind, ModelParams, TrainingDataset};

/// `1 - 1/(1 + e^{-x})`, written so neither branch overflows.
#[inline]
pub fn one_minus_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Class scores `z_k = w_k . x_i` for the multinomial model.
#[inline]
pub(crate) fn class_scores(features: &Features, i: usize, w: &[f64], m: usize, out: &mut [f64]) {
    for (k, z) in out.iter_mut().enumerate() {
        *z = features.row_dot(i, &w[k * m..(k + 1) * m]);
    }
}

/// In-place softmax with max subtraction.
#[inline]
pub(crate) fn softmax(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

fn check_dim(ds: &TrainingDataset, w: &[f64]) -> Result<()> {
    if w.len() != ds.param_dim() {
        return Err(Error::shape(format!(
            "parameter vector has length {}, model needs {}",
            w.len(),
            ds.param_dim()
        )));
    }
    Ok(())
}

/// Unregularised loss of row `i`.
fn sample_loss(ds: &TrainingDataset, i: usize, w: &[f64], scratch: &mut [f64]) -> f64 {
    let x = ds.features();
    let y = ds.label(i);
    match ds.kind() {
        ModelKind::Linear => {
            let r = y - x.row_dot(i, w);
            r * r
        }
        ModelKind::BinaryLogistic => softplus(-y * x.row_dot(i, w)),
        ModelKind::MultinomialLogistic { .. } => {
            class_scores(x, i, w, ds.m(), scratch);
            let max = scratch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + scratch.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            lse - scratch[y as usize]
        }
    }
}

/// `out += scale * grad l_i(w)` for the unregularised per-sample loss.
#[inline]
pub(crate) fn add_sample_gradient(
    ds: &TrainingDataset,
    i: usize,
    w: &[f64],
    scale: f64,
    out: &mut [f64],
    scratch: &mut [f64],
) {
    let x = ds.features();
    let y = ds.label(i);
    match ds.kind() {
        ModelKind::Linear => {
            let r = x.row_dot(i, w) - y;
            x.row_axpy(i, scale * 2.0 * r, out);
        }
        ModelKind::BinaryLogistic => {
            let f = one_minus_sigmoid(y * x.row_dot(i, w));
            x.row_axpy(i, -scale * y * f, out);
        }
        ModelKind::MultinomialLogistic { .. } => {
            let m = ds.m();
            class_scores(x, i, w, m, scratch);
            softmax(scratch);
            scratch[y as usize] -= 1.0;
            for (k, r) in scratch.iter().enumerate() {
                x.row_axpy(i, scale * r, &mut out[k * m..(k + 1) * m]);
            }
        }
    }
}

/// `h(w)`: mean loss over all rows plus `lambda/2 ||w||^2`.
pub fn objective(ds: &TrainingDataset, hp: &Hyperparams, w: &[f64]) -> Result<f64> {
    check_dim(ds, w)?;
    let mut scratch = vec![0.0; ds.classes()];
    let total: f64 = (0..ds.n()).map(|i| sample_loss(ds, i, w, &mut scratch)).sum();
    Ok(total / ds.n() as f64 + 0.5 * hp.lambda * linalg::dot(w, w))
}

/// Mean gradient over `batch` plus `lambda w`.
pub fn gradient(ds: &TrainingDataset, hp: &Hyperparams, w: &[f64], batch: &[u32]) -> Result<Vec<f64>> {
    check_dim(ds, w)?;
    if batch.is_empty() {
        return Err(Error::config("gradient over an empty batch"));
    }
    let mut g = vec![0.0; w.len()];
    let mut scratch = vec![0.0; ds.classes()];
    let scale = 1.0 / batch.len() as f64;
    for &i in batch {
        add_sample_gradient(ds, i as usize, w, scale, &mut g, &mut scratch);
    }
    linalg::axpy(hp.lambda, w, &mut g);
    Ok(g)
}

/// Reusable buffers for [`sgd_step`].
pub(crate) struct StepScratch {
    grad: Vec<f64>,
    classes: Vec<f64>,
}

impl StepScratch {
    pub(crate) fn new(ds: &TrainingDataset) -> Self {
        StepScratch {
            grad: vec![0.0; ds.param_dim()],
            classes: vec![0.0; ds.classes()],
        }
    }
}

/// One step `w <- (1 - eta lambda) w - (eta / |S|) sum_{i in S} grad l_i(w)`
/// over the rows of `batch` accepted by `keep`. An empty selection only
/// shrinks.
#[inline]
pub(crate) fn sgd_step<F: Fn(u32) -> bool>(
    ds: &TrainingDataset,
    hp: &Hyperparams,
    batch: &[u32],
    keep: F,
    w: &mut [f64],
    scratch: &mut StepScratch,
) {
    let grad = &mut scratch.grad;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut count = 0usize;
    for &i in batch {
        if keep(i) {
            add_sample_gradient(ds, i as usize, w, 1.0, grad, &mut scratch.classes);
            count += 1;
        }
    }
    let shrink = 1.0 - hp.eta * hp.lambda;
    if count == 0 {
        w.iter_mut().for_each(|v| *v *= shrink);
        return;
    }
    let step = hp.eta / count as f64;
    for (v, g) in w.iter_mut().zip(grad.iter()) {
        *v = shrink * *v - step * g;
    }
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    /// Recorded iterates `w^(t)`, every `record_stride` iterations starting
    /// at `t = 0`, always ending with the final iterate.
    pub params_trajectory: Vec<ModelParams>,
    pub final_params: ModelParams,
    /// `h(w)` at each recorded iterate.
    pub objective_trace: Vec<f64>,
    pub schedule: BatchSchedule,
    pub hp: Hyperparams,
    pub w0: Vec<f64>,
}

/// Training options beyond the hyperparameters.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Starting point; zeros when absent.
    pub w0: Option<Vec<f64>>,
    /// Record every k-th iterate; 0 keeps only the final one.
    pub record_stride: usize,
}

pub fn train(
    ds: &TrainingDataset,
    hp: &Hyperparams,
    schedule: &BatchSchedule,
    opts: &TrainOptions,
) -> Result<TrainRun> {
    train_observed(ds, hp, schedule, opts, |_, _| Ok(()))
}

/// Like [`train`], calling `observe(t, w^(t))` before every update so callers
/// can consume the full trajectory without storing it.
pub fn train_observed<F>(
    ds: &TrainingDataset,
    hp: &Hyperparams,
    schedule: &BatchSchedule,
    opts: &TrainOptions,
    mut observe: F,
) -> Result<TrainRun>
where
    F: FnMut(usize, &[f64]) -> Result<()>,
{
    hp.check_dataset(ds)?;
    if !schedule.matches(ds.n(), hp) {
        return Err(Error::config("batch schedule was built for different inputs"));
    }
    let w0 = match &opts.w0 {
        Some(w0) => {
            check_dim(ds, w0)?;
            w0.clone()
        }
        None => vec![0.0; ds.param_dim()],
    };
    let mut w = w0.clone();
    let mut scratch = StepScratch::new(ds);
    let mut trajectory = Vec::new();
    let mut trace = Vec::new();
    let stride = opts.record_stride;
    let record = |t: usize, w: &[f64], trajectory: &mut Vec<ModelParams>, trace: &mut Vec<f64>| -> Result<()> {
        trace.push(objective(ds, hp, w)?);
        trajectory.push(ModelParams::new(w.to_vec(), t)?);
        Ok(())
    };
    for t in 0..hp.iterations {
        if stride > 0 && t % stride == 0 {
            record(t, &w, &mut trajectory, &mut trace)?;
        }
        observe(t, &w)?;
        sgd_step(ds, hp, schedule.batch(t), |_| true, &mut w, &mut scratch);
        if !linalg::all_finite(&w) {
            return Err(Error::Divergence { iteration: t + 1 });
        }
    }
    record(hp.iterations, &w, &mut trajectory, &mut trace)?;
    Ok(TrainRun {
        final_params: trajectory.last().cloned().expect("final iterate recorded"),
        params_trajectory: trajectory,
        objective_trace: trace,
        schedule: schedule.clone(),
        hp: *hp,
        w0,
    })
}

/// Curvature factor `c` in `L = lambda + (c/n) lambda_max(X^T X)`.
fn curvature_factor(kind: ModelKind) -> f64 {
    match kind {
        ModelKind::Linear => 2.0,
        ModelKind::BinaryLogistic => 0.25,
        ModelKind::MultinomialLogistic { .. } => 0.5,
    }
}

/// Largest eigenvalue of `X^T X` by power iteration.
pub fn gram_top_eigenvalue(ds: &TrainingDataset) -> Result<f64> {
    let x = ds.features();
    let n = ds.n();
    let mut xv = vec![0.0; n];
    linalg::power_iteration(ds.m(), 1e-6, 10_000, |v, out| {
        for (i, s) in xv.iter_mut().enumerate() {
            *s = x.row_dot(i, v);
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, s) in xv.iter().enumerate() {
            x.row_axpy(i, *s, out);
        }
    })
}

/// Upper estimate of the smoothness constant of `h` for `lambda`.
pub fn estimate_lipschitz(ds: &TrainingDataset, lambda: f64) -> Result<f64> {
    let top = gram_top_eigenvalue(ds)?;
    Ok(lambda + curvature_factor(ds.kind()) * top / ds.n() as f64)
}

/// `0.9 / L`.
pub fn default_eta(ds: &TrainingDataset, lambda: f64) -> Result<f64> {
    Ok(0.9 / estimate_lipschitz(ds, lambda)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_schedule, DenseMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(rows: usize, cols: usize, data: Vec<f64>) -> Features {
        Features::Dense(DenseMatrix::new(rows, cols, data).unwrap())
    }

    fn hp(kind: ModelKind, eta: f64, lambda: f64, b: usize, tau: usize) -> Hyperparams {
        Hyperparams {
            eta,
            lambda,
            batch_size: b,
            iterations: tau,
            seed: 3,
            model_kind: kind,
        }
    }

    fn random_ds(kind: ModelKind, n: usize, m: usize, seed: u64) -> TrainingDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n)
            .map(|_| match kind {
                ModelKind::Linear => rng.random_range(-2.0..2.0),
                ModelKind::BinaryLogistic => {
                    if rng.random_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                }
                ModelKind::MultinomialLogistic { classes } => rng.random_range(0..classes) as f64,
            })
            .collect();
        TrainingDataset::new(dense(n, m, data), labels, kind).unwrap()
    }

    #[test]
    fn objective_at_zero() {
        let ds = TrainingDataset::new(dense(2, 1, vec![1.0, 2.0]), vec![1.0, 3.0], ModelKind::Linear).unwrap();
        let h = hp(ModelKind::Linear, 0.1, 0.7, 1, 1);
        assert_eq!(objective(&ds, &h, &[0.0]).unwrap(), 5.0);

        let ds = TrainingDataset::new(dense(2, 1, vec![1.0, 2.0]), vec![1.0, -1.0], ModelKind::BinaryLogistic)
            .unwrap();
        let h = hp(ModelKind::BinaryLogistic, 0.1, 0.7, 1, 1);
        assert!((objective(&ds, &h, &[0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);

        let kind = ModelKind::MultinomialLogistic { classes: 3 };
        let ds = TrainingDataset::new(dense(2, 1, vec![1.0, 2.0]), vec![0.0, 2.0], kind).unwrap();
        let h = hp(kind, 0.1, 0.7, 1, 1);
        assert!((objective(&ds, &h, &[0.0; 3]).unwrap() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn linear_gradient_hand_case() {
        let ds = TrainingDataset::new(dense(1, 2, vec![1.0, 0.0]), vec![1.0], ModelKind::Linear).unwrap();
        let h = hp(ModelKind::Linear, 0.1, f64::MIN_POSITIVE, 1, 1);
        let g = gradient(&ds, &h, &[0.0, 0.0], &[0]).unwrap();
        assert_eq!(g, vec![-2.0, 0.0]);
    }

    #[test]
    fn logistic_gradient_at_zero_is_half_mean() {
        let ds = random_ds(ModelKind::BinaryLogistic, 6, 3, 1);
        let h = hp(ModelKind::BinaryLogistic, 0.1, 0.3, 2, 1);
        let batch = [0u32, 4, 5];
        let g = gradient(&ds, &h, &[0.0; 3], &batch).unwrap();
        for j in 0..3 {
            let expect: f64 = batch
                .iter()
                .map(|&i| -ds.label(i as usize) * ds.features().row_dense(i as usize)[j] * 0.5)
                .sum::<f64>()
                / 3.0;
            assert!((g[j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_rejects_empty_batch() {
        let ds = random_ds(ModelKind::Linear, 3, 2, 1);
        let h = hp(ModelKind::Linear, 0.1, 0.3, 1, 1);
        assert!(gradient(&ds, &h, &[0.0; 2], &[]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let kinds = [
            ModelKind::Linear,
            ModelKind::BinaryLogistic,
            ModelKind::MultinomialLogistic { classes: 3 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (k, kind) in kinds.into_iter().enumerate() {
            let ds = random_ds(kind, 12, 4, 20 + k as u64);
            let h = hp(kind, 0.1, 0.05, 12, 1);
            let all: Vec<u32> = (0..12).collect();
            for _ in 0..20 {
                let w: Vec<f64> = (0..ds.param_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let g = gradient(&ds, &h, &w, &all).unwrap();
                let step = 1e-6;
                for j in 0..w.len() {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[j] += step;
                    wm[j] -= step;
                    let fd = (objective(&ds, &h, &wp).unwrap() - objective(&ds, &h, &wm).unwrap()) / (2.0 * step);
                    let rel = (fd - g[j]).abs() / g[j].abs().max(1e-3);
                    assert!(rel < 1e-5, "{kind:?} coord {j}: fd {fd} vs {}", g[j]);
                }
            }
        }
    }

    #[test]
    fn zero_eta_keeps_w0() {
        let ds = random_ds(ModelKind::Linear, 8, 3, 2);
        let h = hp(ModelKind::Linear, f64::MIN_POSITIVE, 0.1, 4, 5);
        let s = build_schedule(8, &h).unwrap();
        let w0 = vec![0.5, -1.0, 2.0];
        let run = train(
            &ds,
            &h,
            &s,
            &TrainOptions {
                w0: Some(w0.clone()),
                record_stride: 0,
            },
        )
        .unwrap();
        assert_eq!(run.final_params.w, w0);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = random_ds(ModelKind::BinaryLogistic, 30, 4, 3);
        let h = hp(ModelKind::BinaryLogistic, 0.5, 0.01, 7, 40);
        let s = build_schedule(30, &h).unwrap();
        let opts = TrainOptions {
            w0: None,
            record_stride: 3,
        };
        let a = train(&ds, &h, &s, &opts).unwrap();
        let b = train(&ds, &h, &s, &opts).unwrap();
        assert_eq!(a.params_trajectory, b.params_trajectory);
        assert_eq!(a.params_trajectory.len(), 14 + 1);
        assert_eq!(a.final_params.iteration, 40);
    }

    #[test]
    fn gd_objective_non_increasing_with_safe_step() {
        let ds = random_ds(ModelKind::Linear, 40, 3, 4);
        let lambda = 0.05;
        let l = estimate_lipschitz(&ds, lambda).unwrap();
        let h = hp(ModelKind::Linear, 1.0 / l, lambda, 40, 200);
        let s = build_schedule(40, &h).unwrap();
        let run = train(
            &ds,
            &h,
            &s,
            &TrainOptions {
                w0: None,
                record_stride: 1,
            },
        )
        .unwrap();
        for pair in run.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-14);
        }
    }

    #[test]
    fn lipschitz_examples() {
        let ds = TrainingDataset::new(dense(2, 2, vec![1.0, 0.0, 0.0, 1.0]), vec![0.0, 0.0], ModelKind::Linear)
            .unwrap();
        assert!((estimate_lipschitz(&ds, 0.0).unwrap() - 1.0).abs() < 1e-9);
        let zero = TrainingDataset::new(dense(2, 2, vec![0.0; 4]), vec![0.0, 0.0], ModelKind::Linear).unwrap();
        assert_eq!(estimate_lipschitz(&zero, 0.3).unwrap(), 0.3);

        let ds = random_ds(ModelKind::Linear, 50, 5, 9);
        let x = nalgebra::DMatrix::from_row_slice(50, 5, ds.features().densified().as_slice());
        let eig = (x.transpose() * &x).symmetric_eigenvalues();
        let top = eig.iter().copied().fold(f64::MIN, f64::max);
        let expect = 0.1 + 2.0 * top / 50.0;
        assert!((estimate_lipschitz(&ds, 0.1).unwrap() - expect).abs() < 1e-4);
    }

    #[test]
    fn shrinkage_only_when_batch_empty() {
        let ds = random_ds(ModelKind::Linear, 4, 2, 5);
        let h = hp(ModelKind::Linear, 0.1, 0.5, 2, 1);
        let mut w = vec![1.0, -2.0];
        let mut scratch = StepScratch::new(&ds);
        for _ in 0..3 {
            sgd_step(&ds, &h, &[0, 1], |_| false, &mut w, &mut scratch);
        }
        let f = (1.0f64 - 0.05).powi(3);
        assert!((w[0] - f).abs() < 1e-15 && (w[1] + 2.0 * f).abs() < 1e-15);
    }

    #[test]
    fn stable_sigmoid_tails() {
        assert_eq!(one_minus_sigmoid(0.0), 0.5);
        assert!(one_minus_sigmoid(800.0) >= 0.0);
        assert_eq!(one_minus_sigmoid(-800.0), 1.0);
        assert!((softplus(-800.0)).abs() < 1e-300);
        assert_eq!(softplus(800.0), 800.0);
    }
}
