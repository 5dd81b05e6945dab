//! Comparison methods: retraining without the removed rows, the closed-form
//! ridge solution, and an influence-function step.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::PackedSym;
use crate::model::{BatchSchedule, DeletionRequest, Hyperparams, ModelKind, ModelParams, TrainingDataset};
use crate::trainer::{add_sample_gradient, class_scores, one_minus_sigmoid, sgd_step, softmax, StepScratch};
use crate::update::{check_request, ms_since, UpdateReport};

/// Retrains over the original schedule with removed rows dropped from each
/// batch (divisor `B_U`, shrink-only on empty batches).
pub fn retrain(
    ds: &TrainingDataset,
    hp: &Hyperparams,
    schedule: &BatchSchedule,
    request: &DeletionRequest,
    w0: Option<&[f64]>,
) -> Result<(ModelParams, UpdateReport)> {
    hp.check_dataset(ds)?;
    check_request(ds, request)?;
    if !schedule.matches(ds.n(), hp) {
        return Err(Error::config("batch schedule was built for different inputs"));
    }
    let mut report = UpdateReport::new("basel", request.len(), "mb-sgd", hp.iterations);
    let start = Instant::now();
    let mut w = match w0 {
        Some(w0) if w0.len() == ds.param_dim() => w0.to_vec(),
        Some(_) => return Err(Error::shape("initial parameters have the wrong length")),
        None => vec![0.0; ds.param_dim()],
    };
    let mut scratch = StepScratch::new(ds);
    for t in 0..hp.iterations {
        sgd_step(ds, hp, schedule.batch(t), |i| !request.contains(i), &mut w, &mut scratch);
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { iteration: t + 1 });
        }
    }
    report.update_ms = ms_since(start);
    Ok((ModelParams::new(w, hp.iterations)?, report))
}

/// `X^T X` and `X^T Y` over the rows not in `request`.
fn normal_equations(ds: &TrainingDataset, request: &DeletionRequest) -> (DMatrix<f64>, DVector<f64>) {
    let m = ds.m();
    let mut gram = PackedSym::zeros(m);
    let mut moment = DVector::zeros(m);
    for i in 0..ds.n() {
        if request.contains(i as u32) {
            continue;
        }
        let x = ds.features().row_dense(i);
        gram.add_outer(1.0, &x);
        moment.axpy(ds.label(i), &DVector::from_vec(x), 1.0);
    }
    (gram.to_dense(), moment)
}

/// Minimiser of the ridge objective on the remaining rows:
/// `(X'^T X' + (n' lambda / 2) I) w = X'^T Y'`.
pub fn closed_form_linear(ds: &TrainingDataset, lambda: f64, request: &DeletionRequest) -> Result<ModelParams> {
    if ds.kind() != ModelKind::Linear {
        return Err(Error::config("closed form exists for linear regression only"));
    }
    check_request(ds, request)?;
    let (mut a, rhs) = normal_equations(ds, request);
    let n_left = (ds.n() - request.len()) as f64;
    for k in 0..ds.m() {
        a[(k, k)] += n_left * lambda / 2.0;
    }
    let w = solve_spd(a, rhs)?;
    ModelParams::new(w.as_slice().to_vec(), 0)
}

fn solve_spd(a: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let chol = Cholesky::new(a).ok_or_else(|| Error::numeric("system matrix is not positive definite"))?;
    Ok(chol.solve(&rhs))
}

/// Full-data Hessian of the objective at `w`, `λI` included.
pub fn hessian(ds: &TrainingDataset, lambda: f64, w: &[f64]) -> DMatrix<f64> {
    let d = ds.param_dim();
    let m = ds.m();
    let mut h = PackedSym::zeros(d);
    let inv_n = 1.0 / ds.n() as f64;
    let mut z = vec![0.0; ds.classes()];
    for i in 0..ds.n() {
        let x = ds.features().row_dense(i);
        match ds.kind() {
            ModelKind::Linear => h.add_outer(2.0 * inv_n, &x),
            ModelKind::BinaryLogistic => {
                let s = one_minus_sigmoid(ds.label(i) * ds.features().row_dot(i, w));
                h.add_outer(inv_n * s * (1.0 - s), &x);
            }
            ModelKind::MultinomialLogistic { classes } => {
                class_scores(ds.features(), i, w, m, &mut z);
                softmax(&mut z);
                let mut j = vec![0.0; classes * classes];
                for r in 0..classes {
                    for c in 0..classes {
                        j[r * classes + c] = if r == c { z[r] } else { 0.0 } - z[r] * z[c];
                    }
                }
                h.add_kron_outer(inv_n, &j, classes, &x);
            }
        }
    }
    let mut dense = h.to_dense();
    for k in 0..d {
        dense[(k, k)] += lambda;
    }
    dense
}

/// Influence step `w + (1/(n - Δn)) H^{-1} Σ_{i in R} (∇l_i(w) + λ w)`
/// with `H` the full-data Hessian at `w_full`.
pub fn infl_update(
    ds: &TrainingDataset,
    hp: &Hyperparams,
    w_full: &ModelParams,
    request: &DeletionRequest,
) -> Result<(ModelParams, UpdateReport)> {
    check_request(ds, request)?;
    if w_full.w.len() != ds.param_dim() {
        return Err(Error::shape("trained parameters have the wrong length"));
    }
    let mut report = UpdateReport::new("infl", request.len(), "newton-step", 0);
    let start = Instant::now();
    if request.is_empty() {
        report.update_ms = ms_since(start);
        return Ok((w_full.clone(), report));
    }
    let w = &w_full.w;
    let h = hessian(ds, hp.lambda, w);
    let mut g = vec![0.0; w.len()];
    let mut scratch = vec![0.0; ds.classes()];
    for &i in request.removed() {
        add_sample_gradient(ds, i as usize, w, 1.0, &mut g, &mut scratch);
    }
    let removed = request.len() as f64;
    for (gk, wk) in g.iter_mut().zip(w) {
        *gk += removed * hp.lambda * wk;
    }
    let step = solve_spd(h, DVector::from_vec(g))?;
    let scale = 1.0 / (ds.n() - request.len()) as f64;
    let out: Vec<f64> = w.iter().zip(step.iter()).map(|(a, s)| a + scale * s).collect();
    report.update_ms = ms_since(start);
    Ok((ModelParams::new(out, w_full.iteration)?, report))
}
