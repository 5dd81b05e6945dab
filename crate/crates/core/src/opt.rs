//! Eigen-based update paths for small parameter spaces.
//!
//! With full-batch steps the linear rule `w <- ρ(M) w + e` shares its
//! eigenvectors with `M`. Deleting rows perturbs `M`; the eigenvectors are
//! kept and only the eigenvalues are refreshed through the diagonal of
//! `Qᵀ M' Q`, after which `τ` iterations collapse into per-coordinate
//! geometric sums. For logistic regression the same applies after the
//! early-stop iteration `t_s`, once the linearisation coefficients are
//! frozen.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::capture::CacheMode;
use crate::error::{Error, Result};
use crate::linalg::{self, PackedSym};
use crate::model::{DeletionRequest, Hyperparams, ModelKind, ModelParams, TrainingDataset};
use crate::update::{check_request, ms_since, priu_iterations, PreparedCache, UpdateReport, Workspace};

/// Largest parameter dimension the eigen path accepts by default.
pub const DEFAULT_MAX_DIM: usize = 2048;

/// Offline eigendecomposition `M = Q diag(c) Qᵀ` together with the moment
/// vector it is paired with (`XᵀY` for linear, `D*` for logistic models).
#[derive(Debug, Clone)]
pub struct EigenCache {
    pub q: DMatrix<f64>,
    pub c: Vec<f64>,
    pub moment: Vec<f64>,
    pub kind: ModelKind,
    pub t_s: Option<usize>,
    /// `||Q diag(c) Qᵀ - M||_F / ||M||_F` at build time.
    pub reconstruction_error: f64,
}

impl EigenCache {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    fn from_matrix(m: &DMatrix<f64>, moment: Vec<f64>, kind: ModelKind, t_s: Option<usize>) -> Result<Self> {
        let eig = linalg::symmetric_eigen_by_magnitude(m)?;
        let rebuilt = &eig.vectors * DMatrix::from_diagonal(&DVector::from_column_slice(&eig.values)) * eig.vectors.transpose();
        let norm = m.norm();
        let reconstruction_error = if norm > 0.0 { (&rebuilt - m).norm() / norm } else { 0.0 };
        if reconstruction_error > 1e-8 {
            return Err(Error::numeric(format!(
                "eigendecomposition reconstructs to relative error {reconstruction_error:e}"
            )));
        }
        Ok(EigenCache {
            q: eig.vectors,
            c: eig.values,
            moment,
            kind,
            t_s,
            reconstruction_error,
        })
    }
}

fn guard(d: usize, max_dim: usize) -> Result<()> {
    if d > max_dim {
        return Err(Error::config(format!(
            "parameter dimension {d} exceeds the eigen-path limit {max_dim}; use plain priu instead"
        )));
    }
    Ok(())
}

/// `M = XᵀX`, `N = XᵀY` and the eigenpairs of `M`.
pub fn build_linear_eigen(ds: &TrainingDataset, max_dim: usize) -> Result<EigenCache> {
    if ds.kind() != ModelKind::Linear {
        return Err(Error::config("linear eigen cache needs a linear-regression dataset"));
    }
    guard(ds.m(), max_dim)?;
    let mut gram = PackedSym::zeros(ds.m());
    let mut moment = vec![0.0; ds.m()];
    for i in 0..ds.n() {
        let x = ds.features().row_dense(i);
        gram.add_outer(1.0, &x);
        linalg::axpy(ds.label(i), &x, &mut moment);
    }
    EigenCache::from_matrix(&gram.to_dense(), moment, ModelKind::Linear, None)
}

/// `C* = Σ_i A_i*` and `D* = Σ_i b_i*` over every row with the coefficients
/// frozen at `t_s`, symmetrised before decomposition.
pub fn build_logistic_eigen(ds: &TrainingDataset, prepared: &PreparedCache, max_dim: usize) -> Result<EigenCache> {
    let kind = prepared.kind();
    if !kind.is_logistic() {
        return Err(Error::config("logistic eigen cache needs a logistic cache"));
    }
    let frozen = prepared
        .frozen_linearization()
        .ok_or_else(|| Error::config("cache was captured without an early-stop iteration"))?;
    let d = ds.param_dim();
    guard(d, max_dim)?;
    let mut c = PackedSym::zeros(d);
    let mut moment = vec![0.0; d];
    for i in 0..ds.n() {
        frozen.add_matrix_packed(ds, i, i, 1.0, &mut c);
        frozen.add_vector(ds, i, i, 1.0, &mut moment);
    }
    let dense = c.to_dense();
    let sym = 0.5 * (&dense + dense.transpose());
    EigenCache::from_matrix(&sym, moment, kind, prepared.cache.header.t_s)
}

/// `c'_j = c_j - q_jᵀ ΔM q_j` where `ΔM = Σ_{i in R} x_i x_iᵀ`.
pub fn incremental_eigenvalues_linear(ds: &TrainingDataset, ecache: &EigenCache, request: &DeletionRequest) -> Vec<f64> {
    let d = ecache.dim();
    let mut c = ecache.c.clone();
    let qt = ecache.q.transpose();
    let mut proj = DVector::zeros(d);
    for &i in request.removed() {
        let x = DVector::from_vec(ds.features().row_dense(i as usize));
        qt.mul_to(&x, &mut proj);
        for (cj, pj) in c.iter_mut().zip(proj.iter()) {
            *cj -= pj * pj;
        }
    }
    c
}

/// `u_j <- rho_j u_j + e_j` applied `steps` times, in closed form:
/// `u_j ρ_j^steps + e_j Σ_{l < steps} ρ_j^l`.
pub fn diagonal_recurrence(rho: &[f64], u0: &[f64], e: &[f64], steps: usize) -> Vec<f64> {
    rho.iter()
        .zip(u0)
        .zip(e)
        .map(|((&r, &u), &ej)| {
            let mut power = 1.0;
            let mut sum = 0.0;
            for _ in 0..steps {
                sum += power;
                power *= r;
            }
            power * u + sum * ej
        })
        .collect()
}

fn to_eigenbasis(q: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (q.transpose() * DVector::from_column_slice(v)).as_slice().to_vec()
}

fn from_eigenbasis(q: &DMatrix<f64>, u: &[f64]) -> Vec<f64> {
    (q * DVector::from_column_slice(u)).as_slice().to_vec()
}

/// Full-batch linear regression after deleting `request`, from the eigen
/// cache alone. Runs gradient-descent semantics over the remaining rows.
pub fn opt_linear(
    ds: &TrainingDataset,
    ecache: &EigenCache,
    hp: &Hyperparams,
    request: &DeletionRequest,
    w0: Option<&[f64]>,
) -> Result<(ModelParams, UpdateReport)> {
    if ecache.kind != ModelKind::Linear || ds.kind() != ModelKind::Linear {
        return Err(Error::config("opt_linear needs a linear eigen cache"));
    }
    check_request(ds, request)?;
    let d = ecache.dim();
    let mut report = UpdateReport::new("priu-opt-linear", request.len(), "gd", hp.iterations);
    report
        .notes
        .push("full-batch gradient descent semantics; compare against a GD oracle".into());
    let start = Instant::now();
    let c = incremental_eigenvalues_linear(ds, ecache, request);
    let mut moment = ecache.moment.clone();
    for &i in request.removed() {
        ds.features().row_axpy(i as usize, -ds.label(i as usize), &mut moment);
    }
    let n_left = (ds.n() - request.len()) as f64;
    let shrink = 1.0 - hp.eta * hp.lambda;
    let rho: Vec<f64> = c.iter().map(|cj| shrink - 2.0 * hp.eta * cj / n_left).collect();
    let mut e = to_eigenbasis(&ecache.q, &moment);
    e.iter_mut().for_each(|v| *v *= 2.0 * hp.eta / n_left);
    let u0 = match w0 {
        Some(w) if w.len() == d => to_eigenbasis(&ecache.q, w),
        Some(_) => return Err(Error::shape("initial parameters have the wrong length")),
        None => vec![0.0; d],
    };
    let u = diagonal_recurrence(&rho, &u0, &e, hp.iterations);
    let w = from_eigenbasis(&ecache.q, &u);
    report.update_ms = ms_since(start);
    Ok((ModelParams::new(w, hp.iterations)?, report))
}

/// Logistic regression: incremental replay up to `t_s`, then the frozen
/// full-batch rule through the eigen recurrence for the remaining steps.
pub fn opt_logistic(
    ds: &TrainingDataset,
    prepared: &PreparedCache,
    ecache: &EigenCache,
    request: &DeletionRequest,
) -> Result<(ModelParams, UpdateReport)> {
    check_request(ds, request)?;
    let cache = &prepared.cache;
    let hp = cache.header.hp;
    if !cache.kind().is_logistic() || ecache.kind != cache.kind() {
        return Err(Error::config("opt_logistic needs a logistic cache and matching eigen cache"));
    }
    if cache.mode() == CacheMode::SparseLinearized && ds.storage_kind() != crate::model::StorageKind::Sparse {
        return Err(Error::config("sparse-linearized caches need the sparse dataset"));
    }
    let t_s = cache
        .header
        .t_s
        .ok_or_else(|| Error::config("cache was captured without an early-stop iteration"))?;
    if t_s > hp.iterations || ecache.t_s != Some(t_s) {
        return Err(Error::config(format!("early-stop iteration {t_s} does not fit this cache")));
    }
    let frozen = prepared
        .frozen_linearization()
        .ok_or_else(|| Error::config("cache has no frozen coefficients"))?;
    let mut report = UpdateReport::new("priu-opt-logistic", request.len(), "mb-sgd then gd", hp.iterations);
    report.notes.push(format!(
        "iterations {t_s}..{} use frozen coefficients and full-batch steps",
        hp.iterations
    ));
    let start = Instant::now();
    let d = cache.param_dim();
    let mut w = cache.w0.clone();
    let mut ws = Workspace::new(d, ds.classes());
    priu_iterations(ds, prepared, request, 0..t_s, &mut w, &mut ws)?;
    let steps = hp.iterations - t_s;
    if steps > 0 {
        let mut c = ecache.c.clone();
        let mut moment = ecache.moment.clone();
        let mut av = vec![0.0; d];
        let mut scratch = vec![0.0; ds.classes()];
        for &i in request.removed() {
            let i = i as usize;
            for (j, cj) in c.iter_mut().enumerate() {
                let qj = ecache.q.column(j);
                av.iter_mut().for_each(|v| *v = 0.0);
                frozen.add_matrix(ds, i, i, qj.as_slice(), 1.0, &mut av, &mut scratch);
                *cj -= linalg::dot(qj.as_slice(), &av);
            }
            frozen.add_vector(ds, i, i, -1.0, &mut moment);
        }
        let n_left = (ds.n() - request.len()) as f64;
        let shrink = 1.0 - hp.eta * hp.lambda;
        let rho: Vec<f64> = c.iter().map(|cj| shrink + hp.eta * cj / n_left).collect();
        let mut e = to_eigenbasis(&ecache.q, &moment);
        e.iter_mut().for_each(|v| *v *= hp.eta / n_left);
        let u0 = to_eigenbasis(&ecache.q, &w);
        let u = diagonal_recurrence(&rho, &u0, &e, steps);
        w = from_eigenbasis(&ecache.q, &u);
    }
    report.update_ms = ms_since(start);
    Ok((ModelParams::new(w, hp.iterations)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::retrain;
    use crate::model::{build_schedule, DenseMatrix, Features};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_linear(n: usize, m: usize, seed: u64) -> TrainingDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        TrainingDataset::new(Features::Dense(DenseMatrix::new(n, m, x).unwrap()), y, ModelKind::Linear).unwrap()
    }

    fn gd_hp(n: usize, tau: usize) -> Hyperparams {
        Hyperparams {
            eta: 0.3,
            lambda: 0.05,
            batch_size: n,
            iterations: tau,
            seed: 1,
            model_kind: ModelKind::Linear,
        }
    }

    #[test]
    fn empty_removal_matches_gd_training() {
        let ds = random_linear(50, 5, 1);
        let hp = gd_hp(50, 200);
        let e = build_linear_eigen(&ds, DEFAULT_MAX_DIM).unwrap();
        assert!(e.reconstruction_error <= 1e-8);
        let none = DeletionRequest::empty(50);
        assert_eq!(incremental_eigenvalues_linear(&ds, &e, &none), e.c);
        let (w, report) = opt_linear(&ds, &e, &hp, &none, None).unwrap();
        assert_eq!(report.semantics, "gd");
        let s = build_schedule(50, &hp).unwrap();
        let (gd, _) = retrain(&ds, &hp, &s, &none, None).unwrap();
        for k in 0..5 {
            assert!((w.w[k] - gd.w[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn recurrence_matches_naive_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho: Vec<f64> = (0..5).map(|_| rng.random_range(-0.99..0.99)).collect();
        let u0: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut naive = u0.clone();
        for _ in 0..37 {
            for j in 0..5 {
                naive[j] = rho[j] * naive[j] + e[j];
            }
        }
        let closed = diagonal_recurrence(&rho, &u0, &e, 37);
        for j in 0..5 {
            assert!((naive[j] - closed[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn guard_rejects_large_dimension() {
        let ds = random_linear(10, 6, 3);
        assert!(matches!(build_linear_eigen(&ds, 5), Err(Error::Config(_))));
    }
}
