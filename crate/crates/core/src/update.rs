//! Incremental updates from a provenance cache.
//!
//! Every iteration replays
//!
//! ```text
//! w <- (1 - eta lambda) w + (eta / B_U) (S w + s - Σ_{i in B ∩ R} (A_i w + b_i))
//! ```
//!
//! where `S` and `s` are the cached batch sums. Removed rows are subtracted
//! with matrix-vector products only, so no `d x d` work happens per removed
//! row. In sparse mode the sums are rebuilt from the remaining rows.

use std::time::Instant;

use serde::Serialize;

use crate::capture::{CacheMode, ProvenanceCache};
use crate::error::{Error, Result};
use crate::linalg;
use crate::linearizer::Linearization;
use crate::model::{build_schedule, BatchSchedule, DeletionRequest, ModelKind, ModelParams, TrainingDataset};

/// Timing and bookkeeping for one update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateReport {
    pub method: String,
    pub removed: usize,
    /// Time spent outside the update loop (decoding, eigen updates, ...).
    pub prepare_ms: f64,
    /// Time of the update loop proper.
    pub update_ms: f64,
    /// `"mb-sgd"` or `"gd"` (the eigen paths run full-batch semantics).
    pub semantics: String,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl UpdateReport {
    pub(crate) fn new(method: &str, removed: usize, semantics: &str, iterations: usize) -> Self {
        UpdateReport {
            method: method.to_string(),
            removed,
            prepare_ms: 0.0,
            update_ms: 0.0,
            semantics: semantics.to_string(),
            iterations,
            notes: Vec::new(),
        }
    }
}

pub(crate) fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// A cache validated against its dataset with coefficients decoded, so the
/// update loop never touches the interpolation table.
#[derive(Debug, Clone)]
pub struct PreparedCache {
    pub cache: ProvenanceCache,
    pub schedule: BatchSchedule,
    pub(crate) lin: Linearization,
    pub(crate) frozen: Option<Linearization>,
    pub prepare_ms: f64,
}

impl PreparedCache {
    pub fn new(cache: ProvenanceCache, ds: &TrainingDataset) -> Result<Self> {
        let start = Instant::now();
        cache.check_dataset(ds)?;
        let h = &cache.header;
        if cache.mode() == CacheMode::SparseLinearized && !cache.iterations.is_empty() {
            return Err(Error::CacheCorrupt("sparse cache with per-iteration matrices".into()));
        }
        if cache.mode() != CacheMode::SparseLinearized && cache.iterations.len() != h.hp.iterations {
            return Err(Error::CacheCorrupt(format!(
                "{} cached iterations, expected {}",
                cache.iterations.len(),
                h.hp.iterations
            )));
        }
        let schedule = build_schedule(h.n, &h.hp)?;
        let lin = Linearization::for_kind(h.hp.model_kind, cache.coeffs.as_ref(), &h.table)?;
        if let Some(c) = &cache.coeffs {
            if c.slots() != h.hp.iterations * h.hp.batch_size {
                return Err(Error::CacheCorrupt("coefficient count does not match the schedule".into()));
            }
        }
        let frozen = match &cache.frozen {
            Some(c) => Some(Linearization::for_kind(h.hp.model_kind, Some(c), &h.table)?),
            None => None,
        };
        Ok(PreparedCache {
            cache,
            schedule,
            lin,
            frozen,
            prepare_ms: ms_since(start),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.cache.kind()
    }

    pub fn linearization(&self) -> &Linearization {
        &self.lin
    }

    pub fn frozen_linearization(&self) -> Option<&Linearization> {
        self.frozen.as_ref()
    }
}

impl ProvenanceCache {
    pub fn mode(&self) -> CacheMode {
        self.header.mode
    }
}

pub(crate) fn check_request(ds: &TrainingDataset, request: &DeletionRequest) -> Result<()> {
    request.check_dataset(ds.n())?;
    if request.len() >= ds.n() {
        return Err(Error::config("a deletion request may not remove every sample"));
    }
    Ok(())
}

/// Buffers for [`priu_iterations`].
pub(crate) struct Workspace {
    acc: Vec<f64>,
    tmp: Vec<f64>,
    rank: Vec<f64>,
    classes: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(d: usize, classes: usize) -> Self {
        Workspace {
            acc: vec![0.0; d],
            tmp: vec![0.0; d],
            rank: vec![0.0; d],
            classes: vec![0.0; classes],
        }
    }
}

/// Runs iterations `range` of the incremental rule starting from `w`.
pub(crate) fn priu_iterations(
    ds: &TrainingDataset,
    prepared: &PreparedCache,
    request: &DeletionRequest,
    range: std::ops::Range<usize>,
    w: &mut [f64],
    ws: &mut Workspace,
) -> Result<()> {
    let cache = &prepared.cache;
    let hp = cache.header.hp;
    let b = hp.batch_size;
    let shrink = 1.0 - hp.eta * hp.lambda;
    let (ms, vs) = cache.term_scales();
    let sparse = cache.mode() == CacheMode::SparseLinearized;
    let lin = &prepared.lin;
    for t in range {
        let batch = prepared.schedule.batch(t);
        let acc = &mut ws.acc;
        let mut kept = 0usize;
        if sparse {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for (k, &i) in batch.iter().enumerate() {
                if !request.contains(i) {
                    lin.add_affine(ds, t * b + k, i as usize, w, 1.0, acc, &mut ws.classes);
                    kept += 1;
                }
            }
        } else {
            let entry = &cache.iterations[t];
            kept = batch.iter().filter(|&&i| !request.contains(i)).count();
            if kept > 0 {
                entry.matrix.apply(w, &mut ws.tmp, &mut ws.rank);
                for ((a, m), s) in acc.iter_mut().zip(&ws.tmp).zip(&entry.moment) {
                    *a = ms * m + vs * s;
                }
                if kept < b {
                    for (k, &i) in batch.iter().enumerate() {
                        if request.contains(i) {
                            lin.add_affine(ds, t * b + k, i as usize, w, -1.0, acc, &mut ws.classes);
                        }
                    }
                }
            }
        }
        if kept == 0 {
            w.iter_mut().for_each(|v| *v *= shrink);
            continue;
        }
        let step = hp.eta / kept as f64;
        for (v, a) in w.iter_mut().zip(acc.iter()) {
            *v = shrink * *v + step * a;
        }
        if !linalg::all_finite(w) {
            return Err(Error::Divergence { iteration: t + 1 });
        }
    }
    Ok(())
}

/// PrIU: replays every cached iteration with the removed rows zeroed out.
/// Dispatches on the cache's model kind and mode.
pub fn priu_update(
    ds: &TrainingDataset,
    prepared: &PreparedCache,
    request: &DeletionRequest,
) -> Result<(ModelParams, UpdateReport)> {
    check_request(ds, request)?;
    let cache = &prepared.cache;
    if cache.mode() == CacheMode::SparseLinearized && ds.storage_kind() != crate::model::StorageKind::Sparse {
        return Err(Error::config("sparse-linearized caches need the sparse dataset"));
    }
    let tau = cache.header.hp.iterations;
    let method = match (cache.kind(), cache.mode()) {
        (_, CacheMode::SparseLinearized) => "priu-sparse",
        (ModelKind::Linear, _) => "priu-linear",
        _ => "priu-logistic",
    };
    let mut report = UpdateReport::new(method, request.len(), "mb-sgd", tau);
    report.prepare_ms = prepared.prepare_ms;
    let start = Instant::now();
    let mut w = cache.w0.clone();
    let mut ws = Workspace::new(cache.param_dim(), ds.classes());
    priu_iterations(ds, prepared, request, 0..tau, &mut w, &mut ws)?;
    report.update_ms = ms_since(start);
    Ok((ModelParams::new(w, tau)?, report))
}

/// Linear-regression entry point; rejects logistic caches.
pub fn priu_linear(
    ds: &TrainingDataset,
    prepared: &PreparedCache,
    request: &DeletionRequest,
) -> Result<(ModelParams, UpdateReport)> {
    if prepared.kind() != ModelKind::Linear {
        return Err(Error::config("priu_linear needs a linear-regression cache"));
    }
    priu_update(ds, prepared, request)
}

/// Logistic-regression entry point over a dense cache.
pub fn priu_logistic(
    ds: &TrainingDataset,
    prepared: &PreparedCache,
    request: &DeletionRequest,
) -> Result<(ModelParams, UpdateReport)> {
    if !prepared.kind().is_logistic() {
        return Err(Error::config("priu_logistic needs a logistic cache"));
    }
    if prepared.cache.mode() == CacheMode::SparseLinearized {
        return Err(Error::config("use priu_sparse_logistic for sparse-linearized caches"));
    }
    priu_update(ds, prepared, request)
}

/// Sparse replay over the remaining rows of every batch.
pub fn priu_sparse_logistic(
    ds: &TrainingDataset,
    prepared: &PreparedCache,
    request: &DeletionRequest,
) -> Result<(ModelParams, UpdateReport)> {
    if !prepared.kind().is_logistic() {
        return Err(Error::config("priu_sparse_logistic needs a logistic cache"));
    }
    if prepared.cache.mode() != CacheMode::SparseLinearized {
        return Err(Error::config("priu_sparse_logistic needs a sparse-linearized cache"));
    }
    priu_update(ds, prepared, request)
}
