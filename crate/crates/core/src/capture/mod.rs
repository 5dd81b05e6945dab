//! Provenance capture: the per-iteration, model-free intermediates that let
//! a deletion be propagated without retraining.

mod format;
mod stats;

use serde::{Deserialize, Serialize};

pub use format::{load_cache, read_cache, save_cache, write_cache, FORMAT_VERSION, MAGIC};
pub use stats::{cache_stats, CacheStats};

use crate::error::{Error, Result};
use crate::linalg::{self, PackedSym};
use crate::linearizer::{coeffs_at, CoeffCollector, InterpolationTable, LinearCoeffs, Linearization};
use crate::model::{
    BatchSchedule, Fingerprint, Hyperparams, ModelKind, StorageKind, TrainingDataset,
};
use crate::trainer::{train_observed, TrainOptions, TrainRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheMode {
    /// Full packed Gram / coefficient-weighted matrices per iteration.
    DenseFull,
    /// Truncated eigen factors `P Vᵀ` per iteration.
    DenseSvd,
    /// Linearisation coefficients only; updates replay over remaining rows.
    SparseLinearized,
}

impl CacheMode {
    pub(crate) fn code(self) -> u8 {
        match self {
            CacheMode::DenseFull => 0,
            CacheMode::DenseSvd => 1,
            CacheMode::SparseLinearized => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(CacheMode::DenseFull),
            1 => Ok(CacheMode::DenseSvd),
            2 => Ok(CacheMode::SparseLinearized),
            _ => Err(Error::Format(format!("unknown cache mode {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheHeader {
    pub fingerprint: Fingerprint,
    pub n: usize,
    pub m: usize,
    pub classes: usize,
    pub storage: StorageKind,
    pub hp: Hyperparams,
    pub mode: CacheMode,
    pub epsilon: f64,
    pub t_s: Option<usize>,
    pub table: InterpolationTable,
}

/// Cached matrix term of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum IterMatrix {
    Full(PackedSym),
    /// `P Vᵀ` with both factors `d x rank`, column-major.
    Factors { rank: usize, p: Vec<f64>, v: Vec<f64> },
    Absent,
}

impl IterMatrix {
    pub fn rank(&self) -> Option<usize> {
        match self {
            IterMatrix::Factors { rank, .. } => Some(*rank),
            _ => None,
        }
    }

    /// `out = M w` (`tmp` has at least `rank` entries in factor mode).
    #[inline]
    pub(crate) fn apply(&self, w: &[f64], out: &mut [f64], tmp: &mut [f64]) {
        match self {
            IterMatrix::Full(g) => g.symv(w, out),
            IterMatrix::Factors { rank, p, v } => {
                let d = w.len();
                for k in 0..*rank {
                    tmp[k] = linalg::dot(&v[k * d..(k + 1) * d], w);
                }
                out.iter_mut().for_each(|o| *o = 0.0);
                for k in 0..*rank {
                    linalg::axpy(tmp[k], &p[k * d..(k + 1) * d], out);
                }
            }
            IterMatrix::Absent => out.iter_mut().for_each(|o| *o = 0.0),
        }
    }
}

/// One iteration's cached terms: for linear regression `G = Σ x xᵀ` and
/// `g = Σ y x`; for logistic regression `C = Σ A_i` and `D = Σ b_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterEntry {
    pub matrix: IterMatrix,
    pub moment: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProvenanceCache {
    pub header: CacheHeader,
    pub w0: Vec<f64>,
    /// Parameters at the end of training.
    pub trained: Vec<f64>,
    /// Empty in sparse mode.
    pub iterations: Vec<IterEntry>,
    /// Per-iteration linearisation coefficients (logistic models).
    pub coeffs: Option<LinearCoeffs>,
    /// Coefficients of every row at `w^(t_s)` (logistic models with `t_s`).
    pub frozen: Option<LinearCoeffs>,
}

impl ProvenanceCache {
    pub fn kind(&self) -> ModelKind {
        self.header.hp.model_kind
    }

    pub fn param_dim(&self) -> usize {
        self.kind().param_dim(self.header.m)
    }

    pub fn check_dataset(&self, ds: &TrainingDataset) -> Result<()> {
        let h = &self.header;
        if ds.n() != h.n || ds.m() != h.m || ds.kind() != h.hp.model_kind || ds.fingerprint() != h.fingerprint {
            return Err(Error::Fingerprint);
        }
        Ok(())
    }

    /// Scales turning the cached matrix/moment into `Σ A_i` and `Σ b_i`.
    pub(crate) fn term_scales(&self) -> (f64, f64) {
        match self.kind() {
            ModelKind::Linear => (-2.0, 2.0),
            _ => (1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureOptions {
    pub mode: CacheMode,
    /// Relative spectral threshold for `DenseSvd`; 0 keeps numerical full rank.
    pub epsilon: f64,
    /// Iteration whose coefficients are frozen for the early-stop path.
    pub t_s: Option<usize>,
    pub table: InterpolationTable,
}

impl Default for CaptureOptions {
    fn default() -> Self {
        CaptureOptions {
            mode: CacheMode::DenseFull,
            epsilon: 0.01,
            t_s: None,
            table: InterpolationTable::default(),
        }
    }
}

/// `round(0.7 * tau)`
pub fn default_t_s(iterations: usize) -> usize {
    ((iterations as f64) * 0.7).round() as usize
}

fn check_options(ds: &TrainingDataset, hp: &Hyperparams, opts: &CaptureOptions) -> Result<()> {
    if opts.mode == CacheMode::SparseLinearized && ds.storage_kind() != StorageKind::Sparse {
        return Err(Error::config("sparse-linearized capture needs a sparse dataset"));
    }
    if !(opts.epsilon >= 0.0 && opts.epsilon < 1.0) {
        return Err(Error::config(format!("SVD threshold {} must lie in [0, 1)", opts.epsilon)));
    }
    if let Some(ts) = opts.t_s {
        if ts > hp.iterations {
            return Err(Error::config(format!(
                "early-stop iteration {ts} exceeds {} iterations",
                hp.iterations
            )));
        }
        if hp.model_kind == ModelKind::Linear {
            return Err(Error::config("early stop applies to logistic models only"));
        }
    }
    Ok(())
}

/// Trains and captures in one pass; the trajectory is consumed as it
/// streams instead of being stored.
pub fn train_and_capture(
    ds: &TrainingDataset,
    hp: &Hyperparams,
    schedule: &BatchSchedule,
    train_opts: &TrainOptions,
    opts: &CaptureOptions,
) -> Result<(TrainRun, ProvenanceCache)> {
    check_options(ds, hp, opts)?;
    let mut collector = match hp.model_kind {
        ModelKind::Linear => None,
        _ => Some(CoeffCollector::new(ds, opts.table, schedule)?),
    };
    let mut w_ts = None;
    let run = train_observed(ds, hp, schedule, train_opts, |t, w| {
        if let Some(c) = collector.as_mut() {
            c.observe(t, w)?;
        }
        if opts.t_s == Some(t) {
            w_ts = Some(w.to_vec());
        }
        Ok(())
    })?;
    let coeffs = collector.map(CoeffCollector::finish).transpose()?;
    if opts.t_s == Some(hp.iterations) {
        w_ts = Some(run.final_params.w.clone());
    }
    let frozen = match w_ts {
        Some(w) => Some(coeffs_at(ds, &opts.table, &w)?),
        None => None,
    };
    let cache = assemble(ds, &run, coeffs, frozen, opts)?;
    Ok((run, cache))
}

/// Builds a cache from a finished run. Logistic models need `coeffs`; an
/// early-stop iteration needs `w^(t_s)` in the run's trajectory.
pub fn capture(
    ds: &TrainingDataset,
    run: &TrainRun,
    coeffs: Option<&LinearCoeffs>,
    opts: &CaptureOptions,
) -> Result<ProvenanceCache> {
    check_options(ds, &run.hp, opts)?;
    let frozen = match opts.t_s {
        Some(ts) => {
            let w = run
                .params_trajectory
                .iter()
                .find(|p| p.iteration == ts)
                .ok_or_else(|| Error::config(format!("trajectory has no iterate for iteration {ts}")))?;
            Some(coeffs_at(ds, &opts.table, &w.w)?)
        }
        None => None,
    };
    assemble(ds, run, coeffs.cloned(), frozen, opts)
}

fn assemble(
    ds: &TrainingDataset,
    run: &TrainRun,
    coeffs: Option<LinearCoeffs>,
    frozen: Option<LinearCoeffs>,
    opts: &CaptureOptions,
) -> Result<ProvenanceCache> {
    let hp = run.hp;
    let kind = hp.model_kind;
    let b = hp.batch_size;
    match (kind, &coeffs) {
        (ModelKind::Linear, Some(_)) => {
            return Err(Error::config("linear regression takes no linearisation coefficients"))
        }
        (ModelKind::Linear, None) => {}
        (_, None) => return Err(Error::config("logistic capture needs linearisation coefficients")),
        (_, Some(c)) => {
            if c.slots() != hp.iterations * b {
                return Err(Error::config(format!(
                    "{} coefficient slots for {} iterations of batch {b}",
                    c.slots(),
                    hp.iterations
                )));
            }
        }
    }
    let lin = Linearization::for_kind(kind, coeffs.as_ref(), &opts.table)?;
    let d = ds.param_dim();
    let per_sample_rank = match kind {
        ModelKind::MultinomialLogistic { classes } => classes,
        _ => 1,
    };
    let rank_cap = d.min(b * per_sample_rank);
    let mut iterations = Vec::new();
    if opts.mode != CacheMode::SparseLinearized {
        iterations.reserve(hp.iterations);
        for t in 0..hp.iterations {
            let (packed, moment) = iteration_terms(ds, &lin, &run.schedule, t);
            let matrix = match opts.mode {
                CacheMode::DenseFull => IterMatrix::Full(packed),
                _ => truncate(&packed, opts.epsilon, rank_cap).map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("iteration {t}: {msg}")),
                    other => other,
                })?,
            };
            iterations.push(IterEntry { matrix, moment });
        }
    }
    Ok(ProvenanceCache {
        header: CacheHeader {
            fingerprint: ds.fingerprint(),
            n: ds.n(),
            m: ds.m(),
            classes: ds.classes(),
            storage: ds.storage_kind(),
            hp,
            mode: opts.mode,
            epsilon: opts.epsilon,
            t_s: opts.t_s,
            table: opts.table,
        },
        w0: run.w0.clone(),
        trained: run.final_params.w.clone(),
        iterations,
        coeffs,
        frozen,
    })
}

/// Matrix and moment of iteration `t` in cache convention.
fn iteration_terms(
    ds: &TrainingDataset,
    lin: &Linearization,
    schedule: &BatchSchedule,
    t: usize,
) -> (PackedSym, Vec<f64>) {
    let d = ds.param_dim();
    let b = schedule.batch_size();
    let mut packed = PackedSym::zeros(d);
    let mut moment = vec![0.0; d];
    for (k, &i) in schedule.batch(t).iter().enumerate() {
        let i = i as usize;
        match lin {
            Linearization::Linear => {
                let x = ds.features().row_dense(i);
                packed.add_outer(1.0, &x);
                linalg::axpy(ds.label(i), &x, &mut moment);
            }
            _ => {
                let slot = t * b + k;
                lin.add_matrix_packed(ds, slot, i, 1.0, &mut packed);
                lin.add_vector(ds, slot, i, 1.0, &mut moment);
            }
        }
    }
    (packed, moment)
}

/// Smallest `r <= rank_cap` whose residual spectral norm is at most
/// `epsilon` times the largest singular value.
pub fn truncate(packed: &PackedSym, epsilon: f64, rank_cap: usize) -> Result<IterMatrix> {
    let d = packed.dim();
    let eig = linalg::symmetric_eigen_by_magnitude(&packed.to_dense())?;
    let top = eig.values.first().map_or(0.0, |v| v.abs());
    let threshold = if epsilon > 0.0 {
        epsilon * top
    } else {
        d as f64 * f64::EPSILON * top
    };
    let rank = eig
        .values
        .iter()
        .take_while(|v| top > 0.0 && v.abs() > threshold)
        .count()
        .min(rank_cap);
    let mut p = Vec::with_capacity(d * rank);
    let mut v = Vec::with_capacity(d * rank);
    for k in 0..rank {
        let col = eig.vectors.column(k);
        v.extend(col.iter().copied());
        p.extend(col.iter().map(|x| x * eig.values[k]));
    }
    Ok(IterMatrix::Factors { rank, p, v })
}
