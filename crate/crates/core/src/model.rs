//! Domain types shared by every other module: datasets, hyperparameters,
//! batch schedules, model parameters and deletion requests.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg;

/// Which objective is being minimised.
///
/// Written as `linear`, `binary` or `multinomial:<classes>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelKind {
    Linear,
    BinaryLogistic,
    MultinomialLogistic { classes: usize },
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Linear => write!(f, "linear"),
            ModelKind::BinaryLogistic => write!(f, "binary"),
            ModelKind::MultinomialLogistic { classes } => write!(f, "multinomial:{classes}"),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "binary" => Ok(ModelKind::BinaryLogistic),
            _ => {
                let classes = s
                    .strip_prefix("multinomial:")
                    .and_then(|q| q.parse::<usize>().ok())
                    .ok_or_else(|| Error::config(format!("unknown model kind {s:?}")))?;
                if classes < 2 {
                    return Err(Error::config("multinomial model needs at least two classes"));
                }
                Ok(ModelKind::MultinomialLogistic { classes })
            }
        }
    }
}

impl TryFrom<String> for ModelKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelKind> for String {
    fn from(k: ModelKind) -> String {
        k.to_string()
    }
}

impl ModelKind {
    /// Length of the flattened parameter vector for `m` features.
    pub fn param_dim(&self, m: usize) -> usize {
        match self {
            ModelKind::MultinomialLogistic { classes } => m * classes,
            _ => m,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelKind::Linear => 1,
            ModelKind::BinaryLogistic => 2,
            ModelKind::MultinomialLogistic { classes } => *classes,
        }
    }

    pub fn is_logistic(&self) -> bool {
        !matches!(self, ModelKind::Linear)
    }

    pub(crate) fn code(&self) -> u8 {
        match self {
            ModelKind::Linear => 0,
            ModelKind::BinaryLogistic => 1,
            ModelKind::MultinomialLogistic { .. } => 2,
        }
    }

    pub(crate) fn from_code(code: u8, classes: usize) -> Result<Self> {
        match code {
            0 => Ok(ModelKind::Linear),
            1 => Ok(ModelKind::BinaryLogistic),
            2 => Ok(ModelKind::MultinomialLogistic { classes }),
            other => Err(Error::Format(format!("unknown model kind code {other}"))),
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != rows + 1 || indptr[0] != 0 || *indptr.last().unwrap() != indices.len() {
            return Err(Error::shape("malformed CSR row pointer"));
        }
        if indices.len() != values.len() {
            return Err(Error::shape("CSR indices/values length mismatch"));
        }
        if indptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::shape("CSR row pointer not monotone"));
        }
        if indices.iter().any(|&c| c as usize >= cols) {
            return Err(Error::shape("CSR column index out of range"));
        }
        Ok(CsrMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Builds from per-row `(column, value)` lists.
    pub fn from_row_entries(cols: usize, rows: &[Vec<(u32, f64)>]) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in rows {
            let mut r = r.clone();
            r.sort_by_key(|e| e.0);
            for (c, v) in r {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self::new(rows.len(), cols, indptr, indices, values)
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scale_row(&mut self, i: usize, factor: f64) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        self.values[s..e].iter_mut().for_each(|v| *v *= factor);
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut data = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            let (idx, val) = self.row(i);
            for (&c, &v) in idx.iter().zip(val) {
                data[i * self.cols + c as usize] += v;
            }
        }
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Dense(DenseMatrix),
    Sparse(CsrMatrix),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StorageKind {
    Dense,
    Sparse,
}

impl Features {
    pub fn rows(&self) -> usize {
        match self {
            Features::Dense(d) => d.rows,
            Features::Sparse(s) => s.rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Features::Dense(d) => d.cols,
            Features::Sparse(s) => s.cols,
        }
    }

    /// `x_i . w`
    #[inline]
    pub fn row_dot(&self, i: usize, w: &[f64]) -> f64 {
        match self {
            Features::Dense(d) => linalg::dot(d.row(i), w),
            Features::Sparse(s) => {
                let (idx, val) = s.row(i);
                idx.iter().zip(val).map(|(&c, &v)| v * w[c as usize]).sum()
            }
        }
    }

    /// `out += alpha * x_i`
    #[inline]
    pub fn row_axpy(&self, i: usize, alpha: f64, out: &mut [f64]) {
        match self {
            Features::Dense(d) => linalg::axpy(alpha, d.row(i), out),
            Features::Sparse(s) => {
                let (idx, val) = s.row(i);
                for (&c, &v) in idx.iter().zip(val) {
                    out[c as usize] += alpha * v;
                }
            }
        }
    }

    /// Row `i` as a dense vector.
    pub fn row_dense(&self, i: usize) -> Vec<f64> {
        match self {
            Features::Dense(d) => d.row(i).to_vec(),
            Features::Sparse(s) => {
                let mut out = vec![0.0; s.cols];
                self.row_axpy(i, 1.0, &mut out);
                out
            }
        }
    }

    pub fn storage_kind(&self) -> StorageKind {
        match self {
            Features::Dense(_) => StorageKind::Dense,
            Features::Sparse(_) => StorageKind::Sparse,
        }
    }

    pub fn densified(&self) -> DenseMatrix {
        match self {
            Features::Dense(d) => d.clone(),
            Features::Sparse(s) => s.to_dense(),
        }
    }

    fn hash_into(&self, h: &mut Sha256) {
        match self {
            Features::Dense(d) => {
                h.update(b"dense");
                for v in &d.data {
                    h.update(v.to_le_bytes());
                }
            }
            Features::Sparse(s) => {
                h.update(b"sparse");
                for p in &s.indptr {
                    h.update((*p as u64).to_le_bytes());
                }
                for c in &s.indices {
                    h.update(c.to_le_bytes());
                }
                for v in &s.values {
                    h.update(v.to_le_bytes());
                }
            }
        }
    }
}

pub type Fingerprint = [u8; 16];

/// Feature matrix, labels and one provenance token per row.
///
/// Labels are stored as reals for every model kind: continuous targets for
/// linear regression, `+1/-1` for binary logistic regression and the class
/// index `0..q` for the multinomial model.
#[derive(Debug)]
pub struct TrainingDataset {
    features: Features,
    labels: Vec<f64>,
    tokens: Vec<u32>,
    kind: ModelKind,
    fingerprint: OnceLock<Fingerprint>,
}

impl Clone for TrainingDataset {
    fn clone(&self) -> Self {
        TrainingDataset {
            features: self.features.clone(),
            labels: self.labels.clone(),
            tokens: self.tokens.clone(),
            kind: self.kind,
            fingerprint: self.fingerprint.clone(),
        }
    }
}

impl TrainingDataset {
    /// Tokens default to the row indices.
    pub fn new(features: Features, labels: Vec<f64>, kind: ModelKind) -> Result<Self> {
        let n = features.rows();
        Self::with_tokens(features, labels, (0..n as u32).collect(), kind)
    }

    pub fn with_tokens(
        features: Features,
        labels: Vec<f64>,
        tokens: Vec<u32>,
        kind: ModelKind,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || tokens.len() != n {
            return Err(Error::shape(format!(
                "{} feature rows, {} labels, {} tokens",
                n,
                labels.len(),
                tokens.len()
            )));
        }
        let distinct: BTreeSet<u32> = tokens.iter().copied().collect();
        if distinct.len() != n {
            return Err(Error::data("provenance tokens must be pairwise distinct"));
        }
        if let Some(bad) = labels.iter().position(|y| !y.is_finite()) {
            return Err(Error::data(format!("label {bad} is not finite")));
        }
        match kind {
            ModelKind::Linear => {}
            ModelKind::BinaryLogistic => {
                if let Some(bad) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
                    return Err(Error::data(format!(
                        "binary labels must be +1/-1, row {bad} has {}",
                        labels[bad]
                    )));
                }
            }
            ModelKind::MultinomialLogistic { classes } => {
                if classes < 2 {
                    return Err(Error::config("multinomial model needs at least two classes"));
                }
                if let Some(bad) = labels
                    .iter()
                    .position(|&y| y < 0.0 || y.fract() != 0.0 || y as usize >= classes)
                {
                    return Err(Error::data(format!(
                        "class label {} at row {bad} outside 0..{classes}",
                        labels[bad]
                    )));
                }
            }
        }
        Ok(TrainingDataset {
            features,
            labels,
            tokens,
            kind,
            fingerprint: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn m(&self) -> usize {
        self.features.cols()
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn classes(&self) -> usize {
        self.kind.classes()
    }

    pub fn param_dim(&self) -> usize {
        self.kind.param_dim(self.m())
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn storage_kind(&self) -> StorageKind {
        self.features.storage_kind()
    }

    #[inline]
    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    /// Same rows and labels with dense storage.
    pub fn densified(&self) -> TrainingDataset {
        TrainingDataset {
            features: Features::Dense(self.features.densified()),
            labels: self.labels.clone(),
            tokens: self.tokens.clone(),
            kind: self.kind,
            fingerprint: OnceLock::new(),
        }
    }

    /// Copy with the feature rows in `rows` multiplied by `factor`.
    pub fn with_scaled_rows(&self, rows: &[u32], factor: f64) -> Result<TrainingDataset> {
        let mut features = self.features.clone();
        for &i in rows {
            let i = i as usize;
            if i >= self.n() {
                return Err(Error::data(format!("row {i} out of range")));
            }
            match &mut features {
                Features::Dense(d) => d.row_mut(i).iter_mut().for_each(|v| *v *= factor),
                Features::Sparse(s) => s.scale_row(i, factor),
            }
        }
        TrainingDataset::with_tokens(features, self.labels.clone(), self.tokens.clone(), self.kind)
    }

    /// The rows listed in `keep`, in that order.
    pub fn subset(&self, keep: &[usize]) -> Result<TrainingDataset> {
        let labels = keep.iter().map(|&i| self.labels[i]).collect();
        let tokens = keep.iter().map(|&i| self.tokens[i]).collect();
        let features = match &self.features {
            Features::Dense(d) => {
                let mut data = Vec::with_capacity(keep.len() * d.cols);
                for &i in keep {
                    data.extend_from_slice(d.row(i));
                }
                Features::Dense(DenseMatrix::new(keep.len(), d.cols, data)?)
            }
            Features::Sparse(s) => {
                let rows: Vec<Vec<(u32, f64)>> = keep
                    .iter()
                    .map(|&i| {
                        let (idx, val) = s.row(i);
                        idx.iter().copied().zip(val.iter().copied()).collect()
                    })
                    .collect();
                Features::Sparse(CsrMatrix::from_row_entries(s.cols, &rows)?)
            }
        };
        TrainingDataset::with_tokens(features, labels, tokens, self.kind)
    }

    /// 128-bit digest of shape, model kind, features and labels.
    pub fn fingerprint(&self) -> Fingerprint {
        *self.fingerprint.get_or_init(|| {
            let mut h = Sha256::new();
            h.update((self.n() as u64).to_le_bytes());
            h.update((self.m() as u64).to_le_bytes());
            h.update((self.classes() as u64).to_le_bytes());
            h.update([self.kind.code()]);
            self.features.hash_into(&mut h);
            for y in &self.labels {
                h.update(y.to_le_bytes());
            }
            let digest = h.finalize();
            let mut out = [0u8; 16];
            out.copy_from_slice(&digest[..16]);
            out
        })
    }
}

/// Training hyperparameters. The learning rate is constant across iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub eta: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub model_kind: ModelKind,
}

impl Hyperparams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.eta)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!(
                "regularization rate must be positive, got {}",
                self.lambda
            )));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::config(format!(
                "batch size {} must lie in 1..={n}",
                self.batch_size
            )));
        }
        if self.iterations == 0 {
            return Err(Error::config("at least one iteration is required"));
        }
        Ok(())
    }

    pub fn check_dataset(&self, ds: &TrainingDataset) -> Result<()> {
        if self.model_kind != ds.kind() {
            return Err(Error::config(format!(
                "hyperparameters are for {:?} but the dataset is {:?}",
                self.model_kind,
                ds.kind()
            )));
        }
        self.validate(ds.n())
    }
}

/// Per-iteration mini-batch assignment.
///
/// Each epoch draws a fresh seeded permutation of the rows and cuts it into
/// `n / B` consecutive batches; a trailing partial batch is dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSchedule {
    n: usize,
    batch_size: usize,
    iterations: usize,
    seed: u64,
    assignments: Vec<u32>,
    epoch_permutations: Vec<Vec<u32>>,
}

impl BatchSchedule {
    pub fn batch(&self, t: usize) -> &[u32] {
        &self.assignments[t * self.batch_size..(t + 1) * self.batch_size]
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn epoch_permutations(&self) -> &[Vec<u32>] {
        &self.epoch_permutations
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n / self.batch_size
    }

    /// True when this schedule was produced for exactly `(n, hp)`.
    pub fn matches(&self, n: usize, hp: &Hyperparams) -> bool {
        self.n == n
            && self.batch_size == hp.batch_size
            && self.iterations == hp.iterations
            && self.seed == hp.seed
    }
}

/// Fisher-Yates with 64-bit range draws so the permutation does not depend on
/// the platform's pointer width.
fn seeded_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..n as u32).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i as u64) as usize;
        perm.swap(i, j);
    }
    perm
}

pub fn build_schedule(n: usize, hp: &Hyperparams) -> Result<BatchSchedule> {
    if n < hp.batch_size || hp.batch_size == 0 {
        return Err(Error::config(format!(
            "cannot cut {n} rows into batches of {}",
            hp.batch_size
        )));
    }
    if hp.iterations == 0 {
        return Err(Error::config("at least one iteration is required"));
    }
    let per_epoch = n / hp.batch_size;
    let epochs = hp.iterations.div_ceil(per_epoch);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut assignments = Vec::with_capacity(hp.iterations * hp.batch_size);
    let mut epoch_permutations = Vec::with_capacity(epochs);
    'outer: for _ in 0..epochs {
        let perm = seeded_permutation(&mut rng, n);
        for b in 0..per_epoch {
            if assignments.len() == hp.iterations * hp.batch_size {
                epoch_permutations.push(perm);
                break 'outer;
            }
            assignments.extend_from_slice(&perm[b * hp.batch_size..(b + 1) * hp.batch_size]);
        }
        epoch_permutations.push(perm);
    }
    Ok(BatchSchedule {
        n,
        batch_size: hp.batch_size,
        iterations: hp.iterations,
        seed: hp.seed,
        assignments,
        epoch_permutations,
    })
}

/// Model parameters, flattened class-major for the multinomial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub w: Vec<f64>,
    /// Iteration count that produced these parameters.
    pub iteration: usize,
}

impl ModelParams {
    pub fn new(w: Vec<f64>, iteration: usize) -> Result<Self> {
        if !linalg::all_finite(&w) {
            return Err(Error::Divergence { iteration });
        }
        Ok(ModelParams { w, iteration })
    }

    pub fn zeros(dim: usize) -> Self {
        ModelParams {
            w: vec![0.0; dim],
            iteration: 0,
        }
    }
}

/// Sorted set of row indices to remove.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeletionRequest {
    removed: Vec<u32>,
    #[serde(skip)]
    mask: Vec<bool>,
    pub label: String,
}

impl DeletionRequest {
    pub fn new(removed: impl IntoIterator<Item = u32>, n: usize, label: impl Into<String>) -> Result<Self> {
        let set: BTreeSet<u32> = removed.into_iter().collect();
        if let Some(&bad) = set.iter().find(|&&i| i as usize >= n) {
            return Err(Error::config(format!("removed index {bad} is outside 0..{n}")));
        }
        if set.len() >= n {
            return Err(Error::config("a deletion request may not remove every sample"));
        }
        let mut mask = vec![false; n];
        for &i in &set {
            mask[i as usize] = true;
        }
        Ok(DeletionRequest {
            removed: set.into_iter().collect(),
            mask,
            label: label.into(),
        })
    }

    pub fn empty(n: usize) -> Self {
        DeletionRequest {
            removed: Vec::new(),
            mask: vec![false; n],
            label: String::from("none"),
        }
    }

    pub fn removed(&self) -> &[u32] {
        &self.removed
    }

    pub fn len(&self) -> usize {
        self.removed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.removed.is_empty()
    }

    /// Size of the dataset this request was validated against.
    pub fn n(&self) -> usize {
        self.mask.len()
    }

    #[inline]
    pub fn contains(&self, i: u32) -> bool {
        self.mask[i as usize]
    }

    pub fn check_dataset(&self, n: usize) -> Result<()> {
        if self.mask.len() != n {
            return Err(Error::config(format!(
                "deletion request was built for {} rows, dataset has {n}",
                self.mask.len()
            )));
        }
        Ok(())
    }

    /// Rows that survive the deletion, ascending.
    pub fn kept(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| !self.mask[i]).collect()
    }
}

/// `|B^(t) \ R|`
pub fn effective_batch_size(schedule: &BatchSchedule, t: usize, request: &DeletionRequest) -> usize {
    schedule
        .batch(t)
        .iter()
        .filter(|&&i| !request.contains(i))
        .count()
}
