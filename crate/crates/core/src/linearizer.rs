//! Piecewise-linear stand-in for `f(x) = 1 - 1/(1 + e^{-x})` and the
//! per-sample linearisation coefficients taken along the training trajectory.
//!
//! Every update path works with the affine per-sample form
//!
//! ```text
//! w <- (1 - eta lambda) w + (eta / B_U) sum_i (A_i w + b_i)
//! ```
//!
//! where for linear regression `A_i = -2 x xᵀ`, `b_i = 2 y x`; for binary
//! logistic regression `A_i = a x xᵀ`, `b_i = b y x` with `(a, b)` the
//! interpolation segment at the training-time argument; and for the
//! multinomial model the softmax residual is replaced by its tangent plane
//! at the training-time logits. [`Linearization`] evaluates these terms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::PackedSym;
use crate::model::{BatchSchedule, ModelKind, TrainingDataset};
use crate::trainer::{class_scores, one_minus_sigmoid, softmax, TrainRun};

/// Segment index of the left tail (`x < -a_bound`).
pub const TAIL_LOW: u32 = u32::MAX - 1;
/// Segment index of the right tail (`x > a_bound`).
pub const TAIL_HIGH: u32 = u32::MAX;

/// `max |f''|` for `f = 1 - sigmoid`, attained where `sigmoid = 1/2 ± 1/(2√3)`.
pub const MAX_ABS_F2: f64 = 0.096_225_044_864_937_63;

/// Uniform piecewise-linear interpolation of `f` on `[-a_bound, a_bound]`,
/// constant outside. Breakpoints are implicit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationTable {
    a_bound: f64,
    segments: u32,
}

impl Default for InterpolationTable {
    fn default() -> Self {
        InterpolationTable {
            a_bound: 20.0,
            segments: 1_000_000,
        }
    }
}

impl InterpolationTable {
    pub fn new(a_bound: f64, segments: u32) -> Result<Self> {
        if !(a_bound > 0.0 && a_bound.is_finite()) {
            return Err(Error::config(format!("interpolation half-width {a_bound} must be positive")));
        }
        if segments == 0 || segments >= TAIL_LOW {
            return Err(Error::config(format!("invalid segment count {segments}")));
        }
        Ok(InterpolationTable { a_bound, segments })
    }

    pub fn a_bound(&self) -> f64 {
        self.a_bound
    }

    pub fn segments(&self) -> u32 {
        self.segments
    }

    pub fn delta_x(&self) -> f64 {
        2.0 * self.a_bound / self.segments as f64
    }

    /// `(Δx)²/8 · max|f''|`
    pub fn error_bound(&self) -> f64 {
        let dx = self.delta_x();
        dx * dx / 8.0 * MAX_ABS_F2
    }

    #[inline]
    fn breakpoint(&self, j: u32) -> f64 {
        -self.a_bound + 2.0 * self.a_bound * j as f64 / self.segments as f64
    }

    #[inline]
    pub fn segment(&self, x: f64) -> Result<u32> {
        if x.is_nan() {
            return Err(Error::numeric("interpolation at NaN"));
        }
        if x < -self.a_bound {
            return Ok(TAIL_LOW);
        }
        if x > self.a_bound {
            return Ok(TAIL_HIGH);
        }
        let j = ((x + self.a_bound) * self.segments as f64 / (2.0 * self.a_bound)).floor() as u32;
        Ok(j.min(self.segments - 1))
    }

    /// Slope and intercept of segment `seg`.
    #[inline]
    pub fn coeffs(&self, seg: u32) -> Result<(f64, f64)> {
        match seg {
            TAIL_LOW => Ok((0.0, one_minus_sigmoid(-self.a_bound))),
            TAIL_HIGH => Ok((0.0, one_minus_sigmoid(self.a_bound))),
            j if j < self.segments => {
                let x0 = self.breakpoint(j);
                let x1 = self.breakpoint(j + 1);
                let f0 = one_minus_sigmoid(x0);
                let a = (one_minus_sigmoid(x1) - f0) / (x1 - x0);
                Ok((a, f0 - a * x0))
            }
            j => Err(Error::CacheCorrupt(format!("segment index {j} out of range"))),
        }
    }

    /// `(s(x), a, b)` with `s(x) = a x + b`.
    pub fn interpolant(&self, x: f64) -> Result<(f64, f64, f64)> {
        let (a, b) = self.coeffs(self.segment(x)?)?;
        Ok((a * x + b, a, b))
    }
}

/// Raw linearisation coefficients as they are stored in a cache.
#[derive(Debug, Clone, PartialEq)]
pub enum CoeffData {
    /// One segment index per slot.
    Binary(Vec<u32>),
    /// `classes` training-time logits per slot.
    Multinomial { classes: usize, logits: Vec<f64> },
}

/// Coefficients for a run of slots. For per-iteration coefficients slot
/// `t * B + k` belongs to the `k`-th row of batch `t`; frozen coefficients
/// use one slot per dataset row.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCoeffs {
    pub data: CoeffData,
}

impl LinearCoeffs {
    fn empty(kind: ModelKind) -> Result<Self> {
        let data = match kind {
            ModelKind::Linear => return Err(Error::config("linear regression needs no linearisation")),
            ModelKind::BinaryLogistic => CoeffData::Binary(Vec::new()),
            ModelKind::MultinomialLogistic { classes } => CoeffData::Multinomial {
                classes,
                logits: Vec::new(),
            },
        };
        Ok(LinearCoeffs { data })
    }

    pub fn slots(&self) -> usize {
        match &self.data {
            CoeffData::Binary(s) => s.len(),
            CoeffData::Multinomial { classes, logits } => logits.len() / classes,
        }
    }

    /// Appends coefficients for `rows` evaluated at `w`.
    fn push_rows(
        &mut self,
        ds: &TrainingDataset,
        table: &InterpolationTable,
        rows: impl Iterator<Item = usize>,
        w: &[f64],
    ) -> Result<()> {
        let x = ds.features();
        match &mut self.data {
            CoeffData::Binary(segs) => {
                for i in rows {
                    let z = ds.label(i) * x.row_dot(i, w);
                    segs.push(table.segment(z)?);
                }
            }
            CoeffData::Multinomial { classes, logits } => {
                let mut z = vec![0.0; *classes];
                for i in rows {
                    class_scores(x, i, w, ds.m(), &mut z);
                    if z.iter().any(|v| !v.is_finite()) {
                        return Err(Error::numeric("non-finite logits while linearising"));
                    }
                    logits.extend_from_slice(&z);
                }
            }
        }
        Ok(())
    }
}

/// Collects per-iteration coefficients while a trajectory streams past.
pub struct CoeffCollector<'a> {
    ds: &'a TrainingDataset,
    table: InterpolationTable,
    schedule: &'a BatchSchedule,
    coeffs: LinearCoeffs,
    next: usize,
}

impl<'a> CoeffCollector<'a> {
    pub fn new(ds: &'a TrainingDataset, table: InterpolationTable, schedule: &'a BatchSchedule) -> Result<Self> {
        Ok(CoeffCollector {
            ds,
            table,
            schedule,
            coeffs: LinearCoeffs::empty(ds.kind())?,
            next: 0,
        })
    }

    /// Records the coefficients of iteration `t` at `w = w^(t)`.
    pub fn observe(&mut self, t: usize, w: &[f64]) -> Result<()> {
        if t != self.next {
            return Err(Error::config(format!(
                "trajectory skipped from iteration {} to {t}",
                self.next
            )));
        }
        let rows = self.schedule.batch(t).iter().map(|&i| i as usize);
        self.coeffs.push_rows(self.ds, &self.table, rows, w)?;
        self.next += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<LinearCoeffs> {
        if self.next != self.schedule.iterations() {
            return Err(Error::config(format!(
                "trajectory covers {} of {} iterations",
                self.next,
                self.schedule.iterations()
            )));
        }
        Ok(self.coeffs)
    }
}

/// Coefficients for every `(t, i in batch t)` from a run recorded with
/// stride 1.
pub fn extract_coeffs(ds: &TrainingDataset, run: &TrainRun, table: &InterpolationTable) -> Result<LinearCoeffs> {
    let mut collector = CoeffCollector::new(ds, *table, &run.schedule)?;
    for t in 0..run.hp.iterations {
        let entry = run
            .params_trajectory
            .get(t)
            .filter(|p| p.iteration == t)
            .ok_or_else(|| Error::config(format!("trajectory has no iterate for iteration {t}")))?;
        collector.observe(t, &entry.w)?;
    }
    collector.finish()
}

/// Coefficients of every row at a single parameter vector (slot = row).
pub fn coeffs_at(ds: &TrainingDataset, table: &InterpolationTable, w: &[f64]) -> Result<LinearCoeffs> {
    let mut c = LinearCoeffs::empty(ds.kind())?;
    c.push_rows(ds, table, 0..ds.n(), w)?;
    Ok(c)
}

/// Per-sample affine terms `(A_i, b_i)` ready for the update loops.
#[derive(Debug, Clone)]
pub enum Linearization {
    Linear,
    Binary {
        a: Vec<f64>,
        b: Vec<f64>,
    },
    /// Softmax tangent plane: residual `p(z) - e_y ≈ c + J z - e_y` with
    /// `J = diag(p0) - p0 p0ᵀ` and `c = p0 - J z0`.
    Multinomial {
        classes: usize,
        probs: Vec<f64>,
        offset: Vec<f64>,
    },
}

impl Linearization {
    pub fn decode(coeffs: &LinearCoeffs, table: &InterpolationTable) -> Result<Self> {
        match &coeffs.data {
            CoeffData::Binary(segs) => {
                let mut a = Vec::with_capacity(segs.len());
                let mut b = Vec::with_capacity(segs.len());
                for &s in segs {
                    let (sa, sb) = table.coeffs(s)?;
                    a.push(sa);
                    b.push(sb);
                }
                Ok(Linearization::Binary { a, b })
            }
            CoeffData::Multinomial { classes, logits } => {
                let q = *classes;
                let mut probs = Vec::with_capacity(logits.len());
                let mut offset = Vec::with_capacity(logits.len());
                for z0 in logits.chunks_exact(q) {
                    let mut p = z0.to_vec();
                    softmax(&mut p);
                    let pz: f64 = p.iter().zip(z0).map(|(a, b)| a * b).sum();
                    for k in 0..q {
                        // c = p - (diag(p) - p pᵀ) z0
                        offset.push(p[k] - p[k] * z0[k] + p[k] * pz);
                    }
                    probs.extend_from_slice(&p);
                }
                Ok(Linearization::Multinomial {
                    classes: q,
                    probs,
                    offset,
                })
            }
        }
    }

    pub fn for_kind(kind: ModelKind, coeffs: Option<&LinearCoeffs>, table: &InterpolationTable) -> Result<Self> {
        match (kind, coeffs) {
            (ModelKind::Linear, _) => Ok(Linearization::Linear),
            (_, Some(c)) => {
                let lin = Self::decode(c, table)?;
                match (kind, &lin) {
                    (ModelKind::BinaryLogistic, Linearization::Binary { .. }) => Ok(lin),
                    (ModelKind::MultinomialLogistic { classes }, Linearization::Multinomial { classes: q, .. })
                        if classes == *q =>
                    {
                        Ok(lin)
                    }
                    _ => Err(Error::config("linearisation coefficients do not match the model kind")),
                }
            }
            (_, None) => Err(Error::CacheCorrupt("logistic model without linearisation coefficients".into())),
        }
    }

    /// `out += scale * A_i v`
    #[inline]
    pub fn add_matrix(
        &self,
        ds: &TrainingDataset,
        slot: usize,
        i: usize,
        v: &[f64],
        scale: f64,
        out: &mut [f64],
        scratch: &mut [f64],
    ) {
        let x = ds.features();
        match self {
            Linearization::Linear => {
                let d = x.row_dot(i, v);
                x.row_axpy(i, -2.0 * scale * d, out);
            }
            Linearization::Binary { a, .. } => {
                let d = x.row_dot(i, v);
                x.row_axpy(i, scale * a[slot] * d, out);
            }
            Linearization::Multinomial { classes, probs, .. } => {
                let q = *classes;
                let m = ds.m();
                let p = &probs[slot * q..(slot + 1) * q];
                class_scores(x, i, v, m, &mut scratch[..q]);
                let pz: f64 = p.iter().zip(&scratch[..q]).map(|(a, b)| a * b).sum();
                for k in 0..q {
                    let u = p[k] * (scratch[k] - pz);
                    x.row_axpy(i, -scale * u, &mut out[k * m..(k + 1) * m]);
                }
            }
        }
    }

    /// `out += scale * b_i`
    #[inline]
    pub fn add_vector(&self, ds: &TrainingDataset, slot: usize, i: usize, scale: f64, out: &mut [f64]) {
        let x = ds.features();
        let y = ds.label(i);
        match self {
            Linearization::Linear => x.row_axpy(i, 2.0 * scale * y, out),
            Linearization::Binary { b, .. } => x.row_axpy(i, scale * b[slot] * y, out),
            Linearization::Multinomial { classes, offset, .. } => {
                let q = *classes;
                let m = ds.m();
                for k in 0..q {
                    let mut c = offset[slot * q + k];
                    if k == y as usize {
                        c -= 1.0;
                    }
                    x.row_axpy(i, -scale * c, &mut out[k * m..(k + 1) * m]);
                }
            }
        }
    }

    /// `out += scale * (A_i w + b_i)`, one pass over the row per class.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub fn add_affine(
        &self,
        ds: &TrainingDataset,
        slot: usize,
        i: usize,
        w: &[f64],
        scale: f64,
        out: &mut [f64],
        scratch: &mut [f64],
    ) {
        let x = ds.features();
        let y = ds.label(i);
        match self {
            Linearization::Linear => {
                let d = x.row_dot(i, w);
                x.row_axpy(i, 2.0 * scale * (y - d), out);
            }
            Linearization::Binary { a, b } => {
                let d = x.row_dot(i, w);
                x.row_axpy(i, scale * (a[slot] * d + b[slot] * y), out);
            }
            Linearization::Multinomial { classes, probs, offset } => {
                let q = *classes;
                let m = ds.m();
                let p = &probs[slot * q..(slot + 1) * q];
                class_scores(x, i, w, m, &mut scratch[..q]);
                let pz: f64 = p.iter().zip(&scratch[..q]).map(|(a, b)| a * b).sum();
                for k in 0..q {
                    let mut r = p[k] * (scratch[k] - pz) + offset[slot * q + k];
                    if k == y as usize {
                        r -= 1.0;
                    }
                    x.row_axpy(i, -scale * r, &mut out[k * m..(k + 1) * m]);
                }
            }
        }
    }

    /// `packed += scale * A_i`
    pub fn add_matrix_packed(&self, ds: &TrainingDataset, slot: usize, i: usize, scale: f64, packed: &mut PackedSym) {
        let x = ds.features().row_dense(i);
        match self {
            Linearization::Linear => packed.add_outer(-2.0 * scale, &x),
            Linearization::Binary { a, .. } => packed.add_outer(scale * a[slot], &x),
            Linearization::Multinomial { classes, probs, .. } => {
                let q = *classes;
                let j = jacobian(&probs[slot * q..(slot + 1) * q]);
                packed.add_kron_outer(-scale, &j, q, &x);
            }
        }
    }

    /// Dense `(A_i, b_i)`, for the symbolic layer and tests.
    pub fn dense_terms(&self, ds: &TrainingDataset, slot: usize, i: usize) -> (DMatrix<f64>, DVector<f64>) {
        let d = ds.param_dim();
        let mut p = PackedSym::zeros(d);
        self.add_matrix_packed(ds, slot, i, 1.0, &mut p);
        let mut b = vec![0.0; d];
        self.add_vector(ds, slot, i, 1.0, &mut b);
        (p.to_dense(), DVector::from_vec(b))
    }
}

/// `diag(p) - p pᵀ`, row-major.
fn jacobian(p: &[f64]) -> Vec<f64> {
    let q = p.len();
    let mut j = vec![0.0; q * q];
    for r in 0..q {
        for c in 0..q {
            j[r * q + c] = if r == c { p[r] } else { 0.0 } - p[r] * p[c];
        }
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_schedule, DenseMatrix, Features, Hyperparams};
    use crate::trainer::{train, TrainOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn value_at_zero_is_half() {
        let t = InterpolationTable::default();
        assert_eq!(t.segment(0.0).unwrap(), 500_000);
        assert_eq!(t.interpolant(0.0).unwrap().0, 0.5);
    }

    #[test]
    fn tails_are_constant() {
        let t = InterpolationTable::default();
        let (s, a, b) = t.interpolant(25.0).unwrap();
        assert_eq!(a, 0.0);
        let f20 = 1.0 / (1.0 + 20f64.exp());
        assert!((b - f20).abs() < 1e-22);
        assert!((s - 2.06e-9).abs() < 1e-11);
        let (s, a, _) = t.interpolant(-25.0).unwrap();
        assert_eq!(a, 0.0);
        assert!((s - 1.0).abs() < 1e-8);
        assert!(t.interpolant(f64::NAN).is_err());
    }

    #[test]
    fn continuous_at_breakpoints() {
        let t = InterpolationTable::new(20.0, 1000).unwrap();
        for j in 1..1000u32 {
            let x = t.breakpoint(j);
            let (a0, b0) = t.coeffs(j - 1).unwrap();
            let (a1, b1) = t.coeffs(j).unwrap();
            assert!((a0 * x + b0 - (a1 * x + b1)).abs() < 1e-15);
        }
        let (a, b) = t.coeffs(999).unwrap();
        assert!((a * 20.0 + b - t.coeffs(TAIL_HIGH).unwrap().1).abs() < 1e-15);
    }

    #[test]
    fn numeric_second_derivative_peak() {
        let h = 1e-4;
        let mut best = 0.0f64;
        let mut x = -6.0;
        while x < 6.0 {
            let f2 = (one_minus_sigmoid(x + h) - 2.0 * one_minus_sigmoid(x) + one_minus_sigmoid(x - h)) / (h * h);
            best = best.max(f2.abs());
            x += 1e-3;
        }
        assert!((best - MAX_ABS_F2).abs() < 1e-6);
    }

    #[test]
    fn error_within_bound_and_slopes_non_positive() {
        let t = InterpolationTable::new(20.0, 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let x = rng.random_range(-20.0..20.0);
            let (s, a, _) = t.interpolant(x).unwrap();
            assert!((one_minus_sigmoid(x) - s).abs() <= t.error_bound() * (1.0 + 1e-9));
            assert!((-0.25..=0.0).contains(&a));
        }
    }

    fn toy(kind: ModelKind) -> (TrainingDataset, Hyperparams) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 12;
        let m = 3;
        let x = (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n)
            .map(|i| match kind {
                ModelKind::BinaryLogistic => {
                    if i % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                _ => (i % 3) as f64,
            })
            .collect();
        let ds = TrainingDataset::new(Features::Dense(DenseMatrix::new(n, m, x).unwrap()), labels, kind).unwrap();
        let hp = Hyperparams {
            eta: 0.5,
            lambda: 0.01,
            batch_size: 4,
            iterations: 9,
            seed: 2,
            model_kind: kind,
        };
        (ds, hp)
    }

    #[test]
    fn zero_trajectory_gives_midpoint_segment() {
        let (ds, mut hp) = toy(ModelKind::BinaryLogistic);
        hp.eta = f64::MIN_POSITIVE;
        let s = build_schedule(ds.n(), &hp).unwrap();
        let run = train(&ds, &hp, &s, &TrainOptions { w0: None, record_stride: 1 }).unwrap();
        let table = InterpolationTable::default();
        let c = extract_coeffs(&ds, &run, &table).unwrap();
        match &c.data {
            CoeffData::Binary(segs) => {
                assert_eq!(segs.len(), 36);
                assert!(segs.iter().all(|&s| s == 500_000));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn replay_identity_and_missing_trajectory() {
        let (ds, hp) = toy(ModelKind::BinaryLogistic);
        let s = build_schedule(ds.n(), &hp).unwrap();
        let table = InterpolationTable::default();
        let run = train(&ds, &hp, &s, &TrainOptions { w0: None, record_stride: 1 }).unwrap();
        let c = extract_coeffs(&ds, &run, &table).unwrap();
        let lin = Linearization::decode(&c, &table).unwrap();
        let Linearization::Binary { a, b } = &lin else { unreachable!() };
        for t in 0..hp.iterations {
            for (k, &i) in s.batch(t).iter().enumerate() {
                let z = ds.label(i as usize) * ds.features().row_dot(i as usize, &run.params_trajectory[t].w);
                let slot = t * hp.batch_size + k;
                assert_eq!(a[slot] * z + b[slot], table.interpolant(z).unwrap().0);
            }
        }
        let thin = train(&ds, &hp, &s, &TrainOptions { w0: None, record_stride: 2 }).unwrap();
        assert!(extract_coeffs(&ds, &thin, &table).is_err());
    }

    #[test]
    fn multinomial_tangent_plane_is_exact_at_expansion_point() {
        let kind = ModelKind::MultinomialLogistic { classes: 3 };
        let (ds, _) = toy(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let table = InterpolationTable::default();
        let lin = Linearization::decode(&coeffs_at(&ds, &table, &w).unwrap(), &table).unwrap();
        let mut scratch = vec![0.0; 3];
        for i in 0..ds.n() {
            // A_i w + b_i should equal minus the exact per-sample gradient at w
            let mut affine = vec![0.0; 9];
            lin.add_affine(&ds, i, i, &w, 1.0, &mut affine, &mut scratch);
            let mut grad = vec![0.0; 9];
            crate::trainer::add_sample_gradient(&ds, i, &w, -1.0, &mut grad, &mut scratch);
            for k in 0..9 {
                assert!((affine[k] - grad[k]).abs() < 1e-13);
            }
            let (am, bv) = lin.dense_terms(&ds, i, i);
            let dense = &am * DVector::from_column_slice(&w) + bv;
            for k in 0..9 {
                assert!((dense[k] - affine[k]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn binary_dense_terms_match_streaming() {
        let (ds, _) = toy(ModelKind::BinaryLogistic);
        let table = InterpolationTable::default();
        let w = [0.3, -0.7, 1.1];
        let lin = Linearization::decode(&coeffs_at(&ds, &table, &w).unwrap(), &table).unwrap();
        let v = [1.0, 2.0, -0.5];
        let mut scratch = [0.0; 1];
        for i in 0..ds.n() {
            let mut out = vec![0.0; 3];
            lin.add_affine(&ds, i, i, &v, 1.0, &mut out, &mut scratch);
            let (am, bv) = lin.dense_terms(&ds, i, i);
            let dense = &am * DVector::from_column_slice(&v) + bv;
            for k in 0..3 {
                assert!((dense[k] - out[k]).abs() < 1e-14);
            }
        }
    }
}
