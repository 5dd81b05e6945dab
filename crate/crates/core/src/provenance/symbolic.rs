//! Annotated training: the parameter vector as a formal sum over monomials
//! of sample tokens. Specialising removed tokens to zero recovers the model
//! trained without them, which makes this a brute-force oracle for the
//! numeric update paths on tiny instances.

use nalgebra::DMatrix;

use super::annotated::{AnnotatedMatrix, DEFAULT_MAX_TERMS};
use super::polynomial::{Monomial, ProvPolynomial};
use crate::error::{Error, Result};
use crate::linearizer::{InterpolationTable, LinearCoeffs, Linearization};
use crate::model::{effective_batch_size, BatchSchedule, DeletionRequest, Hyperparams, TrainingDataset};

/// Largest iteration count accepted without exponent collapsing.
pub const NON_IDEMPOTENT_MAX_ITERATIONS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolicOptions {
    pub max_samples: usize,
    pub max_iterations: usize,
    pub idempotent: bool,
    pub max_terms: usize,
}

impl Default for SymbolicOptions {
    fn default() -> Self {
        SymbolicOptions {
            max_samples: 6,
            max_iterations: 4,
            idempotent: true,
            max_terms: DEFAULT_MAX_TERMS,
        }
    }
}

/// What the per-iteration sum is divided by. The symbolic layer never
/// divides polynomials: the divisor is an integer fixed up front.
#[derive(Debug, Clone, Copy)]
pub enum Divisor<'a> {
    /// The full batch size `B`.
    Full,
    /// `B_U` for this request; iterations whose batch is entirely removed
    /// only shrink.
    Resolved(&'a DeletionRequest),
}

/// Annotated parameters after every iteration, `W^(0)` through `W^(τ)`.
#[allow(clippy::too_many_arguments)]
pub fn symbolic_trajectory(
    ds: &TrainingDataset,
    hp: &Hyperparams,
    schedule: &BatchSchedule,
    coeffs: Option<&LinearCoeffs>,
    table: &InterpolationTable,
    divisor: Divisor<'_>,
    w0: Option<&[f64]>,
    opts: &SymbolicOptions,
) -> Result<Vec<AnnotatedMatrix>> {
    if ds.n() > opts.max_samples {
        return Err(Error::SymbolicLimit(format!(
            "{} samples exceed the limit of {}",
            ds.n(),
            opts.max_samples
        )));
    }
    if hp.iterations > opts.max_iterations {
        return Err(Error::SymbolicLimit(format!(
            "{} iterations exceed the limit of {}",
            hp.iterations, opts.max_iterations
        )));
    }
    if !opts.idempotent && hp.iterations > NON_IDEMPOTENT_MAX_ITERATIONS {
        return Err(Error::SymbolicLimit(format!(
            "non-idempotent mode is capped at {NON_IDEMPOTENT_MAX_ITERATIONS} iterations"
        )));
    }
    // η = 0 is meaningful here (the expression stays at w0) even though
    // training rejects it
    let checked = Hyperparams {
        eta: if hp.eta == 0.0 { 1.0 } else { hp.eta },
        ..*hp
    };
    checked.check_dataset(ds)?;
    if !schedule.matches(ds.n(), hp) {
        return Err(Error::config("batch schedule was built for different inputs"));
    }
    if let Divisor::Resolved(r) = divisor {
        r.check_dataset(ds.n())?;
    }
    let lin = Linearization::for_kind(hp.model_kind, coeffs, table)?;
    if let Some(c) = coeffs {
        if c.slots() != hp.iterations * hp.batch_size {
            return Err(Error::config("coefficient count does not match the schedule"));
        }
    }
    let d = ds.param_dim();
    let idem = opts.idempotent;
    let start = match w0 {
        Some(w) if w.len() == d => DMatrix::from_column_slice(d, 1, w),
        Some(_) => return Err(Error::shape("initial parameters have the wrong length")),
        None => DMatrix::zeros(d, 1),
    };
    let mut w = AnnotatedMatrix::constant(start, idem);
    let mut out = vec![w.clone()];
    let b = hp.batch_size;
    let shrink = 1.0 - hp.eta * hp.lambda;
    for t in 0..hp.iterations {
        let batch = schedule.batch(t);
        let div = match divisor {
            Divisor::Full => b,
            Divisor::Resolved(r) => effective_batch_size(schedule, t, r),
        };
        let mut next = w.scale(shrink);
        if div > 0 {
            let mut s_mat = AnnotatedMatrix::zero(d, d, idem);
            let mut s_vec = AnnotatedMatrix::zero(d, 1, idem);
            for (k, &i) in batch.iter().enumerate() {
                let i = i as usize;
                // x_i carries p_i and so does y_i, hence p_i^2 on both terms
                let ann = ProvPolynomial::monomial(Monomial::power(ds.tokens()[i], 2), 1, idem);
                let (a, bv) = lin.dense_terms(ds, t * b + k, i);
                s_mat = s_mat.add(&AnnotatedMatrix::term(&ann, a))?;
                s_vec = s_vec.add(&AnnotatedMatrix::term(&ann, DMatrix::from_column_slice(d, 1, bv.as_slice())))?;
            }
            let grad = s_mat.mul_capped(&w, opts.max_terms)?.add(&s_vec)?;
            next = next.add(&grad.scale(hp.eta / div as f64))?;
        }
        if next.len() > opts.max_terms {
            return Err(Error::SymbolicLimit(format!("more than {} annotated terms", opts.max_terms)));
        }
        w = next;
        out.push(w.clone());
    }
    Ok(out)
}

/// `W^(τ)`; see [`symbolic_trajectory`].
#[allow(clippy::too_many_arguments)]
pub fn symbolic_train(
    ds: &TrainingDataset,
    hp: &Hyperparams,
    schedule: &BatchSchedule,
    coeffs: Option<&LinearCoeffs>,
    table: &InterpolationTable,
    divisor: Divisor<'_>,
    w0: Option<&[f64]>,
    opts: &SymbolicOptions,
) -> Result<AnnotatedMatrix> {
    let mut traj = symbolic_trajectory(ds, hp, schedule, coeffs, table, divisor, w0, opts)?;
    Ok(traj.pop().expect("trajectory always holds W^(0)"))
}

/// Frobenius norm of the term annotated by `m` (zero when absent).
pub fn term_norm(expr: &AnnotatedMatrix, m: &Monomial) -> f64 {
    expr.get(m).map_or(0.0, |a| a.norm())
}
