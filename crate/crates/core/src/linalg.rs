//! Small dense kernels used on the hot paths.
//!
//! Vectors are plain slices. Symmetric matrices that are cached per
//! iteration are kept in packed upper-triangular form ([`PackedSym`]); the
//! occasional eigen/SVD work goes through `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Symmetric `dim x dim` matrix stored as its upper triangle, row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedSym {
    dim: usize,
    data: Vec<f64>,
}

impl PackedSym {
    pub fn zeros(dim: usize) -> Self {
        PackedSym {
            dim,
            data: vec![0.0; packed_len(dim)],
        }
    }

    pub fn from_packed(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != packed_len(dim) {
            return Err(Error::shape(format!(
                "packed symmetric storage of dim {dim} needs {} values, got {}",
                packed_len(dim),
                data.len()
            )));
        }
        Ok(PackedSym { dim, data })
    }

    /// Packs the upper triangle of `m`, averaging it with the lower one.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let mut out = PackedSym::zeros(dim);
        for r in 0..dim {
            for c in r..dim {
                let k = out.index(r, c);
                out.data[k] = 0.5 * (m[(r, c)] + m[(c, r)]);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn index(&self, r: usize, c: usize) -> usize {
        debug_assert!(r <= c);
        r * self.dim - r * (r + 1) / 2 + c
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        self.data[self.index(r, c)]
    }

    /// `self += alpha * x x^T`
    pub fn add_outer(&mut self, alpha: f64, x: &[f64]) {
        let dim = self.dim;
        let mut k = 0;
        for r in 0..dim {
            let s = alpha * x[r];
            for c in r..dim {
                self.data[k] += s * x[c];
                k += 1;
            }
        }
    }

    /// `self += alpha * (J ⊗ x x^T)` for a symmetric `q x q` block matrix `J`
    /// stored row-major and a feature vector `x` of length `dim / q`.
    pub fn add_kron_outer(&mut self, alpha: f64, j: &[f64], q: usize, x: &[f64]) {
        let m = x.len();
        debug_assert_eq!(m * q, self.dim);
        for k in 0..q {
            for a in 0..m {
                let row = k * m + a;
                let base = self.index(row, row);
                for l in k..q {
                    let jkl = alpha * j[k * q + l] * x[a];
                    let start_b = if l == k { a } else { 0 };
                    for b in start_b..m {
                        let col = l * m + b;
                        self.data[base + col - row] += jkl * x[b];
                    }
                }
            }
        }
    }

    /// `out = self * x`
    pub fn symv(&self, x: &[f64], out: &mut [f64]) {
        let dim = self.dim;
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut k = 0;
        for r in 0..dim {
            let xr = x[r];
            let mut acc = self.data[k] * xr;
            k += 1;
            for c in (r + 1)..dim {
                let v = self.data[k];
                acc += v * x[c];
                out[c] += v * xr;
                k += 1;
            }
            out[r] += acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |r, c| self.get(r, c))
    }
}

pub fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Symmetric eigendecomposition with eigenpairs sorted by decreasing
/// eigenvalue magnitude (i.e. by singular value).
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector for `values[k]`.
    pub vectors: DMatrix<f64>,
}

pub fn symmetric_eigen_by_magnitude(m: &DMatrix<f64>) -> Result<SortedEigen> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("eigendecomposition of a non-finite matrix"));
    }
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::numeric("symmetric eigensolver did not converge"))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .total_cmp(&eig.eigenvalues[a].abs())
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SortedEigen { values, vectors })
}

/// Largest eigenvalue of a symmetric positive semi-definite operator given
/// only by its action, via power iteration on the Rayleigh quotient.
///
/// Stops when the relative change of the quotient drops below `tol`.
pub fn power_iteration<F>(dim: usize, tol: f64, max_steps: usize, mut apply: F) -> Result<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if dim == 0 {
        return Ok(0.0);
    }
    // deterministic, non-degenerate start vector
    let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + (i as f64 * 0.618_033_988_7).fract()).collect();
    let n0 = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut av = vec![0.0; dim];
    let mut prev = f64::NAN;
    for _ in 0..max_steps {
        apply(&v, &mut av);
        let rq = dot(&v, &av);
        let nav = norm2(&av);
        if nav == 0.0 {
            return Ok(0.0);
        }
        if !nav.is_finite() {
            return Err(Error::numeric("power iteration produced a non-finite vector"));
        }
        if prev.is_finite() && (rq - prev).abs() <= tol * rq.abs().max(f64::MIN_POSITIVE) {
            return Ok(rq);
        }
        prev = rq;
        for (vi, ai) in v.iter_mut().zip(&av) {
            *vi = ai / nav;
        }
    }
    Err(Error::numeric(format!(
        "power iteration did not converge in {max_steps} steps"
    )))
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
