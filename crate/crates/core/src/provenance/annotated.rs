use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;

use super::polynomial::{Monomial, ProvPolynomial, Token};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_TERMS: usize = 1_000_000;

/// Formal sum of annotated matrices `Σ m_k * A_k`.
///
/// Terms are kept in normal form: one entry per monomial, with polynomial
/// coefficients folded into the matrix. A term `(2 p + q) * A` is stored as
/// `p * 2A + q * A`. Zero matrices are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedMatrix {
    rows: usize,
    cols: usize,
    idempotent: bool,
    terms: BTreeMap<Monomial, DMatrix<f64>>,
}

impl AnnotatedMatrix {
    pub fn zero(rows: usize, cols: usize, idempotent: bool) -> Self {
        AnnotatedMatrix {
            rows,
            cols,
            idempotent,
            terms: BTreeMap::new(),
        }
    }

    /// `poly * matrix`.
    pub fn term(poly: &ProvPolynomial, matrix: DMatrix<f64>) -> Self {
        let mut out = Self::zero(matrix.nrows(), matrix.ncols(), poly.is_idempotent());
        for (m, c) in poly.terms() {
            out.push(m.clone(), &matrix * c as f64);
        }
        out
    }

    /// `1_prov * matrix`.
    pub fn constant(matrix: DMatrix<f64>, idempotent: bool) -> Self {
        Self::term(&ProvPolynomial::one(idempotent), matrix)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_idempotent(&self) -> bool {
        self.idempotent
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &DMatrix<f64>)> {
        self.terms.iter()
    }

    pub fn get(&self, m: &Monomial) -> Option<&DMatrix<f64>> {
        self.terms.get(m)
    }

    fn push(&mut self, m: Monomial, a: DMatrix<f64>) {
        match self.terms.get_mut(&m) {
            Some(acc) => {
                *acc += a;
                if acc.iter().all(|&v| v == 0.0) {
                    self.terms.remove(&m);
                }
            }
            None => {
                if a.iter().any(|&v| v != 0.0) {
                    self.terms.insert(m, a);
                }
            }
        }
    }

    fn check_mode(&self, other: &Self) -> Result<()> {
        if self.idempotent != other.idempotent {
            return Err(Error::ModeMismatch);
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_mode(other)?;
        if self.shape() != other.shape() {
            return Err(Error::shape(format!("adding {:?} and {:?}", self.shape(), other.shape())));
        }
        let mut out = self.clone();
        for (m, a) in &other.terms {
            out.push(m.clone(), a.clone());
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero(self.rows, self.cols, self.idempotent);
        for (m, a) in &self.terms {
            out.push(m.clone(), a * s);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.mul_capped(other, DEFAULT_MAX_TERMS)
    }

    /// Bilinear product `(m1 * A1)(m2 * A2) = (m1 m2) * (A1 A2)` with merging.
    /// Refuses when the result would exceed `max_terms`.
    pub fn mul_capped(&self, other: &Self, max_terms: usize) -> Result<Self> {
        self.check_mode(other)?;
        if self.cols != other.rows {
            return Err(Error::shape(format!("multiplying {:?} by {:?}", self.shape(), other.shape())));
        }
        let mut out = Self::zero(self.rows, other.cols, self.idempotent);
        for (ma, a) in &self.terms {
            for (mb, b) in &other.terms {
                out.push(ma.mul(mb, self.idempotent), a * b);
                if out.len() > max_terms {
                    return Err(Error::SymbolicLimit(format!("more than {max_terms} annotated terms")));
                }
            }
        }
        Ok(out)
    }

    /// Zero-out semantics: drop every term whose monomial contains a token
    /// assigned `false`, sum the rest.
    pub fn specialize(&self, assignment: &HashMap<Token, bool>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for (m, a) in &self.terms {
            if m.survives(assignment)? {
                out += a;
            }
        }
        Ok(out)
    }

    /// Tokens appearing in any term.
    pub fn tokens(&self) -> Vec<Token> {
        let mut t: Vec<Token> = self
            .terms
            .keys()
            .flat_map(|m| m.factors().iter().map(|&(t, _)| t))
            .collect();
        t.sort_unstable();
        t.dedup();
        t
    }
}

/// Assignment keeping every token of `tokens` except those in `zeroed`.
pub fn zeroing(tokens: &[Token], zeroed: &[Token]) -> HashMap<Token, bool> {
    tokens.iter().map(|&t| (t, !zeroed.contains(&t))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provenance::polynomial::Monomial;
    use proptest::prelude::*;

    fn tok(t: Token) -> ProvPolynomial {
        ProvPolynomial::token(t, false)
    }

    fn m2(v: [f64; 4]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &v)
    }

    #[test]
    fn product_law_examples() {
        let a = m2([1.0, 2.0, 3.0, 4.0]);
        let b = m2([0.0, 1.0, -1.0, 2.0]);
        let lhs = AnnotatedMatrix::term(&tok(1), a.clone())
            .mul(&AnnotatedMatrix::term(&tok(2), b.clone()))
            .unwrap();
        let rhs = AnnotatedMatrix::term(&tok(1).mul(&tok(2)).unwrap(), &a * &b);
        assert_eq!(lhs, rhs);

        let id = AnnotatedMatrix::constant(DMatrix::identity(2, 2), false);
        let pa = AnnotatedMatrix::term(&tok(1), a);
        assert_eq!(id.mul(&pa).unwrap(), pa);

        let x = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let outer = AnnotatedMatrix::term(&tok(1), x.clone())
            .mul(&AnnotatedMatrix::term(&tok(1), x.transpose()))
            .unwrap();
        assert_eq!(outer.len(), 1);
        assert_eq!(outer.get(&Monomial::power(1, 2)).unwrap(), &m2([1.0, 2.0, 2.0, 4.0]));
    }

    #[test]
    fn specialize_examples() {
        // p^2 q * u + q r^4 * v + p s * z with r zeroed gives u + z
        let (p, q, r, s) = (1, 2, 3, 4);
        let col = |v: [f64; 2]| DMatrix::from_column_slice(2, 1, &v);
        let (u, v, z) = (col([1.0, 0.0]), col([0.0, 5.0]), col([2.0, 3.0]));
        let e = AnnotatedMatrix::term(&ProvPolynomial::monomial(Monomial::from_factors([(p, 2), (q, 1)]), 1, false), u.clone())
            .add(&AnnotatedMatrix::term(
                &ProvPolynomial::monomial(Monomial::from_factors([(q, 1), (r, 4)]), 1, false),
                v.clone(),
            ))
            .unwrap()
            .add(&AnnotatedMatrix::term(
                &ProvPolynomial::monomial(Monomial::from_factors([(p, 1), (s, 1)]), 1, false),
                z.clone(),
            ))
            .unwrap();
        let toks = [p, q, r, s];
        assert_eq!(e.specialize(&zeroing(&toks, &[r])).unwrap(), &u + &z);
        assert_eq!(e.specialize(&zeroing(&toks, &[])).unwrap(), &u + &v + &z);

        let k = AnnotatedMatrix::constant(col([7.0, 7.0]), false);
        let with_const = e.add(&k).unwrap();
        assert_eq!(with_const.specialize(&zeroing(&toks, &toks)).unwrap(), col([7.0, 7.0]));
        assert!(matches!(
            e.specialize(&zeroing(&[p, q, r], &[])),
            Err(Error::UnassignedToken(4))
        ));
    }

    #[test]
    fn errors_and_merging() {
        let a = AnnotatedMatrix::term(&tok(1), m2([1.0, 0.0, 0.0, 1.0]));
        let b = AnnotatedMatrix::term(&tok(1), DMatrix::zeros(3, 3) + DMatrix::identity(3, 3));
        assert!(matches!(a.mul(&b), Err(Error::Shape(_))));
        assert!(matches!(a.add(&b), Err(Error::Shape(_))));
        assert!(a.add(&a.scale(-1.0)).unwrap().is_empty());
        assert!(AnnotatedMatrix::term(&ProvPolynomial::zero(false), m2([1.0; 4])).is_empty());
        let big = AnnotatedMatrix::term(&tok(1).add(&tok(2)).unwrap(), m2([1.0; 4]));
        assert!(matches!(big.mul_capped(&big, 2), Err(Error::SymbolicLimit(_))));
        let idem = AnnotatedMatrix::constant(m2([1.0; 4]), true);
        assert!(matches!(a.mul(&idem), Err(Error::ModeMismatch)));
    }

    fn arb_matrix(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-3i32..=3, r * c).prop_map(move |v| DMatrix::from_iterator(r, c, v.into_iter().map(f64::from)))
    }

    fn arb_annotated(r: usize, c: usize, idem: bool) -> impl Strategy<Value = AnnotatedMatrix> {
        prop::collection::vec(
            (crate::provenance::polynomial::tests::arb_poly(idem), arb_matrix(r, c)),
            0..3,
        )
        .prop_map(move |terms| {
            terms.into_iter().fold(AnnotatedMatrix::zero(r, c, idem), |acc, (p, a)| {
                acc.add(&AnnotatedMatrix::term(&p, a)).unwrap()
            })
        })
    }

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
        (a - b).iter().all(|v| v.abs() <= 1e-9)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn product_law(
            (r, k, c) in (1usize..=3, 1usize..=3, 1usize..=3),
            idem in any::<bool>(),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a1 = DMatrix::from_fn(r, k, |_, _| rng.random_range(-1.0..1.0));
            let a2 = DMatrix::from_fn(k, c, |_, _| rng.random_range(-1.0..1.0));
            let p1 = ProvPolynomial::monomial(Monomial::from_factors([(rng.random_range(0..4), rng.random_range(1..=3))]), 1, idem);
            let p2 = ProvPolynomial::monomial(Monomial::from_factors([(rng.random_range(0..4), rng.random_range(1..=3))]), 1, idem);
            let lhs = AnnotatedMatrix::term(&p1, a1.clone()).mul(&AnnotatedMatrix::term(&p2, a2.clone())).unwrap();
            let rhs = AnnotatedMatrix::term(&p1.mul(&p2).unwrap(), &a1 * &a2);
            prop_assert_eq!(lhs.len(), rhs.len());
            for (m, a) in rhs.terms() {
                prop_assert!(close(lhs.get(m).unwrap(), a));
            }
        }

        #[test]
        fn specialize_is_a_homomorphism(
            e1 in arb_annotated(2, 3, false),
            e2 in arb_annotated(3, 2, false),
            f1 in arb_annotated(2, 3, true),
            f2 in arb_annotated(3, 2, true),
            mask in 0u8..16,
        ) {
            let toks = [0, 1, 2, 3];
            let zeroed: Vec<Token> = toks.iter().copied().filter(|t| mask & (1 << t) != 0).collect();
            let s = zeroing(&toks, &zeroed);
            let prod = e1.mul(&e2).unwrap().specialize(&s).unwrap();
            prop_assert!(close(&prod, &(e1.specialize(&s).unwrap() * e2.specialize(&s).unwrap())));
            let prod = f1.mul(&f2).unwrap().specialize(&s).unwrap();
            prop_assert!(close(&prod, &(f1.specialize(&s).unwrap() * f2.specialize(&s).unwrap())));
            let sum = e1.add(&e1).unwrap().specialize(&s).unwrap();
            prop_assert!(close(&sum, &(e1.specialize(&s).unwrap() * 2.0)));
        }
    }
}
