use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::error::{Error, Result};

pub type Token = u32;

/// A product of tokens with positive exponents, sorted by token id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Monomial(Vec<(Token, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn token(t: Token) -> Self {
        Monomial(vec![(t, 1)])
    }

    pub fn power(t: Token, exp: u32) -> Self {
        if exp == 0 {
            Monomial::one()
        } else {
            Monomial(vec![(t, exp)])
        }
    }

    /// Builds a monomial from `(token, exponent)` factors in any order.
    pub fn from_factors(factors: impl IntoIterator<Item = (Token, u32)>) -> Self {
        let mut map = BTreeMap::new();
        for (t, e) in factors {
            *map.entry(t).or_insert(0) += e;
        }
        Monomial(map.into_iter().filter(|&(_, e)| e > 0).collect())
    }

    pub fn factors(&self) -> &[(Token, u32)] {
        &self.0
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&(_, e)| e).sum()
    }

    pub fn mul(&self, other: &Monomial, idempotent: bool) -> Monomial {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            if j == b.len() || (i < a.len() && a[i].0 < b[j].0) {
                out.push(a[i]);
                i += 1;
            } else if i == a.len() || b[j].0 < a[i].0 {
                out.push(b[j]);
                j += 1;
            } else {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
        if idempotent {
            out.iter_mut().for_each(|f| f.1 = 1);
        }
        Monomial(out)
    }

    /// Value under a 0/1 assignment: `true` iff every token is kept.
    pub fn survives(&self, assignment: &HashMap<Token, bool>) -> Result<bool> {
        let mut alive = true;
        for &(t, _) in &self.0 {
            match assignment.get(&t) {
                Some(&keep) => alive &= keep,
                None => return Err(Error::UnassignedToken(t)),
            }
        }
        Ok(alive)
    }

    fn collapsed(&self) -> Monomial {
        Monomial(self.0.iter().map(|&(t, _)| (t, 1)).collect())
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        for (k, &(t, e)) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, "*")?;
            }
            write!(f, "p{t}")?;
            if e > 1 {
                write!(f, "^{e}")?;
            }
        }
        Ok(())
    }
}

/// Polynomial over provenance tokens with natural coefficients. In
/// idempotent mode every exponent is 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvPolynomial {
    terms: BTreeMap<Monomial, u64>,
    idempotent: bool,
}

impl ProvPolynomial {
    pub fn zero(idempotent: bool) -> Self {
        ProvPolynomial {
            terms: BTreeMap::new(),
            idempotent,
        }
    }

    pub fn one(idempotent: bool) -> Self {
        Self::monomial(Monomial::one(), 1, idempotent)
    }

    pub fn token(t: Token, idempotent: bool) -> Self {
        Self::monomial(Monomial::token(t), 1, idempotent)
    }

    pub fn monomial(m: Monomial, coeff: u64, idempotent: bool) -> Self {
        let mut p = Self::zero(idempotent);
        if coeff > 0 {
            let m = if idempotent { m.collapsed() } else { m };
            p.terms.insert(m, coeff);
        }
        p
    }

    pub fn is_idempotent(&self) -> bool {
        self.idempotent
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, u64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn same_mode(&self, other: &Self) -> Result<()> {
        if self.idempotent != other.idempotent {
            return Err(Error::ModeMismatch);
        }
        Ok(())
    }

    fn insert(&mut self, m: Monomial, c: u64) -> Result<()> {
        let slot = self.terms.entry(m).or_insert(0);
        *slot = slot
            .checked_add(c)
            .ok_or_else(|| Error::numeric("provenance coefficient overflow"))?;
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_mode(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.insert(m.clone(), c)?;
        }
        Ok(out)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_mode(other)?;
        let mut out = Self::zero(self.idempotent);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                let c = ca
                    .checked_mul(cb)
                    .ok_or_else(|| Error::numeric("provenance coefficient overflow"))?;
                out.insert(ma.mul(mb, self.idempotent), c)?;
            }
        }
        Ok(out)
    }

    /// Sum of the coefficients of surviving monomials under a 0/1 assignment.
    pub fn evaluate(&self, assignment: &HashMap<Token, bool>) -> Result<u64> {
        let mut total = 0u64;
        for (m, &c) in &self.terms {
            if m.survives(assignment)? {
                total += c;
            }
        }
        Ok(total)
    }
}

impl fmt::Display for ProvPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (m, &c)) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            match (c, m.is_one()) {
                (1, _) => write!(f, "{m}")?,
                (_, true) => write!(f, "{c}")?,
                _ => write!(f, "{c}*{m}")?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(t: Token) -> ProvPolynomial {
        ProvPolynomial::token(t, false)
    }

    #[test]
    fn addition_examples() {
        let zero = ProvPolynomial::zero(false);
        assert_eq!(p(1).add(&zero).unwrap(), p(1));
        assert_eq!(p(1).add(&p(1)).unwrap().to_string(), "2*p1");
        // p^2 q + q r^4
        let (pp, q, r) = (p(1), p(2), p(3));
        let a = pp.mul(&pp).unwrap().mul(&q).unwrap();
        let r4 = r.mul(&r).unwrap().mul(&r.mul(&r).unwrap()).unwrap();
        let b = q.mul(&r4).unwrap();
        let sum = a.add(&b).unwrap();
        assert_eq!(sum.len(), 2);
        assert_eq!(sum.to_string(), "p1^2*p2 + p2*p3^4");
    }

    #[test]
    fn multiplication_examples() {
        assert_eq!(p(1).mul(&p(1)).unwrap().to_string(), "p1^2");
        let pi = ProvPolynomial::token(1, true);
        assert_eq!(pi.mul(&pi).unwrap(), pi);
        assert_eq!(p(1).mul(&ProvPolynomial::one(false)).unwrap(), p(1));
        assert!(p(1).mul(&ProvPolynomial::zero(false)).unwrap().is_zero());
        assert!(matches!(p(1).add(&pi), Err(Error::ModeMismatch)));
        assert!(matches!(p(1).mul(&pi), Err(Error::ModeMismatch)));
    }

    #[test]
    fn evaluation_zeroes_monomials() {
        let poly = p(1).mul(&p(2)).unwrap().add(&p(3)).unwrap();
        let mut a = HashMap::from([(1, true), (2, false), (3, true)]);
        assert_eq!(poly.evaluate(&a).unwrap(), 1);
        a.insert(2, true);
        assert_eq!(poly.evaluate(&a).unwrap(), 2);
        a.remove(&3);
        assert!(matches!(poly.evaluate(&a), Err(Error::UnassignedToken(3))));
        assert_eq!(ProvPolynomial::one(true).to_string(), "1");
        assert_eq!(ProvPolynomial::zero(true).to_string(), "0");
    }

    /// Random polynomial over at most 4 tokens with exponents up to 3.
    pub(crate) fn arb_poly(idempotent: bool) -> impl Strategy<Value = ProvPolynomial> {
        let mono = prop::collection::vec((0u32..4, 1u32..=3), 0..4).prop_map(Monomial::from_factors);
        prop::collection::vec((mono, 0u64..4), 0..4).prop_map(move |terms| {
            terms.into_iter().fold(ProvPolynomial::zero(idempotent), |acc, (m, c)| {
                acc.add(&ProvPolynomial::monomial(m, c, idempotent)).unwrap()
            })
        })
    }

    fn laws(a: ProvPolynomial, b: ProvPolynomial, c: ProvPolynomial) -> std::result::Result<(), TestCaseError> {
        let idem = a.is_idempotent();
        let (zero, one) = (ProvPolynomial::zero(idem), ProvPolynomial::one(idem));
        prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
        prop_assert_eq!(a.mul(&b).unwrap(), b.mul(&a).unwrap());
        prop_assert_eq!(a.add(&b).unwrap().add(&c).unwrap(), a.add(&b.add(&c).unwrap()).unwrap());
        prop_assert_eq!(a.mul(&b).unwrap().mul(&c).unwrap(), a.mul(&b.mul(&c).unwrap()).unwrap());
        prop_assert_eq!(
            a.mul(&b.add(&c).unwrap()).unwrap(),
            a.mul(&b).unwrap().add(&a.mul(&c).unwrap()).unwrap()
        );
        prop_assert!(a.mul(&zero).unwrap().is_zero());
        prop_assert_eq!(&a.mul(&one).unwrap(), &a);
        prop_assert_eq!(&a.add(&zero).unwrap(), &a);
        for m in a.terms().map(|(m, _)| m) {
            prop_assert!(!idem || m.factors().iter().all(|&(_, e)| e == 1));
        }
        Ok(())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn semiring_laws_plain(a in arb_poly(false), b in arb_poly(false), c in arb_poly(false)) {
            laws(a, b, c)?;
        }

        #[test]
        fn semiring_laws_idempotent(a in arb_poly(true), b in arb_poly(true), c in arb_poly(true)) {
            laws(a, b, c)?;
        }
    }
}
