//! Provenance polynomials, annotated matrices and annotated training.

pub mod annotated;
pub mod polynomial;
pub mod symbolic;

pub use annotated::{zeroing, AnnotatedMatrix};
pub use polynomial::{Monomial, ProvPolynomial, Token};
pub use symbolic::{symbolic_train, symbolic_trajectory, term_norm, Divisor, SymbolicOptions};
