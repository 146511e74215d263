//! Escape rates, conditionally invariant measures and Hofbauer extensions
//! for piecewise-monotone interval maps with holes.

pub mod error;
pub mod experiments;
pub mod hofbauer;
pub mod linalg;
pub mod maps;
pub mod openmap;
pub mod potentials;
pub mod quadrature;
pub mod scalar;
pub mod stats;
pub mod ulam;

pub use error::{Error, Result};

pub type Real = f64;
pub type Matrix = linalg::CsrMatrix<Real>;
pub type ExactReal = num_rational::Ratio<i128>;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
