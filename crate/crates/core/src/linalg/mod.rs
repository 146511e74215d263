mod eigen;
mod sparse;

pub use eigen::{leading_eigenpair, EigenOptions, Eigenpair};
pub use sparse::{fixed_sum, CsrMatrix};
