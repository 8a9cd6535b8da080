//! Generalized eigenproblems of Laplacian pairs, truncated spectra and
//! eigenvalue derivatives.

mod cache;
mod decomposition;
mod eigensolver;
pub mod envelope;
mod gradient;
mod operator;

pub use cache::{content_hash, load_cached, save_cached};
pub use decomposition::{
    degeneracy_flags, eigendecompose, eigendecompose_with, spectrum, SpectralDecomposition,
    SpectrumSlice, DEFAULT_DEGENERACY_TOLERANCE,
};
pub use eigensolver::{EigenOptions, SolverMethod};
pub use gradient::{eigenvalue_gradient, eigenvalue_gradient_with_tolerance, eigenvalue_gradients};
pub use operator::SpectralOperator;
