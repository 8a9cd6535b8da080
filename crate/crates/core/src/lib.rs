//! Universal adversarial perturbations for deformable shapes, computed in
//! the Laplace-Beltrami spectral domain.
//!
//! A single multiplicative perturbation of the first `k` eigenvalues is
//! shared by a set of shapes; each shape realizes it through a smooth
//! displacement spanned by its first `b` eigenfunctions, while a penalty
//! pushes a fixed point-cloud classifier into misclassification. The same
//! perturbation can be transferred to unseen shapes by shape-from-spectrum
//! synthesis.

pub mod attack;
pub mod classifier;
pub mod corpus;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod optim;
pub mod seed;
pub mod spectral;
pub mod synthesis;

pub use error::{Error, Result};
