use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::eigensolver::{smallest_eigenpairs, EigenOptions, RawEigen};
use crate::error::{Error, Result};
use crate::geometry::LaplacianPair;

/// Default relative gap below which an eigenvalue counts as repeated.
pub const DEFAULT_DEGENERACY_TOLERANCE: f64 = 1e-5;

/// The smallest `q + 1` eigenpairs of a Laplacian pair, zero mode included.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    eigenfunctions: DMatrix<f64>,
    laplacian: Arc<LaplacianPair>,
    disconnected: bool,
}

/// The first `k` nonzero eigenvalues, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSlice {
    pub values: Vec<f64>,
}

impl SpectrumSlice {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!("spectrum entries must be positive, got {v}")));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("spectrum must be nondecreasing".into()));
        }
        Ok(Self { values })
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Smallest `q + 1` generalized eigenpairs of `(W, M)`.
pub fn eigendecompose(laplacian: impl Into<Arc<LaplacianPair>>, q: usize) -> Result<SpectralDecomposition> {
    eigendecompose_with(laplacian, q, &EigenOptions::default())
}

pub fn eigendecompose_with(
    laplacian: impl Into<Arc<LaplacianPair>>,
    q: usize,
    opts: &EigenOptions,
) -> Result<SpectralDecomposition> {
    let laplacian = laplacian.into();
    check_request(&laplacian, q)?;
    let raw = smallest_eigenpairs(&laplacian, q + 1, opts)?;
    Ok(finish(raw, laplacian))
}

fn check_request(laplacian: &LaplacianPair, q: usize) -> Result<()> {
    let n = laplacian.n();
    if q + 1 > n {
        return Err(Error::InvalidInput(format!(
            "cannot retain {} eigenpairs of a {n}-vertex operator",
            q + 1
        )));
    }
    if let Some(i) = laplacian.mass.iter().position(|m| !(*m > 0.0)) {
        return Err(Error::InvalidInput(format!("mass entry {i} is not positive")));
    }
    Ok(())
}

fn finish(raw: RawEigen, laplacian: Arc<LaplacianPair>) -> SpectralDecomposition {
    let mut eigenfunctions = raw.vectors;
    for mut col in eigenfunctions.column_iter_mut() {
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
    let eigenvalues = raw.values;
    let disconnected = eigenvalues.len() > 2 && eigenvalues[1] <= 1e-8 * eigenvalues[2];
    if disconnected {
        log::warn!("surface '{}' appears disconnected", laplacian.source_id);
    }
    SpectralDecomposition {
        eigenvalues,
        eigenfunctions,
        laplacian,
        disconnected,
    }
}

impl SpectralDecomposition {
    /// Reassemble a decomposition from stored eigenpairs.
    pub fn from_parts(eigenvalues: Vec<f64>, eigenfunctions: DMatrix<f64>, laplacian: Arc<LaplacianPair>) -> Result<Self> {
        if eigenvalues.is_empty()
            || eigenfunctions.ncols() != eigenvalues.len()
            || eigenfunctions.nrows() != laplacian.n()
        {
            return Err(Error::DimensionMismatch(format!(
                "{} eigenvalues, {}x{} eigenfunctions, {} vertices",
                eigenvalues.len(),
                eigenfunctions.nrows(),
                eigenfunctions.ncols(),
                laplacian.n()
            )));
        }
        let disconnected = eigenvalues.len() > 2 && eigenvalues[1] <= 1e-8 * eigenvalues[2];
        Ok(Self {
            eigenvalues,
            eigenfunctions,
            laplacian,
            disconnected,
        })
    }

    /// Number of nonzero modes retained.
    pub fn q(&self) -> usize {
        self.eigenvalues.len() - 1
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// n×(q+1), M-orthonormal columns.
    pub fn eigenfunctions(&self) -> &DMatrix<f64> {
        &self.eigenfunctions
    }

    pub fn eigenfunction(&self, j: usize) -> Vec<f64> {
        self.eigenfunctions.column(j).iter().copied().collect()
    }

    /// The first `b` eigenfunctions (constant mode included) as an n×b basis.
    pub fn basis(&self, b: usize) -> Result<DMatrix<f64>> {
        if b > self.eigenvalues.len() {
            return Err(Error::InvalidInput(format!(
                "basis of {b} functions requested, {} retained",
                self.eigenvalues.len()
            )));
        }
        Ok(self.eigenfunctions.columns(0, b).into_owned())
    }

    pub fn laplacian(&self) -> &LaplacianPair {
        &self.laplacian
    }

    pub fn is_disconnected(&self) -> bool {
        self.disconnected
    }

    /// Eigenvalues 1..=k, skipping the zero mode.
    pub fn spectrum(&self, k: usize) -> Result<SpectrumSlice> {
        if k > self.q() {
            return Err(Error::InvalidInput(format!(
                "spectrum of length {k} requested but only {} nonzero modes retained",
                self.q()
            )));
        }
        SpectrumSlice::new(self.eigenvalues[1..=k].to_vec())
    }

    /// `flag[j]` is set when the gap to a neighboring eigenvalue is below
    /// `tolerance * λ_j` (exact ties always count). The last retained mode
    /// only sees its left neighbor.
    pub fn degeneracy_flags(&self, tolerance: f64) -> Vec<bool> {
        degeneracy_flags(&self.eigenvalues, tolerance)
    }
}

pub fn spectrum(decomp: &SpectralDecomposition, k: usize) -> Result<SpectrumSlice> {
    decomp.spectrum(k)
}

pub fn degeneracy_flags(eigenvalues: &[f64], tolerance: f64) -> Vec<bool> {
    let len = eigenvalues.len();
    (0..len)
        .map(|j| {
            let lam = eigenvalues[j];
            let left = if j > 0 { lam - eigenvalues[j - 1] } else { f64::INFINITY };
            let right = if j + 1 < len { eigenvalues[j + 1] - lam } else { f64::INFINITY };
            let gap = left.min(right);
            gap < tolerance * lam || gap == 0.0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cotangent_laplacian, primitives::icosphere};

    #[test]
    fn flags_follow_gaps() {
        let ev = [0.0, 2.0, 2.0 + 1e-9, 6.0, 6.5];
        assert_eq!(degeneracy_flags(&ev, 1e-5), vec![false, true, true, false, false]);
        assert_eq!(degeneracy_flags(&ev, 0.0), vec![false; 5]);
        assert_eq!(degeneracy_flags(&[0.0, 1.0, 1.0], 0.0), vec![false, true, true]);
    }

    #[test]
    fn spectrum_bounds() {
        let d = eigendecompose(cotangent_laplacian(&icosphere(2, 1.0)).unwrap(), 5).unwrap();
        assert!(d.spectrum(0).unwrap().values.is_empty());
        assert!(d.spectrum(6).is_err());
        let s = d.spectrum(1).unwrap();
        assert!((s.values[0] - 2.0).abs() < 0.1);
    }

    #[test]
    fn sign_convention() {
        let d = eigendecompose(cotangent_laplacian(&icosphere(2, 1.0)).unwrap(), 5).unwrap();
        for col in d.eigenfunctions().column_iter() {
            let max = col.iter().fold(0.0f64, |m, v| if v.abs() > m.abs() { *v } else { m });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn slice_validation() {
        assert!(SpectrumSlice::new(vec![1.0, 0.5]).is_err());
        assert!(SpectrumSlice::new(vec![0.0]).is_err());
        assert!(SpectrumSlice::new(vec![1.0, 1.0, 2.0]).is_ok());
    }
}
