//! Closed-form derivatives of simple generalized eigenvalues with respect to
//! vertex positions: `dλ = φᵀ (dW − λ dM) φ` for M-normalized `φ`, with `dW`
//! and `dM` assembled from per-triangle derivatives of the cotangent weights
//! and lumped areas.

use super::decomposition::{SpectralDecomposition, DEFAULT_DEGENERACY_TOLERANCE};
use crate::error::{Error, Result};
use crate::geometry::{Surface, Vec3};

/// Derivatives of one triangle's corner cotangents and area with respect to
/// its three vertices.
struct TriangleJet {
    vertices: [usize; 3],
    /// `cot[k][s]` = ∂ cot(angle at corner k) / ∂ p_s.
    cot: [[Vec3; 3]; 3],
    /// ∂ area / ∂ p_s.
    area: [Vec3; 3],
}

impl TriangleJet {
    fn new(mesh: &Surface, face: [usize; 3]) -> Self {
        let v = mesh.vertices();
        let p = [v[face[0]], v[face[1]], v[face[2]]];
        let mut cot = [[Vec3::zeros(); 3]; 3];
        let mut area = [Vec3::zeros(); 3];
        for k in 0..3 {
            let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
            let u = p[k1] - p[k];
            let w = p[k2] - p[k];
            let cross = u.cross(&w);
            let s = cross.norm();
            let nhat = cross / s;
            let d = u.dot(&w);
            let c = d / s;
            let ds1 = w.cross(&nhat);
            let ds2 = nhat.cross(&u);
            let dd1 = w;
            let dd2 = u;
            cot[k][k1] = (dd1 - c * ds1) / s;
            cot[k][k2] = (dd2 - c * ds2) / s;
            cot[k][k] = -(cot[k][k1] + cot[k][k2]);
            if k == 0 {
                area[k1] = 0.5 * ds1;
                area[k2] = 0.5 * ds2;
                area[k] = -(area[k1] + area[k2]);
            }
        }
        Self {
            vertices: face,
            cot,
            area,
        }
    }

    fn accumulate(&self, phi: &[f64], lambda: f64, grad: &mut [Vec3]) {
        let f = [phi[self.vertices[0]], phi[self.vertices[1]], phi[self.vertices[2]]];
        let mass_weight = lambda * (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]) / 3.0;
        let edge = [
            0.5 * (f[1] - f[2]).powi(2),
            0.5 * (f[2] - f[0]).powi(2),
            0.5 * (f[0] - f[1]).powi(2),
        ];
        for s in 0..3 {
            let g = edge[0] * self.cot[0][s] + edge[1] * self.cot[1][s] + edge[2] * self.cot[2][s]
                - mass_weight * self.area[s];
            grad[self.vertices[s]] += g;
        }
    }
}

/// ∂λ_j/∂x_v for every vertex, for each requested mode.
///
/// No degeneracy check is made here; modes with repeated eigenvalues yield
/// meaningless values and must be filtered by the caller.
pub fn eigenvalue_gradients(mesh: &Surface, decomp: &SpectralDecomposition, modes: &[usize]) -> Result<Vec<Vec<Vec3>>> {
    check_pairing(mesh, decomp)?;
    if let Some(&j) = modes.iter().find(|&&j| j > decomp.q()) {
        return Err(Error::InvalidInput(format!("mode {j} not retained (q = {})", decomp.q())));
    }
    let jets: Vec<TriangleJet> = mesh.faces().iter().map(|&f| TriangleJet::new(mesh, f)).collect();
    let phis = decomp.eigenfunctions();
    Ok(modes
        .iter()
        .map(|&j| {
            let mut grad = vec![Vec3::zeros(); mesh.n_vertices()];
            let phi = phis.column(j);
            let phi = phi.as_slice();
            let lambda = decomp.eigenvalues()[j];
            for jet in &jets {
                jet.accumulate(phi, lambda, &mut grad);
            }
            grad
        })
        .collect())
}

/// Gradient of a single simple eigenvalue, rejecting repeated ones.
pub fn eigenvalue_gradient(mesh: &Surface, decomp: &SpectralDecomposition, j: usize) -> Result<Vec<Vec3>> {
    eigenvalue_gradient_with_tolerance(mesh, decomp, j, DEFAULT_DEGENERACY_TOLERANCE)
}

pub fn eigenvalue_gradient_with_tolerance(
    mesh: &Surface,
    decomp: &SpectralDecomposition,
    j: usize,
    tolerance: f64,
) -> Result<Vec<Vec3>> {
    let ev = decomp.eigenvalues();
    if j >= ev.len() {
        return Err(Error::InvalidInput(format!("mode {j} not retained (q = {})", decomp.q())));
    }
    if decomp.degeneracy_flags(tolerance)[j] {
        let left = if j > 0 { ev[j] - ev[j - 1] } else { f64::INFINITY };
        let right = if j + 1 < ev.len() { ev[j + 1] - ev[j] } else { f64::INFINITY };
        return Err(Error::DegenerateEigenvalue {
            index: j,
            gap: left.min(right) / ev[j],
        });
    }
    Ok(eigenvalue_gradients(mesh, decomp, &[j])?.pop().expect("one mode requested"))
}

fn check_pairing(mesh: &Surface, decomp: &SpectralDecomposition) -> Result<()> {
    if !mesh.is_mesh() {
        return Err(Error::InvalidInput(
            "eigenvalue gradients need a triangle mesh".into(),
        ));
    }
    if mesh.n_vertices() != decomp.eigenfunctions().nrows() {
        return Err(Error::DimensionMismatch(format!(
            "mesh has {} vertices, decomposition {}",
            mesh.n_vertices(),
            decomp.eigenfunctions().nrows()
        )));
    }
    Ok(())
}
