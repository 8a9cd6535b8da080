//! Discrete Laplace-Beltrami operators as (stiffness, mass) pairs.
//!
//! Sign convention: the stiffness `W` is positive semi-definite, so the
//! generalized problem `W φ = λ M φ` has nonnegative eigenvalues.


use super::sparse::CsrMatrix;
use super::surface::{Surface, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LaplacianPair {
    pub stiffness: CsrMatrix,
    /// Lumped (diagonal) mass, one entry per vertex.
    pub mass: Vec<f64>,
    pub source_id: String,
}

impl LaplacianPair {
    pub fn n(&self) -> usize {
        self.mass.len()
    }

    /// `vᵀ W v`.
    pub fn energy(&self, v: &[f64]) -> f64 {
        let wv = self.stiffness.mul_vec(v);
        wv.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    pub fn mass_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.mass.iter().zip(a).zip(b).map(|((m, x), y)| m * x * y).sum()
    }
}

/// Cotangents of the three corner angles of a triangle.
pub(crate) fn corner_cotangents(p: [Vec3; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for k in 0..3 {
        let a = p[k];
        let u = p[(k + 1) % 3] - a;
        let v = p[(k + 2) % 3] - a;
        out[k] = u.dot(&v) / u.cross(&v).norm();
    }
    out
}

/// Cotangent stiffness with lumped one-third-area mass.
pub fn cotangent_laplacian(mesh: &Surface) -> Result<LaplacianPair> {
    if !mesh.is_mesh() {
        return Err(Error::InvalidInput(format!(
            "cotangent Laplacian needs a triangle mesh; '{}' is a point cloud",
            mesh.id()
        )));
    }
    let n = mesh.n_vertices();
    let v = mesh.vertices();
    let areas: Vec<f64> = (0..mesh.n_faces()).map(|f| mesh.face_area(f)).collect();
    let mean_area = areas.iter().sum::<f64>() / areas.len() as f64;
    if let Some((face, &area)) = areas
        .iter()
        .enumerate()
        .find(|(_, &a)| !(a >= 1e-12 * mean_area) || a == 0.0)
    {
        return Err(Error::ZeroAreaFace { face, area });
    }

    let mut triplets = Vec::with_capacity(12 * mesh.n_faces());
    let mut mass = vec![0.0; n];
    for (f, tri) in mesh.faces().iter().enumerate() {
        let p = [v[tri[0]], v[tri[1]], v[tri[2]]];
        let cot = corner_cotangents(p);
        for k in 0..3 {
            let (i, j) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
            let w = 0.5 * cot[k];
            triplets.push((i, j, -w));
            triplets.push((j, i, -w));
            triplets.push((i, i, w));
            triplets.push((j, j, w));
            mass[tri[k]] += areas[f] / 3.0;
        }
    }
    if let Some(i) = mass.iter().position(|&m| m <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "vertex {i} of '{}' is not referenced by any face",
            mesh.id()
        )));
    }
    Ok(LaplacianPair {
        stiffness: CsrMatrix::from_triplets(n, n, triplets),
        mass,
        source_id: mesh.id().to_string(),
    })
}

/// Unsigned mean curvature `‖(A⁻¹ W x)_i‖ / 2`, with `A` the mixed Voronoi
/// vertex areas (one-third lumping biases the curvature normal by ~15% at
/// irregular vertices even on finely refined spheres).
pub fn mean_curvature(mesh: &Surface) -> Result<Vec<f64>> {
    let lap = cotangent_laplacian(mesh)?;
    Ok(mean_curvature_with(mesh, &lap))
}

/// Same as [`mean_curvature`], reusing an already assembled stiffness.
pub fn mean_curvature_with(mesh: &Surface, lap: &LaplacianPair) -> Vec<f64> {
    let n = mesh.n_vertices();
    let area = mixed_voronoi_areas(mesh);
    let mut hn = vec![Vec3::zeros(); n];
    for c in 0..3 {
        let x: Vec<f64> = mesh.vertices().iter().map(|v| v[c]).collect();
        let wx = lap.stiffness.mul_vec(&x);
        for i in 0..n {
            hn[i][c] = wx[i] / area[i];
        }
    }
    hn.iter().map(|h| 0.5 * h.norm()).collect()
}

/// Voronoi areas for non-obtuse triangles; obtuse ones give half their area
/// to the obtuse corner and a quarter to each other corner.
pub fn mixed_voronoi_areas(mesh: &Surface) -> Vec<f64> {
    let v = mesh.vertices();
    let mut area = vec![0.0; mesh.n_vertices()];
    for f in mesh.faces() {
        let p = [v[f[0]], v[f[1]], v[f[2]]];
        let cot = corner_cotangents(p);
        if let Some(obtuse) = (0..3).find(|&k| cot[k] < 0.0) {
            let a = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
            for k in 0..3 {
                area[f[k]] += if k == obtuse { a / 2.0 } else { a / 4.0 };
            }
            continue;
        }
        for k in 0..3 {
            let (a, b) = ((k + 1) % 3, (k + 2) % 3);
            let share = cot[k] * (p[a] - p[b]).norm_squared() / 8.0;
            area[f[a]] += share;
            area[f[b]] += share;
        }
    }
    area
}
