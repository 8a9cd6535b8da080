//! Shapes, file formats and discrete differential operators.

mod cloud;
mod hull;
pub mod io;
pub mod laplacian;
pub mod primitives;
pub mod sparse;
mod surface;

use nalgebra::DMatrix;

pub use hull::convex_hull;
pub use io::{load_surface, save_surface, MeshFormat};
pub use cloud::{pointcloud_laplacian, Bandwidth, CloudGraph, DEFAULT_NEIGHBORS};
pub use laplacian::{cotangent_laplacian, mean_curvature, mean_curvature_with, mixed_voronoi_areas, LaplacianPair};
pub use sparse::CsrMatrix;
pub use surface::{Surface, SurfaceKind, Vec3};

use crate::error::{Error, Result};

/// Displace every vertex by the band-limited field `Φ α`.
///
/// `basis` is n×b (one eigenfunction per column) and `coefficients` is b×3.
pub fn apply_displacement(surface: &Surface, basis: &DMatrix<f64>, coefficients: &DMatrix<f64>) -> Result<Surface> {
    let field = displacement_field(surface.n_vertices(), basis, coefficients)?;
    let moved = surface
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, v)| v + Vec3::new(field[(i, 0)], field[(i, 1)], field[(i, 2)]))
        .collect();
    surface.with_vertices(moved)
}

pub(crate) fn displacement_field(n: usize, basis: &DMatrix<f64>, coefficients: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if basis.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} rows for {n} vertices",
            basis.nrows()
        )));
    }
    if coefficients.nrows() != basis.ncols() || coefficients.ncols() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "coefficients are {}x{}, expected {}x3",
            coefficients.nrows(),
            coefficients.ncols(),
            basis.ncols()
        )));
    }
    Ok(basis * coefficients)
}

/// Vertex coordinates as an n×3 matrix.
pub fn vertex_matrix(surface: &Surface) -> DMatrix<f64> {
    DMatrix::from_fn(surface.n_vertices(), 3, |i, c| surface.vertices()[i][c])
}
