use std::sync::Arc;

use super::decomposition::{eigendecompose_with, SpectralDecomposition};
use super::eigensolver::EigenOptions;
use super::gradient::eigenvalue_gradients;
use crate::error::{Error, Result};
use crate::geometry::{cotangent_laplacian, Bandwidth, CloudGraph, LaplacianPair, Surface, Vec3};

/// How a surface's Laplacian is built as its vertices move: cotangent
/// weights for meshes, a frozen kNN graph for point clouds.
#[derive(Debug, Clone)]
pub enum SpectralOperator {
    Cotangent,
    Cloud(CloudGraph),
}

impl SpectralOperator {
    /// Operator matching the surface kind; clouds get a graph built at the
    /// current positions.
    pub fn for_surface(surface: &Surface, neighbors: usize) -> Result<Self> {
        if surface.is_mesh() {
            Ok(Self::Cotangent)
        } else {
            Ok(Self::Cloud(CloudGraph::build(surface, neighbors, Bandwidth::Auto)?))
        }
    }

    pub fn laplacian(&self, surface: &Surface) -> Result<LaplacianPair> {
        match self {
            Self::Cotangent => cotangent_laplacian(surface),
            Self::Cloud(graph) => graph.laplacian(surface.vertices(), surface.id()),
        }
    }

    pub fn decompose(&self, surface: &Surface, q: usize, opts: &EigenOptions) -> Result<SpectralDecomposition> {
        eigendecompose_with(Arc::new(self.laplacian(surface)?), q, opts)
    }

    /// `∂λ_j/∂x` per vertex for each requested mode. No degeneracy check.
    pub fn eigenvalue_gradients(
        &self,
        surface: &Surface,
        decomp: &SpectralDecomposition,
        modes: &[usize],
    ) -> Result<Vec<Vec<Vec3>>> {
        match self {
            Self::Cotangent => eigenvalue_gradients(surface, decomp, modes),
            Self::Cloud(graph) => {
                if let Some(&j) = modes.iter().find(|&&j| j > decomp.q()) {
                    return Err(Error::InvalidInput(format!("mode {j} not retained (q = {})", decomp.q())));
                }
                modes
                    .iter()
                    .map(|&j| {
                        graph.eigenvalue_gradient(
                            surface.vertices(),
                            decomp.eigenvalues()[j],
                            decomp.eigenfunctions().column(j).as_slice(),
                        )
                    })
                    .collect()
            }
        }
    }
}
