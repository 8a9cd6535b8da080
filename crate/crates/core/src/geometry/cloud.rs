//! Heat-kernel Laplacian on point clouds.
//!
//! The neighbor graph and bandwidth are fixed when the graph is built, so the
//! operator is a smooth function of the point positions afterwards. That is
//! what makes eigenvalue gradients on deforming clouds well defined.

use serde::{Deserialize, Serialize};

use super::laplacian::LaplacianPair;
use super::sparse::CsrMatrix;
use super::surface::{Surface, Vec3};
use crate::error::{Error, Result};

/// Default neighborhood size for point-cloud operators.
pub const DEFAULT_NEIGHBORS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// `t = d̄² / 4` with `d̄` the mean distance to the k nearest neighbors.
    Auto,
    Fixed(f64),
}

/// A symmetrized kNN graph with a fixed heat-kernel bandwidth.
#[derive(Debug, Clone)]
pub struct CloudGraph {
    /// Directed kNN lists, used by the density estimate.
    neighbors: Vec<Vec<usize>>,
    /// Undirected edges `(i, j)` with `i < j`.
    edges: Vec<(usize, usize)>,
    t: f64,
}

/// Intermediate quantities of one assembly, kept for differentiation.
struct Assembly {
    area: Vec<f64>,
    density: Vec<f64>,
    moment: Vec<f64>,
    edge_dist: Vec<f64>,
    edge_kernel: Vec<f64>,
    weight: Vec<f64>,
}

impl CloudGraph {
    /// Build the kNN graph of `cloud` and fix the bandwidth.
    pub fn build(cloud: &Surface, neighbors: usize, bandwidth: Bandwidth) -> Result<Self> {
        let n = cloud.n_vertices();
        if neighbors < 3 || n <= neighbors {
            return Err(Error::InvalidInput(format!(
                "need n > neighbors >= 3, got n = {n}, neighbors = {neighbors}"
            )));
        }
        let knn = nearest_neighbors(cloud.vertices(), neighbors)?;
        let t = match bandwidth {
            Bandwidth::Auto => {
                let total: f64 = knn.iter().flat_map(|nb| nb.iter().map(|&(_, d)| d)).sum();
                let mean = total / (n * neighbors) as f64;
                mean * mean / 4.0
            }
            Bandwidth::Fixed(t) if t > 0.0 && t.is_finite() => t,
            Bandwidth::Fixed(t) => return Err(Error::InvalidInput(format!("bandwidth must be positive, got {t}"))),
        };
        let mut edges: Vec<(usize, usize)> = knn
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().map(move |&(j, _)| (i.min(j), i.max(j))))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        Ok(Self {
            neighbors: knn.into_iter().map(|nb| nb.into_iter().map(|(j, _)| j).collect()).collect(),
            edges,
            t,
        })
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn bandwidth(&self) -> f64 {
        self.t
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    fn kernel(&self, d: f64) -> f64 {
        (-d * d / (4.0 * self.t)).exp()
    }

    fn assemble(&self, pts: &[Vec3]) -> Result<Assembly> {
        let n = self.n();
        if pts.len() != n {
            return Err(Error::DimensionMismatch(format!("graph has {n} points, got {}", pts.len())));
        }
        let four_pi_t = 4.0 * std::f64::consts::PI * self.t;
        let mut density = vec![1.0; n];
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &j in nb {
                density[i] += self.kernel((pts[i] - pts[j]).norm());
            }
        }
        // The Gaussian integrates to 4πt over the plane.
        let area: Vec<f64> = density.iter().map(|s| four_pi_t / s).collect();
        let mut edge_dist = Vec::with_capacity(self.edges.len());
        let mut edge_kernel = Vec::with_capacity(self.edges.len());
        let mut moment = vec![0.0; n];
        for &(i, j) in &self.edges {
            let d = (pts[i] - pts[j]).norm();
            if d == 0.0 {
                return Err(Error::DuplicatePoints(i, j));
            }
            let k = self.kernel(d);
            moment[i] += area[j] * k * d * d;
            moment[j] += area[i] * k * d * d;
            edge_dist.push(d);
            edge_kernel.push(k);
        }
        let weight = self
            .edges
            .iter()
            .zip(&edge_kernel)
            .map(|(&(i, j), k)| 4.0 * area[i] * area[j] * k / (moment[i] * moment[j]).sqrt())
            .collect();
        Ok(Assembly {
            area,
            density,
            moment,
            edge_dist,
            edge_kernel,
            weight,
        })
    }

    /// The (stiffness, mass) pair at positions `pts`.
    ///
    /// Edge weights are `a_i a_j exp(-d²/4t)` rescaled by the local second
    /// moment of the truncated kernel, so that `M⁻¹W` approximates the
    /// Laplace-Beltrami operator independently of the sampling density.
    pub fn laplacian(&self, pts: &[Vec3], source_id: &str) -> Result<LaplacianPair> {
        let a = self.assemble(pts)?;
        let n = self.n();
        let mut triplets = Vec::with_capacity(4 * self.edges.len());
        for (&(i, j), &w) in self.edges.iter().zip(&a.weight) {
            triplets.push((i, j, -w));
            triplets.push((j, i, -w));
            triplets.push((i, i, w));
            triplets.push((j, j, w));
        }
        Ok(LaplacianPair {
            stiffness: CsrMatrix::from_triplets(n, n, triplets),
            mass: a.area,
            source_id: source_id.to_string(),
        })
    }

    /// `∂λ/∂x` for an M-normalized eigenpair `(λ, φ)` of the operator at `pts`.
    pub fn eigenvalue_gradient(&self, pts: &[Vec3], lambda: f64, phi: &[f64]) -> Result<Vec<Vec3>> {
        let a = self.assemble(pts)?;
        let n = self.n();
        let t = self.t;
        let mut bar_area: Vec<f64> = (0..n).map(|i| -lambda * phi[i] * phi[i]).collect();
        let mut bar_moment = vec![0.0; n];
        let mut bar_kernel = vec![0.0; self.edges.len()];
        let mut bar_dist = vec![0.0; self.edges.len()];

        for (e, &(i, j)) in self.edges.iter().enumerate() {
            let g = (phi[i] - phi[j]).powi(2);
            let w = a.weight[e];
            bar_area[i] += g * w / a.area[i];
            bar_area[j] += g * w / a.area[j];
            bar_kernel[e] += g * 4.0 * a.area[i] * a.area[j] / (a.moment[i] * a.moment[j]).sqrt();
            bar_moment[i] -= g * w / (2.0 * a.moment[i]);
            bar_moment[j] -= g * w / (2.0 * a.moment[j]);
        }
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            let (d, k) = (a.edge_dist[e], a.edge_kernel[e]);
            bar_area[j] += bar_moment[i] * k * d * d;
            bar_area[i] += bar_moment[j] * k * d * d;
            let coupling = bar_moment[i] * a.area[j] + bar_moment[j] * a.area[i];
            bar_kernel[e] += coupling * d * d;
            bar_dist[e] += coupling * k * 2.0 * d;
        }

        let mut grad = vec![Vec3::zeros(); n];
        let mut push_pair = |i: usize, j: usize, bar_d: f64| {
            let r = pts[i] - pts[j];
            let dir = r / r.norm();
            grad[i] += bar_d * dir;
            grad[j] -= bar_d * dir;
        };
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            let (d, k) = (a.edge_dist[e], a.edge_kernel[e]);
            push_pair(i, j, bar_dist[e] + bar_kernel[e] * (-d / (2.0 * t)) * k);
        }
        for (i, nb) in self.neighbors.iter().enumerate() {
            let bar_density = -bar_area[i] * a.area[i] / a.density[i];
            for &j in nb {
                let d = (pts[i] - pts[j]).norm();
                push_pair(i, j, bar_density * (-d / (2.0 * t)) * self.kernel(d));
            }
        }
        Ok(grad)
    }
}

/// Heat-kernel graph Laplacian of a point cloud at its current positions.
pub fn pointcloud_laplacian(cloud: &Surface, neighbors: usize, bandwidth: Bandwidth) -> Result<LaplacianPair> {
    CloudGraph::build(cloud, neighbors, bandwidth)?.laplacian(cloud.vertices(), cloud.id())
}

/// For every point, its `k` nearest other points as (index, distance), ascending.
fn nearest_neighbors(pts: &[Vec3], k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = pts.len();
    let mut out = Vec::with_capacity(n);
    let mut d2: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        d2.clear();
        d2.extend((0..n).filter(|&j| j != i).map(|j| ((pts[i] - pts[j]).norm_squared(), j)));
        d2.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut nb: Vec<(f64, usize)> = d2[..k].to_vec();
        nb.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if nb[0].0 == 0.0 {
            return Err(Error::DuplicatePoints(i.min(nb[0].1), i.max(nb[0].1)));
        }
        out.push(nb.into_iter().map(|(d, j)| (j, d.sqrt())).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::fibonacci_sphere_points;
    use crate::spectral::eigendecompose;

    #[test]
    fn row_sums_vanish() {
        let cloud = Surface::cloud("c", fibonacci_sphere_points(300)).unwrap();
        let lap = pointcloud_laplacian(&cloud, 10, Bandwidth::Auto).unwrap();
        let scale = lap.stiffness.max_abs();
        for s in lap.stiffness.row_sums() {
            assert!(s.abs() <= 1e-10 * scale);
        }
        assert!(lap.stiffness.asymmetry() == 0.0);
    }

    #[test]
    fn duplicate_points_rejected() {
        let mut pts = fibonacci_sphere_points(50);
        pts.push(pts[7]);
        let cloud = Surface::cloud("c", pts).unwrap();
        assert!(matches!(
            pointcloud_laplacian(&cloud, 6, Bandwidth::Auto),
            Err(Error::DuplicatePoints(7, 50))
        ));
    }

    #[test]
    fn preconditions() {
        let cloud = Surface::cloud("c", fibonacci_sphere_points(5)).unwrap();
        assert!(pointcloud_laplacian(&cloud, 5, Bandwidth::Auto).is_err());
        assert!(pointcloud_laplacian(&cloud, 2, Bandwidth::Auto).is_err());
        assert!(pointcloud_laplacian(&cloud, 3, Bandwidth::Fixed(-1.0)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pts: Vec<Vec3> = fibonacci_sphere_points(200).iter().map(|p| Vec3::new(1.2 * p.x, p.y, 0.9 * p.z)).collect();
        let cloud = Surface::cloud("c", pts.clone()).unwrap();
        let graph = CloudGraph::build(&cloud, 12, Bandwidth::Auto).unwrap();
        let d = eigendecompose(graph.laplacian(&pts, "c").unwrap(), 6).unwrap();
        let dir: Vec<Vec3> = (0..pts.len())
            .map(|i| {
                let s = i as f64;
                Vec3::new((1.3 * s).sin(), (0.7 * s).cos(), (2.1 * s).sin())
            })
            .collect();
        let h = 1e-6;
        let lam_at = |sign: f64| {
            let moved: Vec<Vec3> = pts.iter().zip(&dir).map(|(p, v)| p + sign * h * v).collect();
            eigendecompose(graph.laplacian(&moved, "c").unwrap(), 6).unwrap().eigenvalues().to_vec()
        };
        let (plus, minus) = (lam_at(1.0), lam_at(-1.0));
        let flags = d.degeneracy_flags(1e-5);
        for j in 1..=6 {
            if flags[j] {
                continue;
            }
            let g = graph.eigenvalue_gradient(&pts, d.eigenvalues()[j], d.eigenfunction(j).as_slice()).unwrap();
            let an: f64 = g.iter().zip(&dir).map(|(a, b)| a.dot(b)).sum();
            let fd = (plus[j] - minus[j]) / (2.0 * h);
            assert!((an - fd).abs() < 1e-4 * an.abs().max(1e-2), "mode {j}: {an} vs {fd}");
        }
    }
}
