use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceKind {
    Mesh,
    Cloud,
}

/// A shape given either as a triangle mesh or as an unorganized point cloud.
///
/// Surfaces are immutable once built: every operation that moves vertices
/// returns a new value with the same connectivity.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    id: String,
    label: Option<String>,
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    manifold: bool,
}

impl Surface {
    /// Build a mesh. An empty face list yields a point cloud.
    pub fn new(id: impl Into<String>, vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (i, v) in vertices.iter().enumerate() {
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                return Err(Error::NonFinite(format!("vertex {i} = ({}, {}, {})", v.x, v.y, v.z)));
            }
        }
        for (f, tri) in faces.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidInput(format!(
                    "face {f} references vertex {bad} but only {n} vertices exist"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidInput(format!("face {f} is degenerate: {tri:?}")));
            }
        }
        let manifold = edges_manifold(&faces);
        Ok(Self {
            id: id.into(),
            label: None,
            vertices,
            faces,
            manifold,
        })
    }

    pub fn cloud(id: impl Into<String>, points: Vec<Vec3>) -> Result<Self> {
        Self::new(id, points, Vec::new())
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn kind(&self) -> SurfaceKind {
        if self.faces.is_empty() {
            SurfaceKind::Cloud
        } else {
            SurfaceKind::Mesh
        }
    }

    pub fn is_mesh(&self) -> bool {
        self.kind() == SurfaceKind::Mesh
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Advisory flag: every edge is shared by at most two faces.
    pub fn is_manifold(&self) -> bool {
        self.manifold
    }

    /// Same connectivity, label and id with new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        if let Some((i, _)) = vertices
            .iter()
            .enumerate()
            .find(|(_, v)| !v.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite(format!("vertex {i}")));
        }
        Ok(Self {
            id: self.id.clone(),
            label: self.label.clone(),
            vertices,
            faces: self.faces.clone(),
            manifold: self.manifold,
        })
    }

    /// Drop the connectivity, keeping the vertices as a point cloud.
    pub fn to_cloud(&self) -> Self {
        Self {
            id: self.id.clone(),
            label: self.label.clone(),
            vertices: self.vertices.clone(),
            faces: Vec::new(),
            manifold: true,
        }
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * (pb - pa).cross(&(pc - pa)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    pub fn centroid(&self) -> Vec3 {
        let sum: Vec3 = self.vertices.iter().sum();
        sum / self.vertices.len().max(1) as f64
    }

    /// Undirected edges, each listed once with the smaller index first, sorted.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut edges: Vec<[usize; 2]> = self
            .faces
            .iter()
            .flat_map(|&[a, b, c]| [[a, b], [b, c], [c, a]])
            .map(|[i, j]| if i < j { [i, j] } else { [j, i] })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Vertices lying on an edge used by exactly one face.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut count: HashMap<[usize; 2], u32> = HashMap::new();
        for &[a, b, c] in &self.faces {
            for [i, j] in [[a, b], [b, c], [c, a]] {
                *count.entry(if i < j { [i, j] } else { [j, i] }).or_default() += 1;
            }
        }
        let mut boundary = vec![false; self.vertices.len()];
        for ([i, j], c) in count {
            if c == 1 {
                boundary[i] = true;
                boundary[j] = true;
            }
        }
        boundary
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.faces.len() as i64
    }

    /// Rigid motion plus uniform scale: `x -> scale * R x + t`.
    pub fn transform(&self, rotation: &Matrix3<f64>, translation: &Vec3, scale: f64) -> Result<Self> {
        check_rotation(rotation)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!("scale must be positive, got {scale}")));
        }
        let moved = self
            .vertices
            .iter()
            .map(|v| scale * (rotation * v) + translation)
            .collect();
        self.with_vertices(moved)
    }

    /// Relabel vertices: new vertex `i` is old vertex `perm[i]`.
    pub fn permute_vertices(&self, perm: &[usize]) -> Result<Self> {
        let n = self.vertices.len();
        if perm.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "permutation has {} entries for {n} vertices",
                perm.len()
            )));
        }
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(Error::InvalidInput("not a permutation".into()));
            }
            inverse[old] = new;
        }
        let vertices = perm.iter().map(|&old| self.vertices[old]).collect();
        let faces = self
            .faces
            .iter()
            .map(|f| [inverse[f[0]], inverse[f[1]], inverse[f[2]]])
            .collect();
        let mut out = Surface::new(self.id.clone(), vertices, faces)?;
        out.label = self.label.clone();
        Ok(out)
    }

    /// Uniformly rescale about the centroid so the total area equals `target`.
    pub fn normalize_area(&self, target: f64) -> Result<Self> {
        let area = self.total_area();
        if area <= 0.0 {
            return Err(Error::InvalidInput("cannot area-normalize a surface without area".into()));
        }
        let s = (target / area).sqrt();
        let c = self.centroid();
        self.with_vertices(self.vertices.iter().map(|v| c + (v - c) * s).collect())
    }
}

pub(crate) fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
    if dev > 1e-10 || !dev.is_finite() {
        return Err(Error::InvalidInput(format!(
            "rotation is not orthonormal (max |RᵀR - I| = {dev:e})"
        )));
    }
    Ok(())
}

fn edges_manifold(faces: &[[usize; 3]]) -> bool {
    let mut count: HashMap<[usize; 2], u32> = HashMap::new();
    for &[a, b, c] in faces {
        for [i, j] in [[a, b], [b, c], [c, a]] {
            let e = count.entry(if i < j { [i, j] } else { [j, i] }).or_default();
            *e += 1;
            if *e > 2 {
                return false;
            }
        }
    }
    true
}
