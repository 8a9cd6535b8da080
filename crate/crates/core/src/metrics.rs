//! Noticeability and efficacy measures for perturbed shapes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::error::{Error, Result};
use crate::geometry::{mean_curvature, Surface};

fn check_pair(original: &Surface, perturbed: &Surface) -> Result<()> {
    if original.n_vertices() != perturbed.n_vertices() {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} vertices, {} has {}",
            original.id(),
            original.n_vertices(),
            perturbed.id(),
            perturbed.n_vertices()
        )));
    }
    Ok(())
}

/// Mean over interior vertices of `|H_orig - H_pert|`, using unsigned mean
/// curvature on both sides. Boundary vertices are skipped since the
/// cotangent curvature normal is meaningless there.
pub fn curvature_distortion(original: &Surface, perturbed: &Surface) -> Result<f64> {
    check_pair(original, perturbed)?;
    if !original.is_mesh() || !perturbed.is_mesh() {
        return Err(Error::InvalidInput("curvature distortion needs triangle meshes".into()));
    }
    if original.faces() != perturbed.faces() {
        return Err(Error::DimensionMismatch(format!(
            "{} and {} have different connectivity",
            original.id(),
            perturbed.id()
        )));
    }
    let h0 = mean_curvature(original)?;
    let h1 = mean_curvature(perturbed)?;
    let boundary = original.boundary_vertices();
    let (sum, count) = h0
        .iter()
        .zip(&h1)
        .zip(&boundary)
        .filter(|(_, &b)| !b)
        .fold((0.0, 0usize), |(s, c), ((a, b), _)| (s + (a - b).abs(), c + 1));
    if count == 0 {
        return Err(Error::InvalidInput("every vertex is on the boundary".into()));
    }
    Ok(sum / count as f64)
}

/// Mean Euclidean distance between corresponding vertices.
pub fn l2_displacement(original: &Surface, perturbed: &Surface) -> Result<f64> {
    check_pair(original, perturbed)?;
    if original.n_vertices() == 0 {
        return Err(Error::InvalidInput("empty surface".into()));
    }
    let total: f64 = original
        .vertices()
        .iter()
        .zip(perturbed.vertices())
        .map(|(a, b)| (a - b).norm())
        .sum();
    Ok(total / original.n_vertices() as f64)
}

/// Percentage of fooled shapes.
pub fn success_rate(fooled: &[bool]) -> Result<f64> {
    if fooled.is_empty() {
        return Err(Error::InvalidInput("success rate of an empty set".into()));
    }
    Ok(100.0 * fooled.iter().filter(|&&f| f).count() as f64 / fooled.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeMetrics {
    pub id: String,
    /// Predicted class of the original geometry.
    pub original_label: String,
    pub perturbed_label: String,
    pub fooled: bool,
    /// None for point clouds.
    pub curvature_distortion: Option<f64>,
    pub l2_displacement: f64,
    pub alignment_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean over shapes; None if any shape is a point cloud.
    pub curvature_distortion: Option<f64>,
    pub l2_displacement: f64,
    pub success_rate: f64,
    pub alignment_errors: Vec<f64>,
    pub n_shapes: usize,
    pub n_fooled: usize,
    /// Set when curvature was skipped for lack of connectivity.
    pub point_cloud: bool,
    pub shapes: Vec<ShapeMetrics>,
}

/// Recompute predictions from geometry and fill a report. Labels before and
/// after are both predictions; the stored attack flags are never consulted.
pub fn evaluate_attack(
    originals: &[Surface],
    perturbed: &[Surface],
    classifier: &ClassifierModel,
    alignment_errors: Option<&[f64]>,
) -> Result<MetricReport> {
    if originals.len() != perturbed.len() || originals.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} originals paired with {} perturbed shapes",
            originals.len(),
            perturbed.len()
        )));
    }
    if let Some(a) = alignment_errors {
        if a.len() != originals.len() {
            return Err(Error::DimensionMismatch(format!("{} alignment errors for {} shapes", a.len(), originals.len())));
        }
    }
    let shapes: Vec<ShapeMetrics> = originals
        .par_iter()
        .zip(perturbed)
        .enumerate()
        .map(|(i, (o, p))| {
            let before = classifier.predict(o.vertices())?;
            let after = classifier.predict(p.vertices())?;
            let curvature = if o.is_mesh() && p.is_mesh() { Some(curvature_distortion(o, p)?) } else { None };
            Ok(ShapeMetrics {
                id: o.id().to_string(),
                original_label: classifier.class_names[before].clone(),
                perturbed_label: classifier.class_names[after].clone(),
                fooled: before != after,
                curvature_distortion: curvature,
                l2_displacement: l2_displacement(o, p)?,
                alignment_error: alignment_errors.map(|a| a[i]),
            })
        })
        .collect::<Result<_>>()?;
    let n = shapes.len() as f64;
    let fooled: Vec<bool> = shapes.iter().map(|s| s.fooled).collect();
    let point_cloud = shapes.iter().any(|s| s.curvature_distortion.is_none());
    Ok(MetricReport {
        curvature_distortion: if point_cloud {
            None
        } else {
            Some(shapes.iter().filter_map(|s| s.curvature_distortion).sum::<f64>() / n)
        },
        l2_displacement: shapes.iter().map(|s| s.l2_displacement).sum::<f64>() / n,
        success_rate: success_rate(&fooled)?,
        alignment_errors: alignment_errors.map(<[f64]>::to_vec).unwrap_or_default(),
        n_shapes: shapes.len(),
        n_fooled: fooled.iter().filter(|&&f| f).count(),
        point_cloud,
        shapes,
    })
}
