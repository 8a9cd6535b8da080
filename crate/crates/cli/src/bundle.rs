//! The JSON result bundle shared by attack, attack-pershape and generalize,
//! and read back by evaluate and export.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spectral_adv::attack::{AttackConfig, AttackResult, ShapeCoefficients, TraceEntry};
use spectral_adv::synthesis::{GeneralizationRecord, SynthesisConfig};

use crate::error::CliError;

pub const BUNDLE_FILE: &str = "result.json";
pub const BUNDLE_VERSION: u32 = 1;
/// Deformed shapes live here, relative to the run directory.
pub const SHAPE_DIR: &str = "shapes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BundleKind {
    Universal,
    Pershape,
    Generalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeEntry {
    pub id: String,
    /// Original shape, relative to the corpus directory.
    pub source: String,
    /// Deformed shape, relative to the run directory.
    pub deformed: String,
    pub original_label: String,
    pub final_label: String,
    pub fooled: bool,
    pub curvature_distortion: Option<f64>,
    pub l2_displacement: f64,
    pub alignment_error: f64,
    pub initial_alignment_error: f64,
    /// The perturbation this shape was driven toward: the shared one, or its
    /// own in a per-shape run.
    pub rho: Vec<f64>,
    pub sigma_original: Vec<f64>,
    /// `σ(1 + ρ)`.
    pub sigma_target: Vec<f64>,
    pub sigma_deformed: Vec<f64>,
    pub alpha: ShapeCoefficients,
    /// Per-shape optimizer trace (per-shape runs only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceEntry>,
    /// Alignment error per synthesis iteration (generalization only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alignment_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultBundle {
    pub version: u32,
    pub kind: BundleKind,
    pub seed: u64,
    /// SHA-256 of the classifier file the run used.
    pub model_sha256: String,
    pub class_names: Vec<String>,
    /// The shared perturbation; absent for per-shape runs.
    pub rho: Option<Vec<f64>>,
    pub success_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisConfig>,
    /// Universal runs: the joint optimizer trace.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceEntry>,
    pub shapes: Vec<ShapeEntry>,
}

fn target(sigma: &[f64], rho: &[f64]) -> Vec<f64> {
    sigma.iter().zip(rho).map(|(s, r)| s * (1.0 + r)).collect()
}

pub fn deformed_path(id: &str) -> String {
    format!("{SHAPE_DIR}/{id}.off")
}

/// Bundle entries for one attack result; `sources` pairs with its shapes.
pub fn attack_entries(result: &AttackResult, sources: &[String], keep_trace: bool) -> Vec<ShapeEntry> {
    result
        .shapes
        .iter()
        .zip(&result.deformed)
        .zip(sources)
        .map(|((r, d), source)| ShapeEntry {
            id: r.id.clone(),
            source: source.clone(),
            deformed: deformed_path(d.id()),
            original_label: r.original_label.clone(),
            final_label: r.final_label.clone(),
            fooled: r.fooled,
            curvature_distortion: r.curvature_distortion,
            l2_displacement: r.l2_displacement,
            alignment_error: r.alignment_error,
            initial_alignment_error: r.initial_alignment_error,
            rho: result.rho.rho.clone(),
            sigma_target: target(&r.sigma_original, &result.rho.rho),
            sigma_original: r.sigma_original.clone(),
            sigma_deformed: r.sigma_deformed.clone(),
            alpha: r.alpha.clone(),
            trace: if keep_trace { result.trace.clone() } else { Vec::new() },
            alignment_trace: Vec::new(),
            converged: None,
        })
        .collect()
}

pub fn generalization_entry(
    record: &GeneralizationRecord,
    source: &str,
    rho: &[f64],
    curvature_distortion: Option<f64>,
    l2_displacement: f64,
) -> ShapeEntry {
    let s = &record.synthesis;
    ShapeEntry {
        id: s.id.clone(),
        source: source.to_string(),
        deformed: deformed_path(&format!("{}_syn", s.id)),
        original_label: record.original_label.clone(),
        final_label: record.final_label.clone(),
        fooled: record.fooled,
        curvature_distortion,
        l2_displacement,
        alignment_error: s.final_alignment_error,
        initial_alignment_error: s.initial_alignment_error,
        rho: rho.to_vec(),
        sigma_target: target(&s.sigma_original, rho),
        sigma_original: s.sigma_original.clone(),
        sigma_deformed: s.sigma_deformed.clone(),
        alpha: s.alpha.clone(),
        trace: Vec::new(),
        alignment_trace: s.trace.clone(),
        converged: Some(s.converged),
    }
}

/// A bundle path may name the JSON file or the run directory holding it.
pub fn resolve_bundle_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(BUNDLE_FILE)
    } else {
        path.to_path_buf()
    }
}

impl ResultBundle {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, run_dir: &Path) -> Result<PathBuf, CliError> {
        let path = run_dir.join(BUNDLE_FILE);
        fs::write(&path, self.to_json()).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    /// Load and sanity-check a bundle. Returns it with the directory its
    /// relative paths resolve against.
    pub fn read(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let path = resolve_bundle_path(path);
        let text = fs::read_to_string(&path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let bundle: ResultBundle =
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("corrupt bundle {}: {e}", path.display())))?;
        bundle.check().map_err(|e| e.context(format!("corrupt bundle {}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((bundle, dir))
    }

    fn check(&self) -> Result<(), CliError> {
        if self.version != BUNDLE_VERSION {
            return Err(CliError::input(format!("version {} (expected {BUNDLE_VERSION})", self.version)));
        }
        if self.shapes.is_empty() {
            return Err(CliError::input("no shapes"));
        }
        if (self.kind == BundleKind::Pershape) != self.rho.is_none() {
            return Err(CliError::input("shared rho must be present exactly for universal and generalization runs"));
        }
        for s in &self.shapes {
            let k = s.rho.len();
            if [s.sigma_original.len(), s.sigma_target.len(), s.sigma_deformed.len()] != [k, k, k] {
                return Err(CliError::input(format!("{}: spectrum arrays disagree in length", s.id)));
            }
            if let Some(rho) = &self.rho {
                if *rho != s.rho {
                    return Err(CliError::input(format!("{}: rho differs from the shared one", s.id)));
                }
            }
        }
        Ok(())
    }
}
