//! Plot-ready exports of a result bundle.
//!
//! CSV layout (headers are fixed):
//!
//! - `shapes.csv`: one row per shape, columns [`SHAPE_COLUMNS`].
//! - `spectra.csv`: one row per (shape, mode), columns [`SPECTRUM_COLUMNS`].
//!   `mode` counts nonzero eigenvalues from 1.
//! - `rho.csv`: the shared perturbation, columns [`RHO_COLUMNS`]. Not
//!   written for per-shape runs.
//!
//! JSON writes the same content as one [`ExportDocument`] in `export.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bundle::{BundleKind, ResultBundle};
use crate::config::ExportFormat;
use crate::error::CliError;

pub const SHAPE_COLUMNS: [&str; 8] = [
    "id",
    "original_label",
    "final_label",
    "fooled",
    "curvature_distortion",
    "l2_displacement",
    "alignment_error",
    "initial_alignment_error",
];
pub const SPECTRUM_COLUMNS: [&str; 6] = ["id", "mode", "rho", "sigma_original", "sigma_target", "sigma_deformed"];
pub const RHO_COLUMNS: [&str; 2] = ["mode", "rho"];

pub const SHAPES_CSV: &str = "shapes.csv";
pub const SPECTRA_CSV: &str = "spectra.csv";
pub const RHO_CSV: &str = "rho.csv";
pub const EXPORT_JSON: &str = "export.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRow {
    pub id: String,
    pub original_label: String,
    pub final_label: String,
    pub fooled: bool,
    pub curvature_distortion: Option<f64>,
    pub l2_displacement: f64,
    pub alignment_error: f64,
    pub initial_alignment_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub id: String,
    pub mode: usize,
    pub rho: f64,
    pub sigma_original: f64,
    pub sigma_target: f64,
    pub sigma_deformed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoRow {
    pub mode: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportShape {
    #[serde(flatten)]
    pub row: ShapeRow,
    pub rho: Vec<f64>,
    pub sigma_original: Vec<f64>,
    pub sigma_target: Vec<f64>,
    pub sigma_deformed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportDocument {
    pub kind: BundleKind,
    pub success_rate: f64,
    pub rho: Option<Vec<f64>>,
    pub shapes: Vec<ExportShape>,
}

impl ExportDocument {
    pub fn from_bundle(bundle: &ResultBundle) -> Self {
        let shapes = bundle
            .shapes
            .iter()
            .map(|s| ExportShape {
                row: ShapeRow {
                    id: s.id.clone(),
                    original_label: s.original_label.clone(),
                    final_label: s.final_label.clone(),
                    fooled: s.fooled,
                    curvature_distortion: s.curvature_distortion,
                    l2_displacement: s.l2_displacement,
                    alignment_error: s.alignment_error,
                    initial_alignment_error: s.initial_alignment_error,
                },
                rho: s.rho.clone(),
                sigma_original: s.sigma_original.clone(),
                sigma_target: s.sigma_target.clone(),
                sigma_deformed: s.sigma_deformed.clone(),
            })
            .collect();
        Self {
            kind: bundle.kind,
            success_rate: bundle.success_rate,
            rho: bundle.rho.clone(),
            shapes,
        }
    }

    pub fn spectrum_rows(&self) -> Vec<SpectrumRow> {
        self.shapes
            .iter()
            .flat_map(|s| {
                (0..s.rho.len()).map(move |j| SpectrumRow {
                    id: s.row.id.clone(),
                    mode: j + 1,
                    rho: s.rho[j],
                    sigma_original: s.sigma_original[j],
                    sigma_target: s.sigma_target[j],
                    sigma_deformed: s.sigma_deformed[j],
                })
            })
            .collect()
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let fail = |e: csv::Error| CliError::input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    for r in rows {
        w.serialize(r).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Write the export files into `dir` and return their paths.
pub fn export_report(bundle: &ResultBundle, format: ExportFormat, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let doc = ExportDocument::from_bundle(bundle);
    match format {
        ExportFormat::Json => {
            let path = dir.join(EXPORT_JSON);
            let mut text = serde_json::to_string_pretty(&doc).expect("export serializes");
            text.push('\n');
            std::fs::write(&path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            Ok(vec![path])
        }
        ExportFormat::Csv => {
            let mut written = Vec::new();
            let path = dir.join(SHAPES_CSV);
            write_csv(&path, doc.shapes.iter().map(|s| &s.row))?;
            written.push(path);
            let path = dir.join(SPECTRA_CSV);
            write_csv(&path, doc.spectrum_rows())?;
            written.push(path);
            if let Some(rho) = &doc.rho {
                let path = dir.join(RHO_CSV);
                write_csv(&path, rho.iter().enumerate().map(|(j, r)| RhoRow { mode: j + 1, rho: *r }))?;
                written.push(path);
            }
            Ok(written)
        }
    }
}
