//! Transfer of a universal perturbation to unseen shapes: the target spectrum
//! `σ(X)(1 + ρ)` is fixed and only the smooth coefficients `α` are optimized
//! to reach it. No classifier is involved in the optimization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{residuals, spectral_terms, AttackConfig, AttackTarget, ShapeCoefficients, UniversalPerturbation};
use crate::classifier::ClassifierModel;
use crate::error::{Error, Result};
use crate::geometry::{Surface, DEFAULT_NEIGHBORS};
use crate::optim::{Adam, AdamConfig};
use crate::spectral::{SpectrumSlice, DEFAULT_DEGENERACY_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub k: usize,
    pub b: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Stop once the alignment error is below `tolerance · ‖σ‖`.
    pub tolerance: f64,
    pub degeneracy_tolerance: f64,
    pub neighbors: usize,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            k: 60,
            b: 20,
            iterations: 300,
            learning_rate: 1e-3,
            tolerance: 1e-6,
            degeneracy_tolerance: DEFAULT_DEGENERACY_TOLERANCE,
            neighbors: DEFAULT_NEIGHBORS,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        self.as_attack().validate().map_err(|e| match e {
            Error::InvalidInput(msg) => Error::InvalidInput(msg.replace("attack.", "synthesis.").replace("learning_rate_alpha", "learning_rate")),
            other => other,
        })?;
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidInput(format!("synthesis.tolerance must be ≥ 0, got {}", self.tolerance)));
        }
        Ok(())
    }

    /// The attack objective with the penalty switched off.
    fn as_attack(&self) -> AttackConfig {
        AttackConfig {
            k: self.k,
            b: self.b,
            c: 0.0,
            iterations: self.iterations,
            learning_rate_alpha: self.learning_rate,
            degeneracy_tolerance: self.degeneracy_tolerance,
            neighbors: self.neighbors,
            seed: self.seed,
            ..AttackConfig::default()
        }
    }
}

/// `λ_j (1 + ρ_j)`, not re-sorted.
pub fn perturb_spectrum(sigma: &SpectrumSlice, rho: &UniversalPerturbation) -> Result<Vec<f64>> {
    rho.validate()?;
    if sigma.k() != rho.k() {
        return Err(Error::DimensionMismatch(format!("spectrum has {} entries, rho has {}", sigma.k(), rho.k())));
    }
    Ok(sigma.values.iter().zip(&rho.rho).map(|(s, r)| s * (1.0 + r)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub id: String,
    pub alpha: ShapeCoefficients,
    /// Alignment error before each update.
    pub trace: Vec<f64>,
    pub initial_alignment_error: f64,
    pub final_alignment_error: f64,
    pub sigma_original: Vec<f64>,
    pub sigma_deformed: Vec<f64>,
    pub converged: bool,
    #[serde(skip)]
    pub deformed: Option<Surface>,
}

/// Minimize `‖σ(X)(1+ρ) − σ(X + Φα)‖²` over `α` with Adam from `α = 0`.
pub fn synthesize_from_spectrum(
    shape: &Surface,
    rho: &UniversalPerturbation,
    config: &SynthesisConfig,
) -> Result<SynthesisResult> {
    config.validate()?;
    rho.validate()?;
    if rho.k() != config.k {
        return Err(Error::DimensionMismatch(format!("rho has {} entries, k = {}", rho.k(), config.k)));
    }
    let attack = config.as_attack();
    let target = AttackTarget::from_geometry(shape, &attack)?;
    let floor = config.tolerance * target.sigma.iter().map(|s| s * s).sum::<f64>().sqrt();
    let mut alpha = ShapeCoefficients::zeros(config.b);
    let mut opt = Adam::new(AdamConfig::with_learning_rate(config.learning_rate), config.b * 3);
    let mut trace = Vec::new();
    let mut converged = false;
    let for_shape = |e: Error| e.for_shape(shape.id());

    for iteration in 0..config.iterations {
        let deformed = target.deform(&alpha)?;
        let terms = spectral_terms(&target, &deformed, &rho.rho, &attack, true).map_err(for_shape)?;
        let error = terms.loss.sqrt();
        if !error.is_finite() {
            return Err(Error::Numerical(format!("{}: alignment error diverged at iteration {iteration}", shape.id())));
        }
        trace.push(error);
        if error < floor {
            converged = true;
            break;
        }
        let grad = target.project(&terms.field);
        let grad_flat: Vec<f64> = (0..grad.nrows()).flat_map(|r| [grad[(r, 0)], grad[(r, 1)], grad[(r, 2)]]).collect();
        let mut flat = alpha.as_flat();
        opt.update(&mut flat, &grad_flat);
        alpha = ShapeCoefficients::from_flat(&flat);
    }

    let deformed = target.deform(&alpha)?;
    let terms = spectral_terms(&target, &deformed, &rho.rho, &attack, false).map_err(for_shape)?;
    let final_error = terms.loss.sqrt();
    converged |= final_error < floor;
    Ok(SynthesisResult {
        id: shape.id().to_string(),
        alpha,
        initial_alignment_error: trace.first().copied().unwrap_or(final_error),
        final_alignment_error: final_error,
        trace,
        sigma_original: target.sigma.clone(),
        sigma_deformed: terms.sigma_deformed,
        converged,
        deformed: Some(deformed.with_id(format!("{}_syn", shape.id()))),
    })
}

/// `‖σ(X)(1+ρ) − σ(X + Φα)‖`.
pub fn alignment_error(shape: &Surface, rho: &UniversalPerturbation, alpha: &ShapeCoefficients, k: usize) -> Result<f64> {
    alignment_error_with(shape, rho, alpha, &SynthesisConfig { k, b: alpha.b(), ..SynthesisConfig::default() })
}

pub fn alignment_error_with(
    shape: &Surface,
    rho: &UniversalPerturbation,
    alpha: &ShapeCoefficients,
    config: &SynthesisConfig,
) -> Result<f64> {
    let attack = config.as_attack();
    let target = AttackTarget::from_geometry(shape, &attack)?;
    let deformed = target.deform(alpha)?;
    let decomp = target.operator.decompose(&deformed, attack.retained_modes(), &attack.eigen_options())?;
    let r = residuals(&target.sigma, &rho.rho, &decomp.spectrum(config.k)?.values)?;
    Ok(r.iter().map(|x| x * x).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationRecord {
    pub synthesis: SynthesisResult,
    pub original_label: String,
    pub final_label: String,
    pub fooled: bool,
}

/// Synthesize every unseen shape from `ρ` and record predictions before and
/// after. The classifier is only ever run forward.
pub fn generalize(
    shapes: &[Surface],
    rho: &UniversalPerturbation,
    classifier: &ClassifierModel,
    config: &SynthesisConfig,
) -> Result<Vec<GeneralizationRecord>> {
    shapes
        .par_iter()
        .map(|s| {
            let before = classifier.predict(s.vertices())?;
            let synthesis = synthesize_from_spectrum(s, rho, config)?;
            let after = classifier.predict(synthesis.deformed.as_ref().expect("set above").vertices())?;
            Ok(GeneralizationRecord {
                original_label: classifier.class_names[before].clone(),
                final_label: classifier.class_names[after].clone(),
                fooled: before != after,
                synthesis,
            })
        })
        .collect()
}
