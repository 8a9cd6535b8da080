//! Universal spectral adversarial attack.
//!
//! One multiplicative eigenvalue perturbation `ρ` is shared by every shape.
//! Each shape `X_i` also gets coefficients `α_i` (b × 3) for a smooth
//! displacement `Φ_i α_i` in its own low-frequency eigenbasis. The objective
//!
//! ```text
//! Σ_i ‖σ(X_i)(1 + ρ) − σ(X_i + Φ_i α_i)‖² + c · μ(Z_true − max_{j≠true} Z_j)
//! ```
//!
//! with `μ(x) = max(x, −m)` is minimized with Adam from `ρ = 0, α_i = 0`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierModel, Logits};
use crate::error::{Error, Result};
use crate::geometry::{apply_displacement, Surface, Vec3, DEFAULT_NEIGHBORS};
use crate::metrics::{curvature_distortion, l2_displacement, success_rate};
use crate::optim::{Adam, AdamConfig};
use crate::seed::derive_seed;
use crate::spectral::{EigenOptions, SpectralDecomposition, SpectralOperator, SpectrumSlice, DEFAULT_DEGENERACY_TOLERANCE};

/// `1 + ρ_j` is kept at or above this so perturbed eigenvalues stay positive.
pub const MIN_RHO_FACTOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Spectral bandwidth: eigenvalues compared.
    pub k: usize,
    /// Spatial bandwidth: eigenfunctions spanning the displacement.
    pub b: usize,
    /// Weight of the adversarial penalty.
    pub c: f64,
    /// Margin in logit units.
    pub margin: f64,
    pub iterations: usize,
    pub learning_rate_rho: f64,
    pub learning_rate_alpha: f64,
    pub degeneracy_tolerance: f64,
    /// Drop the spectral energy entirely (penalty only). Only meaningful for
    /// the per-shape baseline.
    pub spectral_term: bool,
    /// kNN size for point-cloud operators.
    pub neighbors: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            k: 60,
            b: 20,
            c: 5e-2,
            margin: 1.0,
            iterations: 500,
            learning_rate_rho: 1e-3,
            learning_rate_alpha: 1e-3,
            degeneracy_tolerance: DEFAULT_DEGENERACY_TOLERANCE,
            spectral_term: true,
            neighbors: DEFAULT_NEIGHBORS,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidInput(format!("attack.{field} {msg}")));
        if self.k == 0 {
            return bad("k", "must be ≥ 1".into());
        }
        if self.b == 0 {
            return bad("b", "must be ≥ 1".into());
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return bad("c", format!("must be ≥ 0, got {}", self.c));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin", format!("must be ≥ 0, got {}", self.margin));
        }
        if self.iterations == 0 {
            return bad("iterations", "must be ≥ 1".into());
        }
        for (name, lr) in [("learning_rate_rho", self.learning_rate_rho), ("learning_rate_alpha", self.learning_rate_alpha)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(name, format!("must be positive, got {lr}"));
            }
        }
        if !(self.degeneracy_tolerance >= 0.0) {
            return bad("degeneracy_tolerance", "must be ≥ 0".into());
        }
        if self.neighbors < 3 {
            return bad("neighbors", "must be ≥ 3".into());
        }
        Ok(())
    }

    /// Eigenpairs retained per decomposition. One beyond the largest band so
    /// the last compared mode still has a right neighbor for the gap test.
    pub fn retained_modes(&self) -> usize {
        self.k.max(self.b) + 1
    }

    pub(crate) fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            seed: derive_seed(self.seed, "eigensolver"),
            ..EigenOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalPerturbation {
    pub rho: Vec<f64>,
}

impl UniversalPerturbation {
    pub fn zeros(k: usize) -> Self {
        Self { rho: vec![0.0; k] }
    }

    pub fn new(rho: Vec<f64>) -> Result<Self> {
        let p = Self { rho };
        p.validate()?;
        Ok(p)
    }

    pub fn k(&self) -> usize {
        self.rho.len()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((j, r)) = self.rho.iter().enumerate().find(|(_, r)| !r.is_finite() || 1.0 + **r <= 0.0) {
            return Err(Error::InvalidInput(format!("rho[{j}] = {r} leaves 1 + rho nonpositive or non-finite")));
        }
        Ok(())
    }
}

/// Per-shape displacement coefficients, one row per eigenfunction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeCoefficients {
    pub alpha: Vec<[f64; 3]>,
}

impl ShapeCoefficients {
    pub fn zeros(b: usize) -> Self {
        Self { alpha: vec![[0.0; 3]; b] }
    }

    pub fn b(&self) -> usize {
        self.alpha.len()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.alpha.len(), 3, |r, c| self.alpha[r][c])
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            alpha: (0..m.nrows()).map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]]).collect(),
        }
    }

    pub(crate) fn as_flat(&self) -> Vec<f64> {
        self.alpha.iter().flatten().cloned().collect()
    }

    pub(crate) fn from_flat(v: &[f64]) -> Self {
        Self {
            alpha: v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
        }
    }
}

/// `μ(Z_true − max_{j≠true} Z_j)` with `μ(x) = max(x, −m)`.
pub fn adversarial_penalty(logits: &Logits, true_class: usize, margin: f64) -> Result<f64> {
    Ok(penalty_with_gradient(logits, true_class, margin)?.0)
}

/// Penalty and its (sub)gradient in the logits.
pub fn penalty_with_gradient(logits: &Logits, true_class: usize, margin: f64) -> Result<(f64, Vec<f64>)> {
    let z = &logits.values;
    if z.len() < 2 {
        return Err(Error::InvalidInput("penalty needs at least two logits".into()));
    }
    if true_class >= z.len() {
        return Err(Error::InvalidInput(format!("class {true_class} out of range for {} logits", z.len())));
    }
    let mut rival = if true_class == 0 { 1 } else { 0 };
    for (j, &v) in z.iter().enumerate() {
        if j != true_class && v > z[rival] {
            rival = j;
        }
    }
    let gap = z[true_class] - z[rival];
    let mut grad = vec![0.0; z.len()];
    if gap > -margin {
        grad[true_class] = 1.0;
        grad[rival] = -1.0;
        Ok((gap, grad))
    } else {
        Ok((-margin, grad))
    }
}

/// `Σ_j (σ_j (1 + ρ_j) − σ'_j)²`, index-wise.
pub fn spectral_alignment_loss(
    sigma_original: &SpectrumSlice,
    rho: &UniversalPerturbation,
    sigma_deformed: &SpectrumSlice,
) -> Result<f64> {
    Ok(residuals(sigma_original.as_slice(), &rho.rho, sigma_deformed.as_slice())?
        .iter()
        .map(|r| r * r)
        .sum())
}

pub(crate) fn residuals(sigma: &[f64], rho: &[f64], deformed: &[f64]) -> Result<Vec<f64>> {
    if sigma.len() != rho.len() || sigma.len() != deformed.len() {
        return Err(Error::DimensionMismatch(format!(
            "spectrum lengths {}, {} and {} differ",
            sigma.len(),
            rho.len(),
            deformed.len()
        )));
    }
    Ok(sigma.iter().zip(rho).zip(deformed).map(|((s, r), d)| s * (1.0 + r) - d).collect())
}

/// A shape prepared for the attack: its operator and eigenbasis frozen at the
/// original geometry.
#[derive(Debug, Clone)]
pub struct AttackTarget {
    pub surface: Surface,
    /// True class index (the classifier's prediction, checked to match the
    /// label).
    pub label: usize,
    pub operator: SpectralOperator,
    /// n × b.
    pub basis: DMatrix<f64>,
    /// σ(X), length k.
    pub sigma: Vec<f64>,
}

impl AttackTarget {
    /// Decompose the original geometry. Labels come from the surface; if it
    /// has none the classifier's prediction is taken as the truth.
    pub fn prepare(surface: &Surface, classifier: &ClassifierModel, config: &AttackConfig) -> Result<Self> {
        let mut target = Self::from_geometry(surface, config)?;
        target.label = match surface.label() {
            Some(l) => classifier
                .class_index(l)
                .ok_or_else(|| Error::InvalidInput(format!("shape {} has unknown label '{l}'", surface.id())))?,
            None => classifier.predict(surface.vertices())?,
        };
        Ok(target)
    }

    /// Geometry only; the label is left at 0.
    pub(crate) fn from_geometry(surface: &Surface, config: &AttackConfig) -> Result<Self> {
        let for_shape = |e: Error| e.for_shape(surface.id());
        let operator = SpectralOperator::for_surface(surface, config.neighbors).map_err(for_shape)?;
        let decomp = operator
            .decompose(surface, config.retained_modes(), &config.eigen_options())
            .map_err(for_shape)?;
        Ok(Self {
            surface: surface.clone(),
            label: 0,
            basis: decomp.basis(config.b)?,
            sigma: decomp.spectrum(config.k)?.values,
            operator,
        })
    }

    /// `Φᵀ G` for a per-vertex field `G`.
    pub(crate) fn project(&self, field: &[Vec3]) -> DMatrix<f64> {
        let g = DMatrix::from_fn(field.len(), 3, |i, c| field[i][c]);
        self.basis.tr_mul(&g)
    }

    pub fn deform(&self, alpha: &ShapeCoefficients) -> Result<Surface> {
        apply_displacement(&self.surface, &self.basis, &alpha.to_matrix())
    }
}

/// Objective terms and gradients of one shape at one iterate.
#[derive(Debug, Clone)]
pub struct ShapeEvaluation {
    pub spectral_loss: f64,
    pub penalty: f64,
    /// σ(X + Φα), length k.
    pub sigma_deformed: Vec<f64>,
    pub residual: Vec<f64>,
    pub predicted: usize,
    /// Modes whose gradient was dropped as degenerate.
    pub degenerate_modes: usize,
    /// b × 3.
    pub grad_alpha: DMatrix<f64>,
}

impl ShapeEvaluation {
    pub fn objective(&self, c: f64) -> f64 {
        self.spectral_loss + c * self.penalty
    }
}

/// Spectral energy of one shape and, optionally, its gradient field with
/// respect to the deformed vertex positions.
pub(crate) struct SpectralTerms {
    pub loss: f64,
    pub sigma_deformed: Vec<f64>,
    pub residual: Vec<f64>,
    pub degenerate_modes: usize,
    pub field: Vec<Vec3>,
}

pub(crate) fn spectral_terms(
    target: &AttackTarget,
    deformed: &Surface,
    rho: &[f64],
    config: &AttackConfig,
    want_gradient: bool,
) -> Result<SpectralTerms> {
    let decomp = target
        .operator
        .decompose(deformed, config.retained_modes(), &config.eigen_options())?;
    let sigma_deformed = decomp.spectrum(config.k)?.values;
    let residual = residuals(&target.sigma, rho, &sigma_deformed)?;
    let mut field = vec![Vec3::zeros(); deformed.n_vertices()];
    let degenerate_modes = if want_gradient {
        accumulate_spectral_field(target, deformed, &decomp, &residual, config, &mut field)?
    } else {
        0
    };
    Ok(SpectralTerms {
        loss: residual.iter().map(|x| x * x).sum(),
        sigma_deformed,
        residual,
        degenerate_modes,
        field,
    })
}

fn evaluate_shape(
    target: &AttackTarget,
    rho: &[f64],
    alpha: &ShapeCoefficients,
    classifier: &ClassifierModel,
    config: &AttackConfig,
    want_gradient: bool,
) -> Result<ShapeEvaluation> {
    let deformed = target.deform(alpha)?;
    let n = deformed.n_vertices();
    let spectral = if config.spectral_term {
        spectral_terms(target, &deformed, rho, config, want_gradient)?
    } else {
        SpectralTerms {
            loss: 0.0,
            sigma_deformed: Vec::new(),
            residual: Vec::new(),
            degenerate_modes: 0,
            field: vec![Vec3::zeros(); n],
        }
    };
    let mut field = spectral.field;

    let (penalty, logits) = if want_gradient && config.c > 0.0 {
        let (value, logits, g) = classifier
            .input_gradient(deformed.vertices(), |z| penalty_with_gradient(z, target.label, config.margin).expect("valid class"))?;
        for (f, gi) in field.iter_mut().zip(&g) {
            *f += gi * config.c;
        }
        (value, logits)
    } else {
        let logits = classifier.forward(deformed.vertices())?;
        (adversarial_penalty(&logits, target.label, config.margin)?, logits)
    };

    let grad_alpha = if want_gradient {
        target.project(&field)
    } else {
        DMatrix::zeros(config.b, 3)
    };
    Ok(ShapeEvaluation {
        spectral_loss: spectral.loss,
        penalty,
        sigma_deformed: spectral.sigma_deformed,
        residual: spectral.residual,
        predicted: logits.argmax(),
        degenerate_modes: spectral.degenerate_modes,
        grad_alpha,
    })
}

/// Add `Σ_j −2 r_j ∂σ'_j/∂x` to `field`, skipping degenerate modes. Returns
/// how many were skipped.
fn accumulate_spectral_field(
    target: &AttackTarget,
    deformed: &Surface,
    decomp: &SpectralDecomposition,
    r: &[f64],
    config: &AttackConfig,
    field: &mut [Vec3],
) -> Result<usize> {
    let flags = decomp.degeneracy_flags(config.degeneracy_tolerance);
    let modes: Vec<usize> = (1..=config.k).filter(|&j| !flags[j] && r[j - 1] != 0.0).collect();
    let skipped = (1..=config.k).filter(|&j| flags[j]).count();
    if skipped > 0 {
        log::debug!("{}: {skipped} degenerate modes get no gradient", target.surface.id());
    }
    let grads = target.operator.eigenvalue_gradients(deformed, decomp, &modes)?;
    for (&j, g) in modes.iter().zip(&grads) {
        let w = -2.0 * r[j - 1];
        for (f, gi) in field.iter_mut().zip(g) {
            *f += gi * w;
        }
    }
    Ok(skipped)
}

/// Objective value and gradients for a set of shapes at one iterate.
#[derive(Debug, Clone)]
pub struct AttackGradients {
    pub objective: f64,
    pub rho: Vec<f64>,
    pub alphas: Vec<DMatrix<f64>>,
    pub shapes: Vec<ShapeEvaluation>,
}

/// The full problem: prepared shapes plus the fixed classifier.
pub struct AttackProblem<'a> {
    pub targets: Vec<AttackTarget>,
    pub classifier: &'a ClassifierModel,
    pub config: AttackConfig,
}

impl<'a> AttackProblem<'a> {
    /// Decompose every shape and check it is correctly classified.
    pub fn new(shapes: &[Surface], classifier: &'a ClassifierModel, config: &AttackConfig) -> Result<Self> {
        config.validate()?;
        if shapes.is_empty() {
            return Err(Error::InvalidInput("attack needs at least one shape".into()));
        }
        let targets: Vec<AttackTarget> = shapes
            .par_iter()
            .map(|s| AttackTarget::prepare(s, classifier, config))
            .collect::<Result<_>>()?;
        let wrong: Vec<String> = targets
            .par_iter()
            .map(|t| Ok((classifier.predict(t.surface.vertices())? != t.label).then(|| t.surface.id().to_string())))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        if !wrong.is_empty() {
            return Err(Error::Misclassified(wrong));
        }
        Ok(Self {
            targets,
            classifier,
            config: config.clone(),
        })
    }

    fn evaluate_all(&self, rho: &[f64], alphas: &[ShapeCoefficients], want_gradient: bool) -> Result<Vec<ShapeEvaluation>> {
        if alphas.len() != self.targets.len() {
            return Err(Error::DimensionMismatch(format!("{} coefficient sets for {} shapes", alphas.len(), self.targets.len())));
        }
        if rho.len() != self.config.k {
            return Err(Error::DimensionMismatch(format!("rho has {} entries, k = {}", rho.len(), self.config.k)));
        }
        self.targets
            .par_iter()
            .zip(alphas)
            .map(|(t, a)| {
                if a.b() != self.config.b {
                    return Err(Error::DimensionMismatch(format!("alpha has {} rows, b = {}", a.b(), self.config.b)));
                }
                evaluate_shape(t, rho, a, self.classifier, &self.config, want_gradient).map_err(|e| e.for_shape(t.surface.id()))
            })
            .collect()
    }

    pub fn objective(&self, rho: &UniversalPerturbation, alphas: &[ShapeCoefficients]) -> Result<f64> {
        Ok(self
            .evaluate_all(&rho.rho, alphas, false)?
            .iter()
            .map(|e| e.objective(self.config.c))
            .sum())
    }

    pub fn gradients(&self, rho: &UniversalPerturbation, alphas: &[ShapeCoefficients]) -> Result<AttackGradients> {
        let shapes = self.evaluate_all(&rho.rho, alphas, true)?;
        let mut grad_rho = vec![0.0; self.config.k];
        for (t, e) in self.targets.iter().zip(&shapes) {
            for j in 0..e.residual.len() {
                grad_rho[j] += 2.0 * e.residual[j] * t.sigma[j];
            }
        }
        Ok(AttackGradients {
            objective: shapes.iter().map(|e| e.objective(self.config.c)).sum(),
            rho: grad_rho,
            alphas: shapes.iter().map(|e| e.grad_alpha.clone()).collect(),
            shapes,
        })
    }
}

/// Gradients of the penalized objective with respect to `ρ` and every `α_i`.
pub fn attack_gradients(
    problem: &AttackProblem,
    rho: &UniversalPerturbation,
    alphas: &[ShapeCoefficients],
) -> Result<AttackGradients> {
    problem.gradients(rho, alphas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub spectral_loss: f64,
    pub penalty: f64,
    pub fooled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRecord {
    pub id: String,
    pub original_label: String,
    pub final_label: String,
    pub fooled: bool,
    pub spectral_loss: f64,
    pub penalty: f64,
    /// `‖σ(X)(1+ρ) − σ(X+Φα)‖`.
    pub alignment_error: f64,
    /// `‖σ(X)ρ‖`, the alignment error at the start.
    pub initial_alignment_error: f64,
    pub curvature_distortion: Option<f64>,
    pub l2_displacement: f64,
    pub sigma_original: Vec<f64>,
    pub sigma_deformed: Vec<f64>,
    pub alpha: ShapeCoefficients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub config: AttackConfig,
    pub rho: UniversalPerturbation,
    pub shapes: Vec<ShapeRecord>,
    pub trace: Vec<TraceEntry>,
    pub success_rate: f64,
    /// Deformed geometry, same order as `shapes`.
    #[serde(skip)]
    pub deformed: Vec<Surface>,
}

/// Jointly optimize `ρ` and all `α_i` for the configured iteration budget.
pub fn run_universal_attack(shapes: &[Surface], classifier: &ClassifierModel, config: &AttackConfig) -> Result<AttackResult> {
    let problem = AttackProblem::new(shapes, classifier, config)?;
    optimize(&problem)
}

fn optimize(problem: &AttackProblem) -> Result<AttackResult> {
    let config = &problem.config;
    let mut rho = UniversalPerturbation::zeros(config.k);
    let mut alphas: Vec<ShapeCoefficients> = problem.targets.iter().map(|_| ShapeCoefficients::zeros(config.b)).collect();
    let mut rho_opt = Adam::new(AdamConfig::with_learning_rate(config.learning_rate_rho), config.k);
    let mut alpha_opts: Vec<Adam> = alphas
        .iter()
        .map(|_| Adam::new(AdamConfig::with_learning_rate(config.learning_rate_alpha), config.b * 3))
        .collect();
    let mut trace = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let g = problem.gradients(&rho, &alphas)?;
        let entry = TraceEntry {
            iteration,
            objective: g.objective,
            spectral_loss: g.shapes.iter().map(|e| e.spectral_loss).sum(),
            penalty: g.shapes.iter().map(|e| e.penalty).sum(),
            fooled: problem.targets.iter().zip(&g.shapes).filter(|(t, e)| e.predicted != t.label).count(),
        };
        if !entry.objective.is_finite() {
            return Err(Error::Numerical(format!(
                "attack objective became {} at iteration {iteration}; last finite entry: {:?}",
                entry.objective,
                trace.last()
            )));
        }
        if iteration % 50 == 0 {
            log::info!(
                "iteration {iteration}: objective {:.6e}, spectral {:.3e}, fooled {}/{}",
                entry.objective,
                entry.spectral_loss,
                entry.fooled,
                problem.targets.len()
            );
        }
        trace.push(entry);
        if config.spectral_term {
            rho_opt.update(&mut rho.rho, &g.rho);
            for r in rho.rho.iter_mut() {
                *r = r.max(MIN_RHO_FACTOR - 1.0);
            }
        }
        for ((alpha, opt), grad) in alphas.iter_mut().zip(alpha_opts.iter_mut()).zip(&g.alphas) {
            let mut flat = alpha.as_flat();
            let grad_flat: Vec<f64> = (0..grad.nrows()).flat_map(|r| [grad[(r, 0)], grad[(r, 1)], grad[(r, 2)]]).collect();
            opt.update(&mut flat, &grad_flat);
            *alpha = ShapeCoefficients::from_flat(&flat);
        }
    }
    finish(problem, rho, alphas, trace)
}

fn finish(
    problem: &AttackProblem,
    rho: UniversalPerturbation,
    alphas: Vec<ShapeCoefficients>,
    trace: Vec<TraceEntry>,
) -> Result<AttackResult> {
    let config = &problem.config;
    let evals = problem.evaluate_all(&rho.rho, &alphas, false)?;
    let names = &problem.classifier.class_names;
    let records: Vec<(ShapeRecord, Surface)> = problem
        .targets
        .par_iter()
        .zip(&evals)
        .zip(&alphas)
        .map(|((t, e), a)| {
            let deformed = t.deform(a)?;
            let curvature = if deformed.is_mesh() { Some(curvature_distortion(&t.surface, &deformed)?) } else { None };
            let initial: f64 = t.sigma.iter().zip(&rho.rho).map(|(s, r)| (s * r).powi(2)).sum::<f64>().sqrt();
            let record = ShapeRecord {
                id: t.surface.id().to_string(),
                original_label: names[t.label].clone(),
                final_label: names[e.predicted].clone(),
                fooled: e.predicted != t.label,
                spectral_loss: e.spectral_loss,
                penalty: e.penalty,
                alignment_error: e.spectral_loss.sqrt(),
                initial_alignment_error: initial,
                curvature_distortion: curvature,
                l2_displacement: l2_displacement(&t.surface, &deformed)?,
                sigma_original: t.sigma.clone(),
                sigma_deformed: e.sigma_deformed.clone(),
                alpha: a.clone(),
            };
            Ok((record, deformed.with_id(format!("{}_adv", t.surface.id()))))
        })
        .collect::<Result<_>>()?;
    let (shapes, deformed): (Vec<ShapeRecord>, Vec<Surface>) = records.into_iter().unzip();
    let fooled: Vec<bool> = shapes.iter().map(|s| s.fooled).collect();
    Ok(AttackResult {
        config: config.clone(),
        rho,
        success_rate: success_rate(&fooled)?,
        shapes,
        trace,
        deformed,
    })
}

/// The shape-dependent baseline: an independent run per shape, each with its
/// own `ρ_i` (or no spectral term at all if `config.spectral_term` is off).
pub fn run_pershape_attack(
    shapes: &[Surface],
    classifier: &ClassifierModel,
    config: &AttackConfig,
) -> Result<Vec<AttackResult>> {
    config.validate()?;
    shapes
        .par_iter()
        .map(|s| run_universal_attack(std::slice::from_ref(s), classifier, config))
        .collect()
}
