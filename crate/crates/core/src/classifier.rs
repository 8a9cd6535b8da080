//! A small PointNet-style classifier: a shared per-point MLP, max-pooling over
//! points, and a dense head producing logits. Everything is hand-differentiated
//! so the attack can pull exact gradients with respect to point coordinates.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Rotation3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Surface, Vec3};
use crate::optim::{Adam, AdamConfig};

/// A fully connected layer, `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// out × in.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weights: DMatrix::zeros(n_out, n_in),
            bias: DVector::zeros(n_out),
        }
    }

    /// He-uniform weights, zero bias.
    fn random(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / n_in as f64).sqrt();
        Self {
            weights: DMatrix::from_fn(n_out, n_in, |_, _| rng.gen_range(-bound..bound)),
            bias: DVector::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.nrows()
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Layer widths. The head's final width is the class count and is appended
/// automatically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub point_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            point_widths: vec![3, 32, 64, 128],
            head_widths: vec![128, 64],
        }
    }
}

/// Input preprocessing. With `per_shape` each cloud is centered and divided
/// by its RMS radius, which removes translation and scale; then a frozen
/// per-coordinate affine map `(y - shift) / scale` is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputNormalization {
    pub per_shape: bool,
    pub shift: [f64; 3],
    pub scale: [f64; 3],
}

impl Default for InputNormalization {
    fn default() -> Self {
        Self {
            per_shape: true,
            shift: [0.0; 3],
            scale: [1.0; 3],
        }
    }
}

impl InputNormalization {
    pub fn identity() -> Self {
        Self {
            per_shape: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    /// Shared per-point layers, each followed by ReLU.
    pub point_layers: Vec<Dense>,
    /// Head layers; ReLU between them, none after the last.
    pub head_layers: Vec<Dense>,
    pub class_names: Vec<String>,
    pub normalization: InputNormalization,
}

/// Unnormalized log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub values: Vec<f64>,
}

impl Logits {
    /// Index of the largest logit; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn softmax(&self) -> Vec<f64> {
        let max = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.values.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Softmax cross-entropy against `target` and its gradient in the logits.
    pub fn cross_entropy(&self, target: usize) -> (f64, Vec<f64>) {
        let max = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_total = self.values.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        let mut grad = self.softmax();
        grad[target] -= 1.0;
        (log_total - self.values[target], grad)
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Trace {
    /// Normalized input, 3 × n.
    input: DMatrix<f64>,
    center: Vec3,
    radius: f64,
    /// Pre-activations of each point layer.
    point_pre: Vec<DMatrix<f64>>,
    /// Post-activations of each point layer (last one is pooled).
    point_post: Vec<DMatrix<f64>>,
    /// Winning point per pooled feature.
    argmax: Vec<usize>,
    /// Inputs to each head layer (first is the pooled feature).
    head_in: Vec<DVector<f64>>,
    /// Pre-activations of each head layer; the last is the logits.
    head_pre: Vec<DVector<f64>>,
}

/// Parameter gradients with the same layout as the model.
#[derive(Debug, Clone)]
struct Gradients {
    point: Vec<Dense>,
    head: Vec<Dense>,
}

impl Gradients {
    fn zeros_like(model: &ClassifierModel) -> Self {
        let z = |l: &Dense| Dense::zeros(l.n_in(), l.n_out());
        Self {
            point: model.point_layers.iter().map(z).collect(),
            head: model.head_layers.iter().map(z).collect(),
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.point.iter_mut().zip(&other.point).chain(self.head.iter_mut().zip(&other.head)) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

fn relu_mask(grad: &mut DMatrix<f64>, pre: &DMatrix<f64>) {
    grad.zip_apply(pre, |g, p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
}

impl ClassifierModel {
    /// Randomly initialized model.
    pub fn new(arch: &Architecture, class_names: Vec<String>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (point_widths, head_widths) = Self::check_widths(arch, class_names.len())?;
        let point_layers = point_widths.windows(2).map(|w| Dense::random(w[0], w[1], &mut rng)).collect();
        let head_layers = head_widths.windows(2).map(|w| Dense::random(w[0], w[1], &mut rng)).collect();
        let model = Self {
            point_layers,
            head_layers,
            class_names,
            normalization: InputNormalization::default(),
        };
        model.validate()?;
        Ok(model)
    }

    fn check_widths(arch: &Architecture, n_classes: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let p = &arch.point_widths;
        if p.len() < 2 || p[0] != 3 || p.contains(&0) {
            return Err(Error::InvalidInput(format!("point_widths must start at 3 and have ≥ 2 positive entries, got {p:?}")));
        }
        let mut h = arch.head_widths.clone();
        if h.is_empty() || h[0] != *p.last().unwrap() || h.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "head_widths must start at the pooled width {}, got {h:?}",
                p.last().unwrap()
            )));
        }
        h.push(n_classes);
        Ok((p.clone(), h))
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn architecture(&self) -> Architecture {
        let mut point_widths = vec![3];
        point_widths.extend(self.point_layers.iter().map(Dense::n_out));
        Architecture {
            point_widths,
            head_widths: self.head_layers.iter().map(Dense::n_in).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() < 2 {
            return Err(Error::InvalidInput(format!("a classifier needs ≥ 2 classes, got {}", self.class_names.len())));
        }
        if self.point_layers.is_empty() || self.head_layers.is_empty() {
            return Err(Error::InvalidInput("classifier needs point and head layers".into()));
        }
        let mut width = 3;
        for l in self.point_layers.iter().chain(&self.head_layers) {
            if l.n_in() != width || l.bias.len() != l.n_out() {
                return Err(Error::DimensionMismatch(format!(
                    "layer expects {} inputs, previous width is {width}",
                    l.n_in()
                )));
            }
            if !l.is_finite() {
                return Err(Error::NonFinite("classifier weights".into()));
            }
            width = l.n_out();
        }
        if width != self.n_classes() {
            return Err(Error::DimensionMismatch(format!(
                "head produces {width} logits for {} classes",
                self.n_classes()
            )));
        }
        let norm = &self.normalization;
        if norm.shift.iter().chain(&norm.scale).any(|v| !v.is_finite()) || norm.scale.iter().any(|s| *s <= 0.0) {
            return Err(Error::InvalidInput("normalization scale must be positive and finite".into()));
        }
        Ok(())
    }

    fn normalize(&self, points: &[Vec3]) -> Result<(DMatrix<f64>, Vec3, f64)> {
        if points.is_empty() {
            return Err(Error::InvalidInput("classifier input has no points".into()));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("classifier input".into()));
        }
        let n = points.len() as f64;
        let (center, radius) = if self.normalization.per_shape {
            let c = points.iter().sum::<Vec3>() / n;
            let r = (points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / n).sqrt();
            if !(r > 0.0) {
                return Err(Error::InvalidInput("classifier input collapses to a single point".into()));
            }
            (c, r)
        } else {
            (Vec3::zeros(), 1.0)
        };
        let norm = &self.normalization;
        let input = DMatrix::from_fn(3, points.len(), |r, i| {
            ((points[i][r] - center[r]) / radius - norm.shift[r]) / norm.scale[r]
        });
        Ok((input, center, radius))
    }

    fn run(&self, points: &[Vec3]) -> Result<Trace> {
        let (input, center, radius) = self.normalize(points)?;
        let mut point_pre = Vec::with_capacity(self.point_layers.len());
        let mut point_post: Vec<DMatrix<f64>> = Vec::with_capacity(self.point_layers.len());
        for layer in &self.point_layers {
            let prev = point_post.last().unwrap_or(&input);
            let mut z = &layer.weights * prev;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            point_post.push(relu(&z));
            point_pre.push(z);
        }
        let features = point_post.last().unwrap();
        let mut argmax = vec![0usize; features.nrows()];
        let mut pooled = DVector::zeros(features.nrows());
        for f in 0..features.nrows() {
            let row = features.row(f);
            let mut best = 0;
            for i in 1..row.len() {
                if row[i] > row[best] {
                    best = i;
                }
            }
            argmax[f] = best;
            pooled[f] = row[best];
        }
        let mut head_in = Vec::with_capacity(self.head_layers.len());
        let mut head_pre: Vec<DVector<f64>> = Vec::with_capacity(self.head_layers.len());
        let mut x = pooled;
        for (l, layer) in self.head_layers.iter().enumerate() {
            let z = &layer.weights * &x + &layer.bias;
            head_in.push(x);
            x = if l + 1 < self.head_layers.len() { z.map(|v| v.max(0.0)) } else { z.clone() };
            head_pre.push(z);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(Trace {
            input,
            center,
            radius,
            point_pre,
            point_post,
            argmax,
            head_in,
            head_pre,
        })
    }

    pub fn forward(&self, points: &[Vec3]) -> Result<Logits> {
        let trace = self.run(points)?;
        Ok(Logits {
            values: trace.head_pre.last().unwrap().iter().cloned().collect(),
        })
    }

    pub fn predict(&self, points: &[Vec3]) -> Result<usize> {
        Ok(self.forward(points)?.argmax())
    }

    /// Backpropagate `dlogits`. Returns the gradient with respect to the
    /// normalized input (3 × n) and, if requested, fills parameter gradients.
    fn backward(&self, trace: &Trace, dlogits: &[f64], mut params: Option<&mut Gradients>) -> DMatrix<f64> {
        let mut g = DVector::from_column_slice(dlogits);
        for l in (0..self.head_layers.len()).rev() {
            if l + 1 < self.head_layers.len() {
                g.zip_apply(&trace.head_pre[l], |gv, z| {
                    if z <= 0.0 {
                        *gv = 0.0
                    }
                });
            }
            if let Some(p) = params.as_deref_mut() {
                p.head[l].weights.ger(1.0, &g, &trace.head_in[l], 1.0);
                p.head[l].bias += &g;
            }
            g = self.head_layers[l].weights.tr_mul(&g);
        }
        let last = trace.point_post.last().unwrap();
        let mut grad = DMatrix::zeros(last.nrows(), last.ncols());
        for (f, &i) in trace.argmax.iter().enumerate() {
            grad[(f, i)] = g[f];
        }
        for l in (0..self.point_layers.len()).rev() {
            relu_mask(&mut grad, &trace.point_pre[l]);
            let prev = if l == 0 { &trace.input } else { &trace.point_post[l - 1] };
            if let Some(p) = params.as_deref_mut() {
                p.point[l].weights.gemm(1.0, &grad, &prev.transpose(), 1.0);
                p.point[l].bias += grad.column_sum();
            }
            grad = self.point_layers[l].weights.tr_mul(&grad);
        }
        grad
    }

    /// Chain a gradient with respect to the normalized input back to raw
    /// point coordinates.
    fn input_chain(&self, trace: &Trace, points: &[Vec3], g: &DMatrix<f64>) -> Vec<Vec3> {
        let norm = &self.normalization;
        let n = points.len();
        let gy: Vec<Vec3> = (0..n)
            .map(|i| Vec3::new(g[(0, i)] / norm.scale[0], g[(1, i)] / norm.scale[1], g[(2, i)] / norm.scale[2]))
            .collect();
        if !norm.per_shape {
            return gy;
        }
        let (c, s) = (trace.center, trace.radius);
        let mean = gy.iter().sum::<Vec3>() / n as f64;
        let radial: f64 = gy.iter().zip(points).map(|(g, x)| g.dot(&(x - c))).sum::<f64>() / (s * s);
        gy.iter()
            .zip(points)
            .map(|(g, x)| (g - mean) / s - (x - c) * (radial / (n as f64 * s)))
            .collect()
    }

    /// Exact gradient of `objective(logits)` with respect to the point
    /// coordinates. The objective returns its value and its gradient in the
    /// logits. Max-pooling uses the argmax subgradient.
    pub fn input_gradient<F>(&self, points: &[Vec3], objective: F) -> Result<(f64, Logits, Vec<Vec3>)>
    where
        F: FnOnce(&Logits) -> (f64, Vec<f64>),
    {
        let trace = self.run(points)?;
        let logits = Logits {
            values: trace.head_pre.last().unwrap().iter().cloned().collect(),
        };
        let (value, dlogits) = objective(&logits);
        if dlogits.len() != self.n_classes() {
            return Err(Error::DimensionMismatch(format!(
                "objective gradient has {} entries for {} logits",
                dlogits.len(),
                self.n_classes()
            )));
        }
        let g = self.backward(&trace, &dlogits, None);
        let grad = self.input_chain(&trace, points, &g);
        if !value.is_finite() || grad.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("classifier input gradient".into()));
        }
        Ok((value, logits, grad))
    }

    fn parameter_gradients(&self, points: &[Vec3], target: usize) -> Result<(f64, bool, Gradients)> {
        let trace = self.run(points)?;
        let logits = Logits {
            values: trace.head_pre.last().unwrap().iter().cloned().collect(),
        };
        let (loss, dlogits) = logits.cross_entropy(target);
        let mut grads = Gradients::zeros_like(self);
        self.backward(&trace, &dlogits, Some(&mut grads));
        Ok((loss, logits.argmax() == target, grads))
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.point_layers
            .iter_mut()
            .chain(self.head_layers.iter_mut())
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Fraction of `shapes` predicted as their label, using all vertices.
    pub fn accuracy(&self, shapes: &[Surface]) -> Result<f64> {
        if shapes.is_empty() {
            return Ok(f64::NAN);
        }
        let labels = self.labels_of(shapes)?;
        let hits: Vec<bool> = shapes
            .par_iter()
            .zip(&labels)
            .map(|(s, &y)| Ok(self.predict(s.vertices())? == y))
            .collect::<Result<_>>()?;
        Ok(hits.iter().filter(|&&h| h).count() as f64 / shapes.len() as f64)
    }

    /// Class indices of labeled shapes.
    pub fn labels_of(&self, shapes: &[Surface]) -> Result<Vec<usize>> {
        shapes
            .iter()
            .map(|s| {
                let label = s
                    .label()
                    .ok_or_else(|| Error::InvalidInput(format!("shape {} has no label", s.id())))?;
                self.class_index(label)
                    .ok_or_else(|| Error::InvalidInput(format!("shape {} has unknown label '{label}'", s.id())))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Points per shape per step; shapes are subsampled or padded to this.
    pub points_per_shape: usize,
    /// Random rotation about the up (z) axis.
    pub rotate: bool,
    pub max_translation: f64,
    /// Standard deviation of per-point Gaussian jitter, relative to the
    /// shape's RMS radius.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 8,
            points_per_shape: 1024,
            rotate: true,
            max_translation: 0.1,
            jitter: 0.005,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, v: String| Err(Error::InvalidInput(format!("train.{field} {v}")));
        if self.epochs == 0 {
            return bad("epochs", "must be ≥ 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be ≥ 1".into());
        }
        if self.points_per_shape == 0 {
            return bad("points_per_shape", "must be ≥ 1".into());
        }
        if !(self.max_translation >= 0.0 && self.jitter >= 0.0) {
            return bad("max_translation/jitter", "must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Accuracy on the unaugmented training shapes, all vertices.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

fn resample(points: &[Vec3], count: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    if points.len() >= count {
        rand::seq::index::sample(rng, points.len(), count).iter().map(|i| points[i]).collect()
    } else {
        let mut out = points.to_vec();
        while out.len() < count {
            out.push(points[rng.gen_range(0..points.len())]);
        }
        out
    }
}

fn augment(points: &[Vec3], config: &TrainConfig, rng: &mut impl Rng) -> Vec<Vec3> {
    let mut pts = resample(points, config.points_per_shape, rng);
    let c = pts.iter().sum::<Vec3>() / pts.len() as f64;
    let radius = (pts.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / pts.len() as f64).sqrt();
    let rot = if config.rotate {
        Rotation3::from_axis_angle(&Vec3::z_axis(), rng.gen_range(0.0..std::f64::consts::TAU))
    } else {
        Rotation3::identity()
    };
    let t = config.max_translation;
    let shift = if t > 0.0 {
        Vec3::new(rng.gen_range(-t..=t), rng.gen_range(-t..=t), rng.gen_range(-t..=t))
    } else {
        Vec3::zeros()
    };
    let noise = Normal::new(0.0, (config.jitter * radius).max(f64::MIN_POSITIVE)).expect("valid sigma");
    for p in pts.iter_mut() {
        let mut q = rot * (*p - c) + c + shift;
        if config.jitter > 0.0 {
            q += Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
        }
        *p = q;
    }
    pts
}

/// Per-coordinate mean and standard deviation of the shape-normalized
/// training points.
fn fit_normalization(shapes: &[Surface]) -> InputNormalization {
    let mut sum = Vec3::zeros();
    let mut sq = Vec3::zeros();
    let mut count = 0.0;
    for s in shapes {
        let pts = s.vertices();
        let c = pts.iter().sum::<Vec3>() / pts.len() as f64;
        let r = (pts.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / pts.len() as f64).sqrt();
        for p in pts {
            let y = (p - c) / r;
            sum += y;
            sq += y.component_mul(&y);
            count += 1.0;
        }
    }
    let mean = sum / count;
    let var = sq / count - mean.component_mul(&mean);
    InputNormalization {
        per_shape: true,
        shift: mean.into(),
        scale: [var.x.sqrt().max(1e-6), var.y.sqrt().max(1e-6), var.z.sqrt().max(1e-6)],
    }
}

/// Minimize softmax cross-entropy with Adam. Deterministic for a given seed,
/// including under parallel execution.
pub fn train(
    model: &ClassifierModel,
    train_set: &[Surface],
    test_set: &[Surface],
    config: &TrainConfig,
) -> Result<(ClassifierModel, TrainReport)> {
    config.validate()?;
    model.validate()?;
    let labels = model.labels_of(train_set)?;
    for (c, name) in model.class_names.iter().enumerate() {
        let n = labels.iter().filter(|&&y| y == c).count();
        if n < 2 {
            return Err(Error::InvalidInput(format!("class '{name}' has {n} training shapes, need ≥ 2")));
        }
    }
    let mut model = model.clone();
    if model.normalization.per_shape {
        model.normalization = fit_normalization(train_set);
    }
    let adam_config = AdamConfig::with_learning_rate(config.learning_rate);
    let mut optimizers: Vec<Adam> = model.tensors_mut().iter().map(|t| Adam::new(adam_config, t.len())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total_loss, mut hits) = (0.0, 0usize);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
            let results: Vec<(f64, bool, Gradients)> = batch
                .par_iter()
                .zip(&seeds)
                .map(|(&i, &seed)| {
                    let mut local = ChaCha8Rng::seed_from_u64(seed);
                    let pts = augment(train_set[i].vertices(), config, &mut local);
                    model.parameter_gradients(&pts, labels[i])
                })
                .collect::<Result<_>>()?;
            let mut grads = Gradients::zeros_like(&model);
            for (loss, hit, g) in &results {
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!("training loss diverged at epoch {epoch}, batch {b}")));
                }
                total_loss += loss;
                hits += *hit as usize;
                grads.add(g);
            }
            let scale = 1.0 / batch.len() as f64;
            let mut grad_tensors: Vec<Vec<f64>> = grads
                .point
                .iter()
                .chain(&grads.head)
                .flat_map(|l| [l.weights.as_slice().to_vec(), l.bias.as_slice().to_vec()])
                .collect();
            for (opt, (param, grad)) in optimizers.iter_mut().zip(model.tensors_mut().into_iter().zip(grad_tensors.iter_mut())) {
                grad.iter_mut().for_each(|g| *g *= scale);
                opt.update(param, grad);
            }
        }
        let stats = EpochStats {
            loss: total_loss / train_set.len() as f64,
            accuracy: hits as f64 / train_set.len() as f64,
        };
        log::debug!("epoch {epoch}: loss {:.4}, batch accuracy {:.3}", stats.loss, stats.accuracy);
        epochs.push(stats);
    }
    model.validate()?;
    let train_accuracy = model.accuracy(train_set)?;
    let test_accuracy = if test_set.is_empty() { None } else { Some(model.accuracy(test_set)?) };
    Ok((
        model,
        TrainReport {
            epochs,
            train_accuracy,
            test_accuracy,
        },
    ))
}

const MAGIC: &[u8; 8] = b"SPADVCLF";
pub const MODEL_FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

/// Binary layout, little-endian: magic, version, class names, normalization,
/// layer shapes, then all weights and biases as f64 in layer order, and a
/// trailing SHA-256 of everything before it.
pub fn serialize_model(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(model)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn deserialize_model(path: impl AsRef<Path>) -> Result<ClassifierModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

pub fn encode_model(model: &ClassifierModel) -> Result<Vec<u8>> {
    model.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.class_names.len() as u32).to_le_bytes());
    for name in &model.class_names {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    let norm = &model.normalization;
    out.push(norm.per_shape as u8);
    for v in norm.shift.iter().chain(&norm.scale) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(model.point_layers.len() as u32).to_le_bytes());
    out.extend_from_slice(&(model.head_layers.len() as u32).to_le_bytes());
    let layers: Vec<&Dense> = model.point_layers.iter().chain(&model.head_layers).collect();
    for l in &layers {
        out.extend_from_slice(&(l.n_in() as u32).to_le_bytes());
        out.extend_from_slice(&(l.n_out() as u32).to_le_bytes());
    }
    for l in &layers {
        for v in l.weights.iter().chain(l.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::ModelFormat("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str, max: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n > max {
            return Err(Error::ModelFormat(format!("implausible {what} {n}")));
        }
        Ok(n)
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<ClassifierModel> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::ModelFormat("not a classifier model file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format version {version} (expected {MODEL_FORMAT_VERSION})"
        )));
    }
    if bytes.len() < 12 + CHECKSUM_LEN {
        return Err(Error::ModelFormat("truncated file".into()));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(Error::ModelFormat("checksum mismatch (corrupt or truncated file)".into()));
    }
    let mut r = Reader { bytes: body, pos: 12 };
    let n_classes = r.len("class count", 1 << 16)?;
    let mut class_names = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let len = r.len("name length", 1 << 16)?;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::ModelFormat("class name is not UTF-8".into()))?;
        class_names.push(name.to_string());
    }
    let per_shape = r.take(1)?[0] != 0;
    let mut affine = [0.0; 6];
    for v in affine.iter_mut() {
        *v = r.f64()?;
    }
    let n_point = r.len("layer count", 1 << 10)?;
    let n_head = r.len("layer count", 1 << 10)?;
    let mut shapes = Vec::with_capacity(n_point + n_head);
    for _ in 0..n_point + n_head {
        shapes.push((r.len("layer width", 1 << 20)?, r.len("layer width", 1 << 20)?));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for (n_in, n_out) in shapes {
        let mut l = Dense::zeros(n_in, n_out);
        for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
            *v = r.f64()?;
        }
        layers.push(l);
    }
    if r.pos != body.len() {
        return Err(Error::ModelFormat(format!("{} trailing bytes", body.len() - r.pos)));
    }
    let head_layers = layers.split_off(n_point);
    let model = ClassifierModel {
        point_layers: layers,
        head_layers,
        class_names,
        normalization: InputNormalization {
            per_shape,
            shift: [affine[0], affine[1], affine[2]],
            scale: [affine[3], affine[4], affine[5]],
        },
    };
    model.validate().map_err(|e| Error::ModelFormat(e.to_string()))?;
    Ok(model)
}
