//! Synthetic deformable-shape families.
//!
//! Every class is an elongated ellipsoidal body with a class-specific set of
//! protrusions (the identity features). Individual shapes add random joint
//! bends (pose), a rotation about the up axis, a translation and a uniform
//! scale, and are tessellated with a random vertex count.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, load_surface, primitives::fibonacci_sphere_points, save_surface, MeshFormat};
use crate::geometry::{Surface, Vec3};
use crate::seed::derive_seed;
use crate::spectral::{EigenOptions, SpectralOperator};

/// Hard cap on joint bends; larger angles fold the limbs into the body.
pub const MAX_BEND_DEGREES: f64 = 60.0;

/// A radial Gaussian bump on the unit-sphere parametrization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protrusion {
    /// Direction on the unit sphere (normalized on use).
    pub direction: [f64; 3],
    /// Relative radial gain at the center.
    pub height: f64,
    /// Angular standard deviation, radians.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTemplate {
    pub name: String,
    /// Body semi-axes; x is the long (head-tail) axis, z is up.
    pub radii: [f64; 3],
    pub protrusions: Vec<Protrusion>,
}

/// Two joints along the long axis; everything beyond a joint is rotated as a
/// rigid limb, blended smoothly across the joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseRanges {
    /// Joint angles are drawn uniformly from ±max_bend_degrees.
    pub max_bend_degrees: f64,
    /// Joint positions as a fraction of the body half-length.
    pub joint_offset: f64,
    /// Width of the blending zone as a fraction of the body half-length.
    pub blend: f64,
}

impl Default for PoseRanges {
    fn default() -> Self {
        Self {
            max_bend_degrees: 12.0,
            joint_offset: 0.65,
            blend: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub classes: Vec<ClassTemplate>,
    pub shapes_per_class: usize,
    pub test_fraction: f64,
    pub min_vertices: usize,
    pub max_vertices: usize,
    pub pose: PoseRanges,
    pub max_translation: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    /// Rotate each shape by a random angle about the up axis.
    pub random_rotation: bool,
    /// Drop the faces and write point clouds.
    pub point_clouds: bool,
    /// Rescale every mesh to this total area after the random scale is
    /// applied. Off by default, so raw spectra keep their size dependence.
    pub normalize_area: Option<f64>,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            classes: default_classes(),
            shapes_per_class: 30,
            test_fraction: 0.3,
            min_vertices: 800,
            max_vertices: 1500,
            pose: PoseRanges::default(),
            max_translation: 0.6,
            // Raw eigenvalues fall off as 1/scale², so larger shapes soften
            // the spectral term against the adversarial one; around 3 the
            // default attack settings cross class boundaries in 500 steps.
            min_scale: 2.7,
            max_scale: 3.3,
            random_rotation: true,
            point_clouds: false,
            normalize_area: None,
            seed: 0,
        }
    }
}

fn bump(direction: [f64; 3], height: f64, width: f64) -> Protrusion {
    Protrusion {
        direction,
        height,
        width,
    }
}

/// Three quadrupeds sharing one layout (four legs and a head) that differ only
/// in proportions: body girth, leg length, head size and carriage. Close
/// enough that a smooth deformation can carry one into another.
pub fn default_classes() -> Vec<ClassTemplate> {
    let quadruped = |name: &str, radii: [f64; 3], leg: f64, head: [f64; 3], head_height: f64| ClassTemplate {
        name: name.into(),
        radii,
        protrusions: vec![
            bump([0.5, 0.45, -0.75], leg, 0.2),
            bump([0.5, -0.45, -0.75], leg, 0.2),
            bump([-0.5, 0.45, -0.75], leg, 0.2),
            bump([-0.5, -0.45, -0.75], leg, 0.2),
            bump(head, head_height, 0.25),
        ],
    };
    vec![
        quadruped("horse", [1.0, 0.35, 0.4], 1.0, [1.0, 0.0, 0.6], 0.6),
        quadruped("cow", [1.0, 0.45, 0.45], 0.7, [1.0, 0.0, 0.2], 0.4),
        quadruped("hound", [0.9, 0.35, 0.35], 0.8, [1.0, 0.0, 0.35], 0.5),
    ]
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.classes.len() < 2 {
            return bad(format!("corpus needs at least 2 classes, got {}", self.classes.len()));
        }
        let mut names: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("class names must be distinct".into());
        }
        if self.shapes_per_class < 2 {
            return bad(format!("shapes_per_class must be at least 2, got {}", self.shapes_per_class));
        }
        if !(self.test_fraction >= 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must be in [0, 1), got {}", self.test_fraction));
        }
        if self.min_vertices < 50 || self.min_vertices > self.max_vertices {
            return bad(format!(
                "vertex range {}..={} is invalid (minimum 50)",
                self.min_vertices, self.max_vertices
            ));
        }
        if !(self.min_scale > 0.0 && self.min_scale <= self.max_scale && self.max_scale.is_finite()) {
            return bad(format!("scale range {}..={} is invalid", self.min_scale, self.max_scale));
        }
        if !(self.max_translation >= 0.0 && self.max_translation.is_finite()) {
            return bad(format!("max_translation must be nonnegative, got {}", self.max_translation));
        }
        if let Some(a) = self.normalize_area {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("normalize_area must be positive, got {a}"));
            }
        }
        check_pose(&self.pose)?;
        for class in &self.classes {
            check_template(class)?;
        }
        Ok(())
    }
}

fn check_pose(pose: &PoseRanges) -> Result<()> {
    if !(pose.max_bend_degrees >= 0.0 && pose.max_bend_degrees <= MAX_BEND_DEGREES) {
        return Err(Error::InvalidInput(format!(
            "max_bend_degrees must be in [0, {MAX_BEND_DEGREES}], got {}",
            pose.max_bend_degrees
        )));
    }
    if !(pose.joint_offset > 0.0 && pose.joint_offset < 1.0) {
        return Err(Error::InvalidInput(format!("joint_offset must be in (0, 1), got {}", pose.joint_offset)));
    }
    if !(pose.blend > 0.0 && pose.blend <= 1.0) {
        return Err(Error::InvalidInput(format!("blend must be in (0, 1], got {}", pose.blend)));
    }
    Ok(())
}

fn check_template(class: &ClassTemplate) -> Result<()> {
    if class.radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidInput(format!("class '{}' has nonpositive radii", class.name)));
    }
    for p in &class.protrusions {
        let d = Vec3::from(p.direction);
        if !(d.norm() > 0.0) || !(p.height > -0.9 && p.height.is_finite()) || !(p.width > 0.0 && p.width < 1.5) {
            return Err(Error::InvalidInput(format!("class '{}' has an invalid protrusion {p:?}", class.name)));
        }
    }
    Ok(())
}

/// Vertices a protrusion needs inside its one-sigma cap to be resolved.
const VERTICES_PER_PROTRUSION: f64 = 4.0;

/// Rest-pose mesh of a class with exactly `resolution` vertices. The seed
/// only rotates the sampling pattern, so different seeds give different
/// tessellations of the same geometry.
pub fn make_base_shape(class: &ClassTemplate, resolution: usize, seed: u64) -> Result<Surface> {
    check_template(class)?;
    if resolution < 50 {
        return Err(Error::InvalidInput(format!("resolution {resolution} is below the minimum of 50")));
    }
    for p in &class.protrusions {
        let cap_fraction = (1.0 - p.width.cos()) / 2.0;
        if cap_fraction * (resolution as f64) < VERTICES_PER_PROTRUSION {
            return Err(Error::InvalidInput(format!(
                "resolution {resolution} too low for {} protrusions of width {}",
                class.protrusions.len(),
                p.width
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spin = random_rotation(&mut rng);
    let dirs: Vec<Vec3> = fibonacci_sphere_points(resolution).iter().map(|u| spin * u).collect();
    let faces = convex_hull(&dirs)?;
    let bumps: Vec<(Vec3, f64, f64)> = class
        .protrusions
        .iter()
        .map(|p| (Vec3::from(p.direction).normalize(), p.height, p.width))
        .collect();
    let radii = Vec3::from(class.radii);
    let vertices = dirs
        .iter()
        .map(|u| {
            let gain: f64 = bumps
                .iter()
                .map(|(d, h, w)| {
                    let angle = u.dot(d).clamp(-1.0, 1.0).acos();
                    h * (-angle * angle / (2.0 * w * w)).exp()
                })
                .sum();
            radii.component_mul(u) * (1.0 + gain)
        })
        .collect();
    Ok(Surface::new(format!("{}_base", class.name), vertices, faces)?.with_label(class.name.clone()))
}

/// Concrete joint angles (radians) drawn from the ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// (front, back) joint angles.
    pub angles: [f64; 2],
    /// Bend axis per joint: true for the up axis (sideways bend).
    pub sideways: [bool; 2],
}

impl Pose {
    pub fn sample(ranges: &PoseRanges, rng: &mut impl Rng) -> Self {
        let max = ranges.max_bend_degrees.to_radians();
        let mut angle = || if max > 0.0 { rng.gen_range(-max..=max) } else { 0.0 };
        let angles = [angle(), angle()];
        Self {
            angles,
            sideways: [rng.gen_bool(0.5), rng.gen_bool(0.5)],
        }
    }
}

/// Bend a rest-frame shape at two joints along its long (x) axis. Points beyond a
/// joint are rotated rigidly about an axis through the joint; inside the
/// blending zone the angle ramps smoothly, which keeps the deformation close
/// to an isometry.
pub fn apply_pose_deformation(shape: &Surface, ranges: &PoseRanges, seed: u64) -> Result<Surface> {
    check_pose(ranges)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = Pose::sample(ranges, &mut rng);
    if pose.angles == [0.0, 0.0] {
        return Ok(shape.clone());
    }
    // Rest frame: body centered at the origin, long axis along x. The
    // shorter side of the bounding box is the body half-length, so
    // protrusions at one end don't shift the joints.
    let (lo, hi) = shape.bounding_box();
    let center = Vec3::zeros();
    let half = (-lo.x).min(hi.x);
    if !(half > 0.0) {
        return Err(Error::InvalidInput("pose expects a shape centered at the origin".into()));
    }
    let blend = ranges.blend * half;
    let mut vertices: Vec<Vec3> = shape.vertices().to_vec();
    for (side, sign) in [(0usize, 1.0f64), (1, -1.0)] {
        let joint_x = center.x + sign * ranges.joint_offset * half;
        let pivot = Vec3::new(joint_x, center.y, center.z);
        let axis = if pose.sideways[side] { Vec3::z_axis() } else { Vec3::y_axis() };
        for v in vertices.iter_mut() {
            // Signed distance past the joint, toward the limb.
            let s = sign * (v.x - joint_x);
            let w = smoothstep((s + blend / 2.0) / blend);
            if w == 0.0 {
                continue;
            }
            let rot = Rotation3::from_axis_angle(&Unit::new_unchecked(*axis), sign * pose.angles[side] * w);
            *v = pivot + rot * (*v - pivot);
        }
    }
    shape.with_vertices(vertices)
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn random_rotation(rng: &mut impl Rng) -> nalgebra::Matrix3<f64> {
    // Uniform unit quaternion (Shoemake).
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = std::f64::consts::TAU;
    let q = nalgebra::Quaternion::new(
        (1.0 - u1).sqrt() * (tau * u2).sin(),
        (1.0 - u1).sqrt() * (tau * u2).cos(),
        u1.sqrt() * (tau * u3).sin(),
        u1.sqrt() * (tau * u3).cos(),
    );
    nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub id: String,
    pub label: String,
    pub split: Split,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Spectral separation statistics computed at generation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    /// Largest mean relative L2 distance of a shape spectrum to its class mean.
    pub within_class: f64,
    /// Smallest relative L2 distance between two class-mean spectra.
    pub between_class: f64,
}

/// Modes compared by the generation-time separation check.
pub const SPREAD_MODES: usize = 20;

/// A single generated shape, before it is written.
pub fn generate_shape(spec: &CorpusSpec, class_index: usize, index: usize) -> Result<(Surface, u64)> {
    let class = spec
        .classes
        .get(class_index)
        .ok_or_else(|| Error::InvalidInput(format!("class index {class_index} out of range")))?;
    let seed = derive_seed(spec.seed, &format!("{}/{index}", class.name));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let resolution = rng.gen_range(spec.min_vertices..=spec.max_vertices);
    let base = make_base_shape(class, resolution, rng.gen())?;
    let posed = apply_pose_deformation(&base, &spec.pose, rng.gen())?;
    let angle = if spec.random_rotation { rng.gen_range(0.0..std::f64::consts::TAU) } else { 0.0 };
    let rotation = Rotation3::from_axis_angle(&Vec3::z_axis(), angle).into_inner();
    let t = spec.max_translation;
    let translation = if t > 0.0 {
        Vec3::new(rng.gen_range(-t..=t), rng.gen_range(-t..=t), rng.gen_range(-t..=t))
    } else {
        Vec3::zeros()
    };
    let scale = if spec.max_scale > spec.min_scale { rng.gen_range(spec.min_scale..=spec.max_scale) } else { spec.min_scale };
    let mut shape = posed
        .transform(&rotation, &translation, scale)?
        .with_id(format!("{}_{index:03}", class.name))
        .with_label(class.name.clone());
    if let Some(area) = spec.normalize_area {
        shape = shape.normalize_area(area)?;
    }
    if spec.point_clouds {
        shape = shape.to_cloud();
    }
    Ok((shape, seed))
}

/// Generate every shape, check spectral separation, and write the OFF files
/// plus `manifest.csv` into `out_dir`.
pub fn generate_dataset(spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<(Manifest, SpreadReport)> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let shape_dir = out_dir.join("shapes");
    fs::create_dir_all(&shape_dir).map_err(|e| Error::io(&shape_dir, e))?;

    let mut entries = Vec::new();
    let mut spectra: Vec<Vec<Vec<f64>>> = Vec::new();
    for (c, class) in spec.classes.iter().enumerate() {
        let n_test = ((spec.shapes_per_class as f64) * spec.test_fraction).round() as usize;
        let mut order: Vec<usize> = (0..spec.shapes_per_class).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("{}/split", class.name)));
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut is_test = vec![false; spec.shapes_per_class];
        for &i in &order[..n_test] {
            is_test[i] = true;
        }
        let mut class_spectra = Vec::new();
        for i in 0..spec.shapes_per_class {
            let (shape, seed) = generate_shape(spec, c, i)?;
            class_spectra.push(shape_spectrum(&shape)?);
            let rel = format!("shapes/{}.off", shape.id());
            save_surface(&shape, out_dir.join(&rel), MeshFormat::Off)?;
            entries.push(ManifestEntry {
                path: rel,
                id: shape.id().to_string(),
                label: class.name.clone(),
                split: if is_test[i] { Split::Test } else { Split::Train },
                seed,
            });
        }
        spectra.push(class_spectra);
    }
    let report = spread_report(&spectra);
    log::info!(
        "corpus spectral spread: within-class {:.4}, between-class {:.4}",
        report.within_class,
        report.between_class
    );
    if !(report.within_class < report.between_class) {
        return Err(Error::Numerical(format!(
            "classes are not spectrally separated: within-class spread {:.4} >= between-class {:.4}",
            report.within_class, report.between_class
        )));
    }
    let manifest = Manifest { entries };
    write_manifest(&manifest, out_dir.join(MANIFEST_FILE))?;
    Ok((manifest, report))
}

/// Scale-normalized spectrum `λ_j · area` used by the separation check, so
/// that the randomized uniform scale does not count as class spread.
fn shape_spectrum(shape: &Surface) -> Result<Vec<f64>> {
    let op = SpectralOperator::for_surface(shape, crate::geometry::DEFAULT_NEIGHBORS)?;
    let lap = op.laplacian(shape)?;
    let area: f64 = lap.mass.iter().sum();
    let d = crate::spectral::eigendecompose_with(lap, SPREAD_MODES, &EigenOptions::default())?;
    Ok(d.spectrum(SPREAD_MODES)?.values.iter().map(|v| v * area).collect())
}

fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm
}

fn mean_spectrum(spectra: &[Vec<f64>]) -> Vec<f64> {
    let k = spectra[0].len();
    (0..k).map(|j| spectra.iter().map(|s| s[j]).sum::<f64>() / spectra.len() as f64).collect()
}

fn spread_report(spectra: &[Vec<Vec<f64>>]) -> SpreadReport {
    let means: Vec<Vec<f64>> = spectra.iter().map(|c| mean_spectrum(c)).collect();
    let within_class = spectra
        .iter()
        .zip(&means)
        .map(|(c, m)| c.iter().map(|s| relative_l2(s, m)).sum::<f64>() / c.len() as f64)
        .fold(0.0, f64::max);
    let mut between_class = f64::INFINITY;
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            between_class = between_class.min(relative_l2(&means[a], &means[b]));
        }
    }
    SpreadReport {
        within_class,
        between_class,
    }
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for e in &manifest.entries {
        w.serialize(e).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let entries = r
        .deserialize()
        .collect::<std::result::Result<Vec<ManifestEntry>, _>>()
        .map_err(|e| csv_error(path, e))?;
    Ok(Manifest { entries })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Format(format!("{}: {e}", path.display())),
    }
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Class names in order of first appearance.
    pub fn class_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for e in &self.entries {
            if !names.contains(&e.label) {
                names.push(e.label.clone());
            }
        }
        names
    }
}

/// Load the shapes of a manifest entry list, resolving paths against `root`.
pub fn load_entries<'a>(root: &Path, entries: impl IntoIterator<Item = &'a ManifestEntry>) -> Result<Vec<Surface>> {
    entries
        .into_iter()
        .map(|e| {
            let path: PathBuf = root.join(&e.path);
            Ok(load_surface(&path, MeshFormat::Auto)?.with_id(e.id.clone()).with_label(e.label.clone()))
        })
        .collect()
}
