use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectral_adv::attack::{spectral_alignment_loss, ShapeCoefficients, UniversalPerturbation};
use spectral_adv::classifier::{Architecture, ClassifierModel};
use spectral_adv::corpus::{default_classes, make_base_shape};
use spectral_adv::geometry::{apply_displacement, cotangent_laplacian, Surface};
use spectral_adv::spectral::{eigendecompose, SpectrumSlice};
use spectral_adv::synthesis::{alignment_error, generalize, synthesize_from_spectrum, SynthesisConfig};

fn config() -> SynthesisConfig {
    SynthesisConfig {
        k: 10,
        b: 8,
        iterations: 300,
        learning_rate: 5e-3,
        ..SynthesisConfig::default()
    }
}

fn base(class: usize, seed: u64) -> Surface {
    make_base_shape(&default_classes()[class], 450, seed).unwrap()
}

/// A perturbation that some smooth deformation realizes exactly, and that
/// deformation.
fn realizable(shape: &Surface, cfg: &SynthesisConfig, seed: u64) -> (UniversalPerturbation, Surface) {
    let d = eigendecompose(cotangent_laplacian(shape).unwrap(), cfg.k.max(cfg.b) + 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = DMatrix::from_fn(cfg.b, 3, |r, _| if r == 0 { 0.0 } else { rng.gen_range(-0.04..0.04) });
    let target = apply_displacement(shape, &d.basis(cfg.b).unwrap(), &alpha).unwrap();
    let d2 = eigendecompose(cotangent_laplacian(&target).unwrap(), cfg.k + 1).unwrap();
    let sigma = d.spectrum(cfg.k).unwrap().values;
    let sigma2 = d2.spectrum(cfg.k).unwrap().values;
    let rho = sigma.iter().zip(&sigma2).map(|(a, b)| b / a - 1.0).collect();
    (UniversalPerturbation::new(rho).unwrap(), target)
}

fn mean_distance(a: &Surface, b: &Surface) -> f64 {
    a.vertices().iter().zip(b.vertices()).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.n_vertices() as f64
}

#[test]
fn zero_perturbation_is_stationary() {
    let s = base(0, 1);
    let r = synthesize_from_spectrum(&s, &UniversalPerturbation::zeros(10), &config()).unwrap();
    assert!(r.alpha.alpha.iter().flatten().all(|v| *v == 0.0));
    assert_eq!(r.deformed.unwrap().vertices(), s.vertices());
    assert!(r.converged);
}

#[test]
fn recovers_a_realizable_deformation() {
    let cfg = config();
    let s = base(1, 2);
    let (rho, target) = realizable(&s, &cfg, 3);
    let r = synthesize_from_spectrum(&s, &rho, &cfg).unwrap();
    assert!(r.trace.iter().all(|e| e.is_finite()));
    assert!(
        r.final_alignment_error <= 0.1 * r.initial_alignment_error,
        "{} vs {}",
        r.final_alignment_error,
        r.initial_alignment_error
    );
    let deformed = r.deformed.as_ref().unwrap();
    let dist = mean_distance(deformed, &target);
    assert!(dist < 0.05 * s.bbox_diagonal(), "{dist}");

    // The deformation stays in the shape's own eigenbasis.
    let d = eigendecompose(cotangent_laplacian(&s).unwrap(), cfg.k.max(cfg.b) + 1).unwrap();
    let basis = d.basis(cfg.b).unwrap();
    let mass = &d.laplacian().mass;
    let disp = DMatrix::from_fn(s.n_vertices(), 3, |i, c| deformed.vertices()[i][c] - s.vertices()[i][c]);
    let md = DMatrix::from_fn(disp.nrows(), 3, |i, c| mass[i] * disp[(i, c)]);
    let residual = (&disp - &basis * basis.tr_mul(&md)).norm() / disp.norm();
    assert!(residual < 1e-10, "{residual}");

    // Alignment error is the root of the alignment loss.
    let err = alignment_error(&s, &rho, &r.alpha, cfg.k).unwrap();
    assert!((err - r.final_alignment_error).abs() < 1e-12 * err.max(1.0));
    let loss = spectral_alignment_loss(
        &SpectrumSlice::new(r.sigma_original.clone()).unwrap(),
        &rho,
        &SpectrumSlice::new(r.sigma_deformed.clone()).unwrap(),
    )
    .unwrap();
    assert!((loss.sqrt() - err).abs() < 1e-12 * err.max(1.0));
}

#[test]
fn inverse_perturbation_undoes_the_forward_run() {
    // Both runs need to get near their floor for the comparison to mean much.
    let cfg = SynthesisConfig {
        iterations: 2500,
        ..config()
    };
    let s = base(2, 4);
    let (rho, _) = realizable(&s, &cfg, 5);
    let forward = synthesize_from_spectrum(&s, &rho, &cfg).unwrap();
    let inverse = UniversalPerturbation::new(rho.rho.iter().map(|r| -r / (1.0 + r)).collect()).unwrap();
    let back = synthesize_from_spectrum(forward.deformed.as_ref().unwrap(), &inverse, &cfg).unwrap();
    assert!(
        back.final_alignment_error <= 2.0 * forward.final_alignment_error.max(cfg.tolerance * norm(&forward.sigma_original)),
        "{} vs {}",
        back.final_alignment_error,
        forward.final_alignment_error
    );
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn classifier_does_not_steer_synthesis() {
    let cfg = SynthesisConfig {
        iterations: 20,
        ..config()
    };
    let s = base(0, 6);
    let (rho, _) = realizable(&s, &cfg, 7);
    let arch = Architecture {
        point_widths: vec![3, 8],
        head_widths: vec![8],
    };
    let names = vec!["x".to_string(), "y".to_string()];
    let m1 = ClassifierModel::new(&arch, names.clone(), 1).unwrap();
    let m2 = ClassifierModel::new(&arch, names, 2).unwrap();
    let plain = synthesize_from_spectrum(&s, &rho, &cfg).unwrap();
    let a = generalize(std::slice::from_ref(&s), &rho, &m1, &cfg).unwrap();
    let b = generalize(std::slice::from_ref(&s), &rho, &m2, &cfg).unwrap();
    assert_eq!(a[0].synthesis.alpha, plain.alpha);
    assert_eq!(b[0].synthesis.alpha, plain.alpha);
}

#[test]
fn bad_inputs_rejected() {
    let s = base(0, 8);
    assert!(synthesize_from_spectrum(&s, &UniversalPerturbation::zeros(3), &config()).is_err());
    let bad = SynthesisConfig { b: 0, ..config() };
    let err = synthesize_from_spectrum(&s, &UniversalPerturbation::zeros(10), &bad).unwrap_err().to_string();
    assert!(err.contains("synthesis.b"), "{err}");
    assert!(alignment_error(&s, &UniversalPerturbation::zeros(10), &ShapeCoefficients::zeros(4), 12).is_err());
}
