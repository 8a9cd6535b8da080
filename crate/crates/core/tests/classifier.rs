use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectral_adv::classifier::{
    decode_model, deserialize_model, encode_model, serialize_model, train, Architecture, ClassifierModel, Dense,
    InputNormalization, Logits, TrainConfig,
};
use spectral_adv::corpus::{default_classes, generate_shape, CorpusSpec};
use spectral_adv::geometry::{Surface, Vec3};

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

fn small_arch() -> Architecture {
    Architecture {
        point_widths: vec![3, 8, 16],
        head_widths: vec![16, 8],
    }
}

fn random_points(n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

/// Randomize biases too, so ReLU kinks are not all at the origin.
fn random_model(seed: u64, per_shape: bool) -> ClassifierModel {
    let mut m = ClassifierModel::new(&small_arch(), names(3), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for l in m.point_layers.iter_mut().chain(m.head_layers.iter_mut()) {
        l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
    }
    m.normalization = InputNormalization {
        per_shape,
        shift: [0.1, -0.2, 0.05],
        scale: [0.8, 1.3, 1.1],
    };
    m
}

#[test]
fn hand_computed_forward() {
    let model = ClassifierModel {
        point_layers: vec![Dense {
            weights: DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.5, 0.0, 2.0, -0.5]),
            bias: DVector::from_vec(vec![0.5, 1.0]),
        }],
        head_layers: vec![Dense {
            weights: DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.5, 0.25]),
            bias: DVector::from_vec(vec![0.1, -0.2]),
        }],
        class_names: names(2),
        normalization: InputNormalization::identity(),
    };
    // Point features: (1.5, 1) and (0.5, 2); pooled (1.5, 2).
    let pts = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 2.0)];
    let z = model.forward(&pts).unwrap().values;
    assert!((z[0] - -0.4).abs() < 1e-15 && (z[1] - 1.05).abs() < 1e-15, "{z:?}");
    assert_eq!(model.predict(&pts).unwrap(), 1);
}

#[test]
fn zero_weights_give_bias_and_no_gradient() {
    let mut m = ClassifierModel::new(&small_arch(), names(3), 1).unwrap();
    for l in m.point_layers.iter_mut().chain(m.head_layers.iter_mut()) {
        l.weights.fill(0.0);
        l.bias.fill(0.0);
    }
    m.head_layers.last_mut().unwrap().bias = DVector::from_vec(vec![0.5, -1.0, 2.0]);
    let pts = random_points(10, &mut ChaCha8Rng::seed_from_u64(2));
    assert_eq!(m.forward(&pts).unwrap().values, vec![0.5, -1.0, 2.0]);
    let (_, _, g) = m.input_gradient(&pts, |z| z.cross_entropy(0)).unwrap();
    assert!(g.iter().all(|v| v.norm() == 0.0));
}

#[test]
fn non_finite_input_rejected() {
    let m = random_model(3, true);
    let mut pts = random_points(5, &mut ChaCha8Rng::seed_from_u64(0));
    pts[2].y = f64::NAN;
    assert!(m.forward(&pts).is_err());
    assert!(m.forward(&[]).is_err());
}

fn fd_relative_error(model: &ClassifierModel, pts: &[Vec3], target: usize) -> f64 {
    let (_, _, g) = model.input_gradient(pts, |z| z.cross_entropy(target)).unwrap();
    let h = 1e-5;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..pts.len() {
        for d in 0..3 {
            let mut p = pts.to_vec();
            p[i][d] += h;
            let up = model.forward(&p).unwrap().cross_entropy(target).0;
            p[i][d] -= 2.0 * h;
            let down = model.forward(&p).unwrap().cross_entropy(target).0;
            let fd = (up - down) / (2.0 * h);
            num += (fd - g[i][d]).powi(2);
            den += g[i][d].powi(2);
        }
    }
    (num / den).sqrt()
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let model = random_model(100 + trial, trial % 4 != 0);
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let pts = random_points(12, &mut rng);
        worst = worst.max(fd_relative_error(&model, &pts, (trial % 3) as usize));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn softmax_sums_to_one() {
    let z = Logits { values: vec![300.0, -2.0, 0.5, 299.0] };
    assert!((z.softmax().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn permutation_symmetry(seed in 0u64..1000, n in 2usize..30) {
        let model = random_model(seed, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(n, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        perm.rotate_left(seed as usize % n);
        let permuted: Vec<Vec3> = perm.iter().map(|&i| pts[i]).collect();
        let (_, za, ga) = model.input_gradient(&pts, |z| z.cross_entropy(1)).unwrap();
        let (_, zb, gb) = model.input_gradient(&permuted, |z| z.cross_entropy(1)).unwrap();
        // Summation order changes, so compare to rounding level.
        for (a, b) in za.values.iter().zip(&zb.values) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((ga[i] - gb[k]).norm() <= 1e-12 * (1.0 + ga[i].norm()));
        }
    }

    #[test]
    fn softmax_is_a_distribution(v in proptest::collection::vec(-50.0f64..50.0, 2..8)) {
        let p = Logits { values: v }.softmax();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
    }
}

#[test]
fn exact_permutation_invariance_without_centering() {
    // Without per-shape normalization nothing is summed over points, so the
    // logits are bit-identical.
    let model = random_model(9, false);
    let pts = random_points(40, &mut ChaCha8Rng::seed_from_u64(9));
    let mut rev = pts.clone();
    rev.reverse();
    assert_eq!(model.forward(&pts).unwrap(), model.forward(&rev).unwrap());
    let (_, _, ga) = model.input_gradient(&pts, |z| z.cross_entropy(2)).unwrap();
    let (_, _, gb) = model.input_gradient(&rev, |z| z.cross_entropy(2)).unwrap();
    for i in 0..pts.len() {
        assert_eq!(ga[i], gb[pts.len() - 1 - i]);
    }
}

#[test]
fn serialization_round_trip() {
    let model = random_model(5, true);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    serialize_model(&model, &path).unwrap();
    let back = deserialize_model(&path).unwrap();
    assert_eq!(back, model);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let pts = random_points(16, &mut rng);
        assert_eq!(model.forward(&pts).unwrap(), back.forward(&pts).unwrap());
    }
}

#[test]
fn corrupt_files_rejected() {
    let bytes = encode_model(&random_model(6, true)).unwrap();
    let mut wrong_version = bytes.clone();
    wrong_version[8] = 99;
    let err = decode_model(&wrong_version).unwrap_err().to_string();
    assert!(err.contains("version"), "{err}");
    let err = decode_model(&bytes[..bytes.len() / 2]).unwrap_err().to_string();
    assert!(err.contains("checksum") || err.contains("truncated"), "{err}");
    let mut flipped = bytes.clone();
    flipped[100] ^= 1;
    assert!(decode_model(&flipped).is_err());
    assert!(decode_model(b"SPADV").is_err());
}

fn two_class_corpus(per_class: usize) -> (Vec<Surface>, Vec<Surface>) {
    let spec = CorpusSpec {
        classes: default_classes()[..2].to_vec(),
        shapes_per_class: per_class,
        min_vertices: 500,
        max_vertices: 700,
        seed: 21,
        ..CorpusSpec::default()
    };
    let mut train_set = Vec::new();
    let mut test_set = Vec::new();
    for c in 0..2 {
        for i in 0..per_class {
            let (s, _) = generate_shape(&spec, c, i).unwrap();
            if i % 4 == 3 { test_set.push(s) } else { train_set.push(s) }
        }
    }
    (train_set, test_set)
}

#[test]
fn training_separates_two_families_deterministically() {
    let (train_set, test_set) = two_class_corpus(8);
    let names: Vec<String> = default_classes()[..2].iter().map(|c| c.name.clone()).collect();
    let model = ClassifierModel::new(&Architecture::default(), names, 4).unwrap();
    let config = TrainConfig {
        epochs: 50,
        points_per_shape: 512,
        seed: 8,
        ..TrainConfig::default()
    };
    let (a, report) = train(&model, &train_set, &test_set, &config).unwrap();
    assert!(report.train_accuracy >= 0.95, "{report:?}");
    let (b, _) = train(&model, &train_set, &test_set, &config).unwrap();
    assert_eq!(a, b);

    // Rotation augmentation: accuracy on z-rotated test shapes tracks the
    // unrotated accuracy.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rotated: Vec<Surface> = test_set
        .iter()
        .map(|s| {
            let r = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), rng.gen_range(0.0..std::f64::consts::TAU));
            s.transform(r.matrix(), &Vec3::zeros(), 1.0).unwrap()
        })
        .collect();
    let plain = a.accuracy(&test_set).unwrap();
    let turned = a.accuracy(&rotated).unwrap();
    assert!((plain - turned).abs() <= 0.05 + 1e-12, "{plain} vs {turned}");
}

#[test]
fn training_rejects_thin_classes() {
    let (train_set, _) = two_class_corpus(4);
    let model = ClassifierModel::new(&Architecture::default(), names(3), 0).unwrap();
    assert!(train(&model, &train_set, &[], &TrainConfig::default()).is_err());
}
