use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};
use spectral_adv::attack::{run_pershape_attack, run_universal_attack, UniversalPerturbation};
use spectral_adv::classifier::{deserialize_model, serialize_model, train, Architecture, ClassifierModel};
use spectral_adv::corpus::{generate_dataset, load_entries, read_manifest, Manifest, ManifestEntry, Split, MANIFEST_FILE};
use spectral_adv::geometry::io::{load_surface, save_surface, MeshFormat};
use spectral_adv::geometry::Surface;
use spectral_adv::metrics::{curvature_distortion, evaluate_attack, l2_displacement, success_rate, MetricReport};
use spectral_adv::seed::derive_seed;
use spectral_adv::synthesis::generalize;

use crate::bundle::{attack_entries, generalization_entry, BundleKind, ResultBundle, ShapeEntry, BUNDLE_VERSION, SHAPE_DIR};
use crate::config::{Command, RunConfig};
use crate::error::CliError;
use crate::export::export_report;
use crate::readme::run_readme;

pub const CONFIG_FILE: &str = "config.toml";
pub const README_FILE: &str = "README.md";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const SPREAD_FILE: &str = "spread.json";
pub const EVALUATION_FILE: &str = "evaluation.json";

/// Dispatch one command against a resolved configuration.
pub fn run_command(config: &RunConfig, command: Command) -> Result<(), CliError> {
    let start = Instant::now();
    match command {
        Command::GenCorpus => gen_corpus(config),
        Command::Train => train_classifier(config),
        Command::Attack => attack(config, false),
        Command::AttackPershape => attack(config, true),
        Command::Generalize => generalize_rho(config),
        Command::Evaluate => evaluate(config),
        Command::Export => export(config),
    }?;
    log::info!("{} finished in {:.1} s", command.name(), start.elapsed().as_secs_f64());
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write(path, s)
}

/// Create the run directory and echo the resolved config and layout README.
fn open_run_dir(dir: &Path, config: &RunConfig, command: Command) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    write(&dir.join(CONFIG_FILE), config.to_toml())?;
    write(&dir.join(README_FILE), run_readme(command))
}

fn load_manifest(corpus: &Path) -> Result<Manifest, CliError> {
    let path = corpus.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(CliError::input(format!("no manifest at {}", path.display())));
    }
    Ok(read_manifest(&path)?)
}

fn load_model(path: &Path) -> Result<(ClassifierModel, String), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("model {}: {e}", path.display())))?;
    let model = deserialize_model(path)?;
    Ok((model, hex(&Sha256::digest(&bytes))))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Apply the `[select]` block. Ids in `exclude` are never selected.
fn select<'a>(manifest: &'a Manifest, config: &RunConfig, exclude: &[String]) -> Result<Vec<&'a ManifestEntry>, CliError> {
    let s = &config.select;
    let mut chosen: Vec<&ManifestEntry> = if s.ids.is_empty() {
        manifest
            .entries
            .iter()
            .filter(|e| e.split == s.split && s.label.as_ref().map_or(true, |l| *l == e.label))
            .collect()
    } else {
        let mut out = Vec::new();
        for id in &s.ids {
            out.push(
                manifest
                    .entries
                    .iter()
                    .find(|e| e.id == *id)
                    .ok_or_else(|| CliError::input(format!("select.ids: '{id}' is not in the manifest")))?,
            );
        }
        out
    };
    chosen.retain(|e| !exclude.contains(&e.id));
    if let Some(limit) = s.limit {
        chosen.truncate(limit);
    }
    if chosen.is_empty() {
        return Err(CliError::input("the selection matched no shapes"));
    }
    Ok(chosen)
}

fn save_shapes(run_dir: &Path, shapes: &[Surface]) -> Result<(), CliError> {
    let dir = run_dir.join(SHAPE_DIR);
    fs::create_dir_all(&dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    for s in shapes {
        save_surface(s, dir.join(format!("{}.off", s.id())), MeshFormat::Off)?;
    }
    Ok(())
}

fn gen_corpus(config: &RunConfig) -> Result<(), CliError> {
    let dir = &config.paths.corpus;
    open_run_dir(dir, config, Command::GenCorpus)?;
    let (manifest, spread) = generate_dataset(&config.corpus, dir)?;
    write_json(&dir.join(SPREAD_FILE), &spread)?;
    log::info!("wrote {} shapes to {}", manifest.entries.len(), dir.display());
    Ok(())
}

fn train_classifier(config: &RunConfig) -> Result<(), CliError> {
    let manifest = load_manifest(&config.paths.corpus)?;
    let run_dir = &config.paths.output;
    open_run_dir(run_dir, config, Command::Train)?;
    let train_set = load_entries(&config.paths.corpus, manifest.split(Split::Train))?;
    let test_set = load_entries(&config.paths.corpus, manifest.split(Split::Test))?;
    let init = derive_seed(config.train.seed, "init");
    let model = ClassifierModel::new(&Architecture::default(), manifest.class_names(), init)?;
    let (model, report) = train(&model, &train_set, &test_set, &config.train)?;
    log::info!(
        "train accuracy {:.3}, test accuracy {}",
        report.train_accuracy,
        report.test_accuracy.map_or("n/a".into(), |a| format!("{a:.3}"))
    );
    if let Some(parent) = config.paths.model.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::input(format!("{}: {e}", parent.display())))?;
    }
    serialize_model(&model, &config.paths.model)?;
    write_json(&run_dir.join(TRAIN_REPORT_FILE), &report)
}

fn attack(config: &RunConfig, pershape: bool) -> Result<(), CliError> {
    let manifest = load_manifest(&config.paths.corpus)?;
    let entries = select(&manifest, config, &[])?;
    let shapes = load_entries(&config.paths.corpus, entries.iter().copied())?;
    let sources: Vec<String> = entries.iter().map(|e| e.path.clone()).collect();
    let (model, sha) = load_model(&config.paths.model)?;
    let command = if pershape { Command::AttackPershape } else { Command::Attack };
    let run_dir = &config.paths.output;
    open_run_dir(run_dir, config, command)?;
    log::info!("{} on {} shapes", command.name(), shapes.len());

    let bundle = if pershape {
        let results = run_pershape_attack(&shapes, &model, &config.attack)?;
        let mut entries = Vec::new();
        for (r, source) in results.iter().zip(&sources) {
            save_shapes(run_dir, &r.deformed)?;
            entries.extend(attack_entries(r, std::slice::from_ref(source), true));
        }
        let fooled: Vec<bool> = entries.iter().map(|e| e.fooled).collect();
        ResultBundle {
            version: BUNDLE_VERSION,
            kind: BundleKind::Pershape,
            seed: config.seed,
            model_sha256: sha,
            class_names: model.class_names.clone(),
            rho: None,
            success_rate: success_rate(&fooled)?,
            attack: Some(config.attack.clone()),
            synthesis: None,
            trace: Vec::new(),
            shapes: entries,
        }
    } else {
        let result = run_universal_attack(&shapes, &model, &config.attack)?;
        save_shapes(run_dir, &result.deformed)?;
        ResultBundle {
            version: BUNDLE_VERSION,
            kind: BundleKind::Universal,
            seed: config.seed,
            model_sha256: sha,
            class_names: model.class_names.clone(),
            rho: Some(result.rho.rho.clone()),
            success_rate: result.success_rate,
            attack: Some(config.attack.clone()),
            synthesis: None,
            shapes: attack_entries(&result, &sources, false),
            trace: result.trace,
        }
    };
    log::info!("success rate {:.1}%", bundle.success_rate);
    bundle.write(run_dir)?;
    Ok(())
}

fn bundle_path(config: &RunConfig) -> &Path {
    config.paths.bundle.as_deref().expect("checked when the config was resolved")
}

/// Commands that read a bundle must not write into the run that produced it.
fn ensure_distinct(output: &Path, bundle_dir: &Path) -> Result<(), CliError> {
    let same = match (output.canonicalize(), bundle_dir.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(CliError::config(format!(
            "paths.output {} is the bundle's own run directory",
            output.display()
        )));
    }
    Ok(())
}

fn warn_on_model_mismatch(bundle: &ResultBundle, sha: &str) {
    if bundle.model_sha256 != sha {
        log::warn!("the classifier differs from the one the bundle was produced with");
    }
}

fn generalize_rho(config: &RunConfig) -> Result<(), CliError> {
    let (source, source_dir) = ResultBundle::read(bundle_path(config))?;
    ensure_distinct(&config.paths.output, &source_dir)?;
    let rho = source
        .rho
        .clone()
        .ok_or_else(|| CliError::precondition("a per-shape bundle has no shared rho to transfer"))?;
    if rho.len() != config.synthesis.k {
        return Err(CliError::config(format!(
            "synthesis.k = {} but the bundle's rho has {} entries",
            config.synthesis.k,
            rho.len()
        )));
    }
    let manifest = load_manifest(&config.paths.corpus)?;
    let attacked: Vec<String> = source.shapes.iter().map(|s| s.id.clone()).collect();
    let entries = select(&manifest, config, &attacked)?;
    let shapes = load_entries(&config.paths.corpus, entries.iter().copied())?;
    let (model, sha) = load_model(&config.paths.model)?;
    warn_on_model_mismatch(&source, &sha);
    let run_dir = &config.paths.output;
    open_run_dir(run_dir, config, Command::Generalize)?;
    log::info!("transferring rho to {} unseen shapes", shapes.len());

    let records = generalize(&shapes, &UniversalPerturbation::new(rho.clone())?, &model, &config.synthesis)?;
    let mut out = Vec::new();
    let mut deformed = Vec::new();
    for ((record, shape), entry) in records.iter().zip(&shapes).zip(&entries) {
        let d = record.synthesis.deformed.clone().expect("synthesis returns geometry");
        let curvature = if d.is_mesh() { Some(curvature_distortion(shape, &d)?) } else { None };
        out.push(generalization_entry(record, &entry.path, &rho, curvature, l2_displacement(shape, &d)?));
        deformed.push(d);
    }
    save_shapes(run_dir, &deformed)?;
    let fooled: Vec<bool> = out.iter().map(|e| e.fooled).collect();
    let bundle = ResultBundle {
        version: BUNDLE_VERSION,
        kind: BundleKind::Generalization,
        seed: config.seed,
        model_sha256: sha,
        class_names: model.class_names.clone(),
        rho: Some(rho),
        success_rate: success_rate(&fooled)?,
        attack: None,
        synthesis: Some(config.synthesis.clone()),
        trace: Vec::new(),
        shapes: out,
    };
    log::info!("generalization success rate {:.1}%", bundle.success_rate);
    bundle.write(run_dir)?;
    Ok(())
}

/// Metrics recomputed from the stored geometry.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Evaluation {
    pub report: MetricReport,
    /// Success rate the producing run recorded.
    pub stored_success_rate: f64,
    /// True when every recomputed fooled flag matches the stored one.
    pub flags_agree: bool,
}

fn load_pair(corpus: &Path, run_dir: &Path, s: &ShapeEntry) -> Result<(Surface, Surface), CliError> {
    let original = load_surface(corpus.join(&s.source), MeshFormat::Auto)?.with_id(s.id.clone());
    let deformed_path: PathBuf = run_dir.join(&s.deformed);
    let deformed = load_surface(&deformed_path, MeshFormat::Auto)?.with_id(s.id.clone());
    Ok((original, deformed))
}

fn evaluate(config: &RunConfig) -> Result<(), CliError> {
    let (bundle, bundle_dir) = ResultBundle::read(bundle_path(config))?;
    ensure_distinct(&config.paths.output, &bundle_dir)?;
    let (model, sha) = load_model(&config.paths.model)?;
    warn_on_model_mismatch(&bundle, &sha);
    let mut originals = Vec::new();
    let mut perturbed = Vec::new();
    for s in &bundle.shapes {
        let (o, p) = load_pair(&config.paths.corpus, &bundle_dir, s)?;
        originals.push(o);
        perturbed.push(p);
    }
    let errors: Vec<f64> = bundle.shapes.iter().map(|s| s.alignment_error).collect();
    let report = evaluate_attack(&originals, &perturbed, &model, Some(&errors))?;
    let flags_agree = report.shapes.iter().zip(&bundle.shapes).all(|(r, s)| r.fooled == s.fooled);
    if !flags_agree {
        log::warn!("recomputed fooled flags differ from the stored ones");
    }
    log::info!("recomputed success rate {:.1}% (stored {:.1}%)", report.success_rate, bundle.success_rate);
    let run_dir = &config.paths.output;
    open_run_dir(run_dir, config, Command::Evaluate)?;
    write_json(
        &run_dir.join(EVALUATION_FILE),
        &Evaluation {
            report,
            stored_success_rate: bundle.success_rate,
            flags_agree,
        },
    )
}

fn export(config: &RunConfig) -> Result<(), CliError> {
    let (bundle, bundle_dir) = ResultBundle::read(bundle_path(config))?;
    ensure_distinct(&config.paths.output, &bundle_dir)?;
    let run_dir = &config.paths.output;
    open_run_dir(run_dir, config, Command::Export)?;
    let files = export_report(&bundle, config.export.format, run_dir)?;
    for f in files {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}
