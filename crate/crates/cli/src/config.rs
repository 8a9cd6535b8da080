//! Run configuration: TOML file, then `--set`/flag overrides, then defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spectral_adv::attack::AttackConfig;
use spectral_adv::classifier::TrainConfig;
use spectral_adv::corpus::{CorpusSpec, Split};
use spectral_adv::seed::derive_seed;
use spectral_adv::synthesis::SynthesisConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verbosity {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl Verbosity {
    pub fn level(self) -> log::LevelFilter {
        match self {
            Verbosity::Error => log::LevelFilter::Error,
            Verbosity::Warn => log::LevelFilter::Warn,
            Verbosity::Info => log::LevelFilter::Info,
            Verbosity::Debug => log::LevelFilter::Debug,
            Verbosity::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Corpus directory holding `manifest.csv`.
    pub corpus: PathBuf,
    pub model: PathBuf,
    /// Run directory written by the command.
    pub output: PathBuf,
    /// Result bundle read by generalize, evaluate and export. A run directory
    /// is accepted too.
    pub bundle: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "corpus".into(),
            model: "model.bin".into(),
            output: "run".into(),
            bundle: None,
        }
    }
}

/// Which manifest shapes a command works on. Shapes are taken in manifest
/// order after filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Selection {
    pub split: Split,
    /// Only shapes with this ground-truth label.
    pub label: Option<String>,
    /// Explicit ids; when nonempty, split and label are ignored.
    pub ids: Vec<String>,
    pub limit: Option<usize>,
}

impl Default for Selection {
    fn default() -> Self {
        Self {
            split: Split::Test,
            label: None,
            ids: Vec::new(),
            limit: Some(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSection {
    pub format: ExportFormat,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self { format: ExportFormat::Csv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// The one seed every random stream is derived from.
    pub seed: u64,
    pub verbosity: Verbosity,
    pub paths: Paths,
    pub select: Selection,
    pub corpus: CorpusSpec,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub synthesis: SynthesisConfig,
    pub export: ExportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            verbosity: Verbosity::Info,
            paths: Paths::default(),
            select: Selection::default(),
            corpus: CorpusSpec::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            synthesis: SynthesisConfig::default(),
            export: ExportSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenCorpus,
    Train,
    Attack,
    AttackPershape,
    Generalize,
    Evaluate,
    Export,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenCorpus => "gen-corpus",
            Command::Train => "train",
            Command::Attack => "attack",
            Command::AttackPershape => "attack-pershape",
            Command::Generalize => "generalize",
            Command::Evaluate => "evaluate",
            Command::Export => "export",
        }
    }
}

/// One `section.key = value` override. The value is parsed as a TOML value,
/// falling back to a plain string.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub key: String,
    pub value: toml::Value,
}

impl Override {
    pub fn new(key: impl Into<String>, value: impl Into<toml::Value>) -> Self {
        Self {
            key: key.into(),
            value: value.into(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let (key, raw) = text
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("override '{text}' is not of the form key=value")))?;
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        Ok(Self::new(key.trim(), value))
    }
}

fn apply(table: &mut toml::Table, o: &Override) -> Result<(), CliError> {
    let mut parts: Vec<&str> = o.key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| CliError::config(format!("empty key in override '{}'", o.key)))?;
    let mut node = table;
    for p in parts {
        let entry = node.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override '{}': '{p}' is not a section", o.key)))?;
    }
    node.insert(last.to_string(), o.value.clone());
    Ok(())
}

/// Read the file (if any), apply overrides in order, fill defaults, fan out
/// the seed and validate what `command` needs.
pub fn parse_config(file: Option<&Path>, overrides: &[Override], command: Command) -> Result<RunConfig, CliError> {
    let mut table = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply(&mut table, o)?;
    }
    let mut config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::config(e.to_string()))?;
    config.fan_out_seed();
    config.validate(command)?;
    Ok(config)
}

impl RunConfig {
    /// Block seeds always come from the global seed, so a run directory's
    /// echoed config reproduces the run by itself. Derived seeds are cut to
    /// 63 bits because TOML integers are signed.
    pub fn fan_out_seed(&mut self) {
        let derived = [
            ("corpus", &mut self.corpus.seed),
            ("train", &mut self.train.seed),
            ("attack", &mut self.attack.seed),
            ("synthesis", &mut self.synthesis.seed),
        ];
        for (name, slot) in derived {
            let seed = derive_seed(self.seed, name) & i64::MAX as u64;
            if *slot != 0 && *slot != seed {
                log::warn!("{name}.seed = {slot} is replaced by the value derived from the global seed");
            }
            *slot = seed;
        }
    }

    pub fn validate(&self, command: Command) -> Result<(), CliError> {
        let check = |r: spectral_adv::Result<()>| r.map_err(|e| CliError::config(e.to_string()));
        match command {
            Command::GenCorpus => check(self.corpus.validate())?,
            Command::Train => check(self.train.validate())?,
            Command::Attack | Command::AttackPershape => {
                check(self.attack.validate())?;
                self.validate_selection()?;
            }
            Command::Generalize => {
                check(self.synthesis.validate())?;
                self.validate_selection()?;
                self.require_bundle()?;
            }
            Command::Evaluate | Command::Export => {
                self.require_bundle()?;
            }
        }
        Ok(())
    }

    fn validate_selection(&self) -> Result<(), CliError> {
        if self.select.limit == Some(0) {
            return Err(CliError::config("select.limit must be ≥ 1"));
        }
        Ok(())
    }

    fn require_bundle(&self) -> Result<(), CliError> {
        if self.paths.bundle.is_none() {
            return Err(CliError::config("paths.bundle is required for this command"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is representable in TOML")
    }
}
