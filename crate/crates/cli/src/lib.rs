//! Batch driver for the spectral attack pipeline.
//!
//! Configuration is resolved as defaults, then the TOML file, then `--set`
//! overrides, then the named flags.

pub mod bundle;
pub mod commands;
pub mod config;
pub mod error;
pub mod export;
mod readme;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::run_command;
pub use config::{parse_config, Command, Override, RunConfig};
pub use error::{CliError, ErrorKind};

#[derive(Debug, Parser)]
#[command(name = "spectral-adv", version, about = "Universal adversarial perturbations in the Laplace-Beltrami spectral domain")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    pub verbosity: Option<String>,
    /// Corpus directory (holds manifest.csv).
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Classifier file.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Run directory to write.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Result bundle (or run directory) to read.
    #[arg(long, global = true)]
    pub bundle: Option<PathBuf>,
    /// Override any config key, e.g. `--set attack.margin=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Args, Default)]
pub struct SelectArgs {
    /// train or test.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub label: Option<String>,
    /// Comma-separated shape ids; overrides split and label.
    #[arg(long, value_delimiter = ',')]
    pub ids: Vec<String>,
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct AttackArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Drop the spectral term (penalty only).
    #[arg(long)]
    pub no_spectral_term: bool,
    #[command(flatten)]
    pub select: SelectArgs,
}

#[derive(Debug, Args, Default)]
pub struct SynthesisArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[command(flatten)]
    pub select: SelectArgs,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Generate the synthetic corpus into the corpus directory.
    GenCorpus {
        #[arg(long)]
        shapes_per_class: Option<usize>,
        /// Write point clouds instead of meshes.
        #[arg(long)]
        point_clouds: bool,
        /// Rescale every mesh to this total surface area.
        #[arg(long)]
        normalize_area: Option<f64>,
    },
    /// Train the point-cloud classifier on the corpus training split.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// One shared perturbation for all selected shapes.
    Attack(AttackArgs),
    /// An independent attack per selected shape.
    AttackPershape(AttackArgs),
    /// Transfer a bundle's shared perturbation to unseen shapes.
    Generalize(SynthesisArgs),
    /// Recompute a bundle's metrics from its geometry.
    Evaluate,
    /// Write plot-ready CSV or JSON from a bundle.
    Export {
        /// csv or json.
        #[arg(long)]
        format: Option<String>,
    },
}

fn push<T: Into<toml::Value>>(out: &mut Vec<Override>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        out.push(Override::new(key, v));
    }
}

fn path_value(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.to_string_lossy().into_owned())
}

fn as_int(v: Option<impl TryInto<i64>>, key: &str) -> Result<Option<i64>, CliError> {
    v.map(|x| x.try_into().map_err(|_| CliError::config(format!("{key} is out of range"))))
        .transpose()
}

fn select_overrides(out: &mut Vec<Override>, s: &SelectArgs) -> Result<(), CliError> {
    push(out, "select.split", s.split.clone());
    push(out, "select.label", s.label.clone());
    if !s.ids.is_empty() {
        out.push(Override::new("select.ids", toml::Value::Array(s.ids.iter().cloned().map(toml::Value::String).collect())));
    }
    push(out, "select.limit", as_int(s.limit, "--limit")?);
    Ok(())
}

impl Cli {
    pub fn command(&self) -> Command {
        match self.command {
            CliCommand::GenCorpus { .. } => Command::GenCorpus,
            CliCommand::Train { .. } => Command::Train,
            CliCommand::Attack(_) => Command::Attack,
            CliCommand::AttackPershape(_) => Command::AttackPershape,
            CliCommand::Generalize(_) => Command::Generalize,
            CliCommand::Evaluate => Command::Evaluate,
            CliCommand::Export { .. } => Command::Export,
        }
    }

    /// `--set` overrides in order, then the named flags.
    pub fn overrides(&self) -> Result<Vec<Override>, CliError> {
        let c = &self.common;
        let mut out = c.set.iter().map(|s| Override::parse(s)).collect::<Result<Vec<_>, _>>()?;
        push(&mut out, "seed", as_int(c.seed, "--seed")?);
        push(&mut out, "verbosity", c.verbosity.clone());
        push(&mut out, "paths.corpus", path_value(&c.corpus));
        push(&mut out, "paths.model", path_value(&c.model));
        push(&mut out, "paths.output", path_value(&c.output));
        push(&mut out, "paths.bundle", path_value(&c.bundle));
        match &self.command {
            CliCommand::GenCorpus {
                shapes_per_class,
                point_clouds,
                normalize_area,
            } => {
                push(&mut out, "corpus.shapes_per_class", as_int(*shapes_per_class, "--shapes-per-class")?);
                push(&mut out, "corpus.point_clouds", point_clouds.then_some(true));
                push(&mut out, "corpus.normalize_area", *normalize_area);
            }
            CliCommand::Train { epochs } => push(&mut out, "train.epochs", as_int(*epochs, "--epochs")?),
            CliCommand::Attack(a) | CliCommand::AttackPershape(a) => {
                push(&mut out, "attack.k", as_int(a.k, "--k")?);
                push(&mut out, "attack.b", as_int(a.b, "--b")?);
                push(&mut out, "attack.c", a.c);
                push(&mut out, "attack.margin", a.margin);
                push(&mut out, "attack.iterations", as_int(a.iterations, "--iterations")?);
                push(&mut out, "attack.spectral_term", a.no_spectral_term.then_some(false));
                select_overrides(&mut out, &a.select)?;
            }
            CliCommand::Generalize(s) => {
                push(&mut out, "synthesis.k", as_int(s.k, "--k")?);
                push(&mut out, "synthesis.b", as_int(s.b, "--b")?);
                push(&mut out, "synthesis.iterations", as_int(s.iterations, "--iterations")?);
                select_overrides(&mut out, &s.select)?;
            }
            CliCommand::Evaluate => {}
            CliCommand::Export { format } => push(&mut out, "export.format", format.clone()),
        }
        Ok(out)
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        parse_config(self.common.config.as_deref(), &self.overrides()?, self.command())
    }
}

/// Resolve the configuration and run the command.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = cli.resolve()?;
    log::set_max_level(config.verbosity.level());
    run_command(&config, cli.command())
}
