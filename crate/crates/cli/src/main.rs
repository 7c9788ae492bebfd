mod commands;
mod config;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Mode;
use crate::dataset::Domain;

/// Conv-M toolkit: parameter audit, gradient checks, synthetic data and
/// domain-adaptation training.
#[derive(Parser, Debug)]
#[command(name = "convm", version)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Count parameters per layer and compare with the reference table.
    Audit(AuditArgs),
    /// Run the finite-difference gradient suite in float64.
    Gradcheck(GradcheckArgs),
    /// Generate the synthetic two-domain benchmark.
    MakeSynth(SynthArgs),
    /// Convert `<dir>/<class>/*.png` into a dataset directory.
    ImportImages(ImportArgs),
    /// Train on the source domain, or fine-tune with domain adaptation.
    Train(TrainArgs),
    /// Top-1 accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Dump the three branch outputs of one Conv-M layer.
    ExportFeatures(ExportArgs),
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    /// `reference`, `tiny`, or a TOML file describing the network.
    #[arg(long)]
    pub spec: Option<String>,
    /// Derive the group factor of every Conv-M row from its reference count.
    #[arg(long)]
    pub solve_groups: bool,
    /// Report counts only, without comparing to the reference table.
    #[arg(long)]
    pub no_reference: bool,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Run a single check.
    #[arg(long)]
    pub op: Option<String>,
    #[arg(long, default_value_t = 2)]
    pub dilation: usize,
    #[arg(long, default_value_t = 2)]
    pub groups: usize,
    #[arg(long, hide = true)]
    pub inject_sign_flip: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// `+`-separated subset of `hue`, `texture`, `affine`, or `none`.
    #[arg(long, default_value = "hue+texture+affine")]
    pub shift: String,
    #[arg(long, default_value_t = 150.0)]
    pub hue_degrees: f64,
}

#[derive(Args, Debug)]
pub struct ImportArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long, value_enum)]
    pub domain: Domain,
    #[arg(long, default_value_t = 32)]
    pub size: u32,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Checkpoint to fine-tune.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Dataset directory, replacing the in-memory synthetic benchmark.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Source,
    SourceTest,
    Target,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "target")]
    pub split: Split,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Layer number of a Conv-M module.
    #[arg(long)]
    pub layer: usize,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "target")]
    pub split: Split,
    /// Number of images to export.
    #[arg(long, default_value_t = 8)]
    pub count: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
