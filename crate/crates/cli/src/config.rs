use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use convm::da::{DAConfig, SolverConfig};
use convm::layers::{LayerKind, NetworkSpec};
use convm::synth::SynthConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Supervised classification on the labelled source domain.
    #[serde(alias = "pretrain")]
    #[value(alias = "pretrain")]
    SourceOnly,
    /// Fine-tuning from `init` with the adaptation objective; the `da`
    /// ablation flags select which terms are active.
    Da,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedNetwork {
    Reference,
    Tiny,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkChoice {
    Named(NamedNetwork),
    Inline(NetworkSpec),
}

impl NetworkChoice {
    /// The spec with its final linear layer sized to `classes`.
    pub fn resolve(&self, classes: usize) -> NetworkSpec {
        let mut spec = match self {
            NetworkChoice::Named(NamedNetwork::Reference) => NetworkSpec::reference(),
            NetworkChoice::Named(NamedNetwork::Tiny) => NetworkSpec::tiny(classes),
            NetworkChoice::Inline(spec) => spec.clone(),
        };
        if let Some(LayerKind::Linear { out_features }) = spec.layers.last_mut().map(|l| &mut l.kind) {
            *out_features = classes;
        }
        spec
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory written by `make-synth` or `import-images`; when absent the
    /// synthetic benchmark is generated in memory from `synth`.
    pub dir: Option<PathBuf>,
    pub synth: SynthConfig,
    /// Every `holdout`-th source image of each class is kept for testing.
    pub holdout: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { dir: None, synth: SynthConfig::default(), holdout: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub network: NetworkChoice,
    /// Checkpoint to start from; required by the fine-tuning modes.
    pub init: Option<PathBuf>,
    pub out: PathBuf,
    pub eval_batch: usize,
    pub data: DataConfig,
    pub solver: SolverConfig,
    pub da: DAConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::SourceOnly,
            network: NetworkChoice::Named(NamedNetwork::Tiny),
            init: None,
            out: PathBuf::from("runs/latest"),
            eval_batch: 256,
            data: DataConfig::default(),
            solver: SolverConfig::default(),
            da: DAConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.da.validate()?;
        if self.data.holdout < 2 {
            bail!("data.holdout must be at least 2");
        }
        if self.mode == Mode::Da && self.init.is_none() {
            bail!("mode da fine-tunes an existing model; set `init` to a source-only checkpoint");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}
