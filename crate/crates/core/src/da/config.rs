use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::NetworkSpec;
use crate::optim::SgdConfig;

/// Weights, taps, schedules and ablations of the adaptation objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DAConfig {
    pub mmd_weight: f64,
    /// Layer numbers whose outputs are aligned; empty means the last three
    /// Conv-M layers.
    pub mmd_layers: Vec<usize>,
    pub recon_weight: f64,
    /// Target share of each batch at the first and last step.
    pub ratio_start: f64,
    pub ratio_end: f64,
    /// Layer numbers with learning-rate multiplier 0; `None` means the stem
    /// convolution and the first three Conv-M layers.
    pub freeze: Option<Vec<usize>>,
    pub head_lr_multiplier: f64,
    pub head_hidden: usize,
    pub no_gmmd: bool,
    pub no_recons: bool,
}

impl Default for DAConfig {
    fn default() -> Self {
        DAConfig {
            mmd_weight: 0.3,
            mmd_layers: Vec::new(),
            recon_weight: 1.0,
            ratio_start: 0.3,
            ratio_end: 0.7,
            freeze: None,
            head_lr_multiplier: 10.0,
            head_hidden: 256,
            no_gmmd: false,
            no_recons: false,
        }
    }
}

impl DAConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mmd_weight >= 0.0 && self.recon_weight >= 0.0) {
            return Err(Error::Config(format!("loss weights must be ≥ 0 (mmd {}, recon {})", self.mmd_weight, self.recon_weight)));
        }
        if !(0.0 <= self.ratio_start && self.ratio_start <= self.ratio_end && self.ratio_end <= 1.0) {
            return Err(Error::Config(format!("need 0 ≤ start ≤ end ≤ 1, got {} → {}", self.ratio_start, self.ratio_end)));
        }
        if !(self.head_lr_multiplier >= 0.0) || self.head_hidden == 0 {
            return Err(Error::Config("head multiplier must be ≥ 0 and the hidden width positive".into()));
        }
        Ok(())
    }

    /// Whether any term needs target samples.
    pub fn uses_target(&self) -> bool {
        !(self.no_gmmd && self.no_recons)
    }

    pub fn taps(&self, spec: &NetworkSpec) -> Result<Vec<usize>> {
        if !self.mmd_layers.is_empty() {
            for &l in &self.mmd_layers {
                if spec.layer(l).is_none() {
                    return Err(Error::Config(format!("MMD tap {l} is not a layer")));
                }
            }
            return Ok(self.mmd_layers.clone());
        }
        let conv_m = spec.conv_m_indices();
        if conv_m.len() < 3 {
            return Err(Error::Config(format!("need three Conv-M layers to tap, found {}", conv_m.len())));
        }
        Ok(conv_m[conv_m.len() - 3..].to_vec())
    }

    pub fn frozen_layers(&self, spec: &NetworkSpec) -> Vec<usize> {
        match &self.freeze {
            Some(f) => f.clone(),
            None => {
                let stem = spec.indices_where(|k| matches!(k, crate::layers::LayerKind::Conv { .. }));
                stem.into_iter().take(1).chain(spec.conv_m_indices().into_iter().take(3)).collect()
            }
        }
    }
}

/// Poly schedule and momentum SGD settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub base_lr: f64,
    pub power: f64,
    pub max_steps: usize,
    pub batch: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub sgd: SgdConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { base_lr: 0.0009, power: 0.5, max_steps: 2000, batch: 64, seed: 0, sgd: SgdConfig::default() }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_lr < 0.0 || self.max_steps == 0 || self.batch == 0 {
            return Err(Error::Config("base_lr must be ≥ 0, max_steps and batch positive".into()));
        }
        Ok(())
    }
}
