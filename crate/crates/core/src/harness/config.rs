//! Run configuration file.
//!
//! TOML with one table per section; every key is optional. Example:
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! preset = "tiny"
//! model_dim = 32
//! num_heads = 4
//!
//! [loss]
//! lambda = 0.5
//!
//! [schedule]
//! stage_rates = [6e-5, 6e-6, 6e-7]
//! stage_fractions = [0.6, 0.3, 0.1]
//!
//! [data]
//! num_samples = 20
//! vocab_size = 5
//!
//! [train]
//! steps = 2000
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bench::BenchConfig;
use super::data::DatasetSpec;
use super::gradcheck::GradcheckConfig;
use super::schedule::{split_steps, ScheduleConfig, DEFAULT_STAGE_FRACTIONS, DEFAULT_STAGE_RATES, DEFAULT_WEIGHT_DECAY};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::gate::DEFAULT_GATE_BIAS;
use crate::loss::LossConfig;
use crate::model::{ModelConfig, StageConfig, DEFAULT_CONV_KERNEL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `tiny`, `echo-s` or `echo-b`.
    pub preset: String,
    pub model_dim: usize,
    pub num_heads: usize,
    /// Defaults to `model_dim`.
    pub gate_hidden: Option<usize>,
    /// Defaults to `4 * model_dim`.
    pub ffn_hidden: Option<usize>,
    pub conv_kernel: usize,
    pub share_conv: bool,
    pub gate_init_bias: f64,
    /// Overrides the preset's blocks per stage.
    pub stage_blocks: Option<Vec<usize>>,
    /// Overrides the preset's window per stage.
    pub stage_windows: Option<Vec<usize>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: "tiny".into(),
            model_dim: 32,
            num_heads: 4,
            gate_hidden: None,
            ffn_hidden: None,
            conv_kernel: DEFAULT_CONV_KERNEL,
            share_conv: false,
            gate_init_bias: DEFAULT_GATE_BIAS,
            stage_blocks: None,
            stage_windows: None,
        }
    }
}

impl ModelSection {
    pub fn build(&self, data: &DatasetSpec) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::preset(&self.preset, self.model_dim, self.num_heads, data.vocab_size)?;
        let n = cfg.stages.len();
        let blocks = self
            .stage_blocks
            .clone()
            .unwrap_or_else(|| cfg.stages.iter().map(|s| s.num_blocks).collect());
        let windows = self
            .stage_windows
            .clone()
            .unwrap_or_else(|| cfg.stages.iter().map(|s| s.window).collect());
        if blocks.len() != windows.len() {
            return Err(Error::Config(format!(
                "{} stage_blocks for {} stage_windows (preset has {n} stages)",
                blocks.len(),
                windows.len()
            )));
        }
        cfg.stages = blocks
            .iter()
            .zip(&windows)
            .map(|(&b, &w)| StageConfig {
                num_blocks: b,
                window: w,
                conv_kernel: self.conv_kernel,
            })
            .collect();
        if let Some(g) = self.gate_hidden {
            cfg.gate_hidden = g;
        }
        if let Some(f) = self.ffn_hidden {
            cfg.ffn_hidden = f;
        }
        cfg.share_conv = self.share_conv;
        cfg.gate_init_bias = self.gate_init_bias;
        cfg.frame_len = data.frame_len;
        cfg.sample_rate = data.sample_rate;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub stage_rates: Vec<f64>,
    /// Share of `train.steps` per stage; ignored when boundaries are given.
    pub stage_fractions: Vec<f64>,
    pub stage_boundaries: Option<Vec<usize>>,
    pub weight_decay: f64,
    pub min_rate: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            stage_rates: DEFAULT_STAGE_RATES.to_vec(),
            stage_fractions: DEFAULT_STAGE_FRACTIONS.to_vec(),
            stage_boundaries: None,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            min_rate: 0.0,
        }
    }
}

impl ScheduleSection {
    pub fn build(&self, total_steps: usize) -> Result<ScheduleConfig> {
        if self.stage_fractions.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Config("stage fractions must be positive".into()));
        }
        let cfg = ScheduleConfig {
            stage_rates: self.stage_rates.clone(),
            stage_boundaries: self
                .stage_boundaries
                .clone()
                .unwrap_or_else(|| split_steps(total_steps, &self.stage_fractions)),
            weight_decay: self.weight_decay,
            min_rate: self.min_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub loss: LossConfig,
    pub schedule: ScheduleSection,
    pub data: DatasetSpec,
    pub train: TrainConfig,
    pub bench: BenchConfig,
    pub gradcheck: GradcheckConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        self.model.build(&self.data)
    }

    pub fn schedule_config(&self) -> Result<ScheduleConfig> {
        self.schedule.build(self.train.steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let model = cfg.model_config().unwrap();
        assert_eq!(model.block_windows(), vec![4, 16, 64, 256]);
        assert_eq!(model.vocab_size, cfg.data.vocab_size);
        let sched = cfg.schedule_config().unwrap();
        assert_eq!(sched.stage_boundaries, vec![600, 900, 1000]);
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = RunConfig::from_toml(
            r#"
            seed = 3
            [model]
            preset = "echo-s"
            model_dim = 16
            num_heads = 2
            share_conv = true
            [loss]
            lambda = 1.0
            [schedule]
            stage_boundaries = [10, 20, 30]
            [train]
            steps = 30
            momentum = 0.9
            [gradcheck]
            scope = "loss"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.model_config().unwrap().total_blocks(), 12);
        assert_eq!(cfg.loss.lambda, 1.0);
        assert_eq!(cfg.schedule_config().unwrap().lr_at(20), 6e-7);
        assert_eq!(cfg.gradcheck.scope, super::super::gradcheck::Scope::Loss);
    }

    #[test]
    fn typos_and_bad_values_are_rejected() {
        assert!(RunConfig::from_toml("[model]\nmodel_dimm = 3").is_err());
        assert!(RunConfig::from_toml("[train]\nsteps = -1").is_err());
        let cfg = RunConfig::from_toml("[model]\nstage_blocks = [1, 1]").unwrap();
        assert!(cfg.model_config().is_err());
        let cfg = RunConfig::from_toml("[schedule]\nstage_rates = [1e-3, 1e-2, 1e-4]").unwrap();
        assert!(cfg.schedule_config().is_err());
    }

    #[test]
    fn serialized_config_parses_back() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
