use serde::{Deserialize, Serialize};

use crate::attention::AttentionConfig;
use crate::error::{Error, Result};
use crate::gate::DEFAULT_GATE_BIAS;

/// One group of consecutive blocks sharing a window size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub num_blocks: usize,
    pub window: usize,
    pub conv_kernel: usize,
}

impl StageConfig {
    pub fn new(num_blocks: usize, window: usize) -> Self {
        StageConfig {
            num_blocks,
            window,
            conv_kernel: DEFAULT_CONV_KERNEL,
        }
    }
}

pub const DEFAULT_CONV_KERNEL: usize = 4;
pub const STAGE_WINDOWS: [usize; 4] = [4, 16, 64, 256];
pub const ECHO_S_BLOCKS: [usize; 4] = [2, 2, 4, 4];
pub const ECHO_B_BLOCKS: [usize; 4] = [4, 4, 8, 8];
pub const SAMPLE_RATE: usize = 16_000;
/// 20 ms at 16 kHz, i.e. 50 frames per second.
pub const FRAME_LEN: usize = 320;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub stages: Vec<StageConfig>,
    pub model_dim: usize,
    pub num_heads: usize,
    /// Output symbols including the blank.
    pub vocab_size: usize,
    pub gate_hidden: usize,
    pub ffn_hidden: usize,
    pub sample_rate: usize,
    /// Samples per encoder frame.
    pub frame_len: usize,
    pub share_conv: bool,
    pub gate_init_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::echo_s(64, 4, 32)
    }
}

impl ModelConfig {
    fn with_blocks(blocks: [usize; 4], model_dim: usize, num_heads: usize, vocab_size: usize) -> Self {
        ModelConfig {
            stages: blocks
                .iter()
                .zip(STAGE_WINDOWS)
                .map(|(&n, w)| StageConfig::new(n, w))
                .collect(),
            model_dim,
            num_heads,
            vocab_size,
            gate_hidden: model_dim,
            ffn_hidden: 4 * model_dim,
            sample_rate: SAMPLE_RATE,
            frame_len: FRAME_LEN,
            share_conv: false,
            gate_init_bias: DEFAULT_GATE_BIAS,
        }
    }

    /// 12 blocks: {2, 2, 4, 4} over windows {4, 16, 64, 256}.
    pub fn echo_s(model_dim: usize, num_heads: usize, vocab_size: usize) -> Self {
        Self::with_blocks(ECHO_S_BLOCKS, model_dim, num_heads, vocab_size)
    }

    /// 24 blocks: {4, 4, 8, 8} over windows {4, 16, 64, 256}.
    pub fn echo_b(model_dim: usize, num_heads: usize, vocab_size: usize) -> Self {
        Self::with_blocks(ECHO_B_BLOCKS, model_dim, num_heads, vocab_size)
    }

    /// One block per stage, same windows.
    pub fn tiny(model_dim: usize, num_heads: usize, vocab_size: usize) -> Self {
        Self::with_blocks([1, 1, 1, 1], model_dim, num_heads, vocab_size)
    }

    pub fn preset(name: &str, model_dim: usize, num_heads: usize, vocab_size: usize) -> Result<Self> {
        match name {
            "echo-s" => Ok(Self::echo_s(model_dim, num_heads, vocab_size)),
            "echo-b" => Ok(Self::echo_b(model_dim, num_heads, vocab_size)),
            "tiny" => Ok(Self::tiny(model_dim, num_heads, vocab_size)),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("model needs at least one stage".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.num_blocks == 0 || s.window == 0 || s.conv_kernel == 0 {
                return Err(Error::Config(format!(
                    "stage {i}: blocks, window and conv_kernel must be >= 1"
                )));
            }
        }
        self.attention(&self.stages[0])?;
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must include blank plus one symbol".into()));
        }
        if self.gate_hidden == 0 || self.ffn_hidden == 0 || self.frame_len == 0 {
            return Err(Error::Config("gate_hidden, ffn_hidden and frame_len must be >= 1".into()));
        }
        Ok(())
    }

    pub fn attention(&self, stage: &StageConfig) -> Result<AttentionConfig> {
        let mut cfg = AttentionConfig::new(self.model_dim, self.num_heads, stage.window, stage.conv_kernel)?;
        cfg.share_conv = self.share_conv;
        Ok(cfg)
    }

    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.num_blocks).sum()
    }

    /// Window used by each block, in execution order.
    pub fn block_windows(&self) -> Vec<usize> {
        self.stages
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.window, s.num_blocks))
            .collect()
    }

    /// Closed-form count of trainable scalars.
    ///
    /// ```text
    /// encoder  F*d + d                         (F = frame_len)
    /// block    4d                              two layer norms
    ///        + 8(d^2 + d)                      two sets of Q/K/V/O projections
    ///        + c(k d + d^2)                    c = 3 convolutions (1 if shared)
    ///        + 2 d g + g + d                   gate, hidden width g
    ///        + 2 d f + f + d                   feed-forward, hidden width f
    /// head     2d + d V + V                    final norm and output layer
    /// ```
    pub fn param_count(&self) -> usize {
        let d = self.model_dim;
        let (g, f, v) = (self.gate_hidden, self.ffn_hidden, self.vocab_size);
        let convs = if self.share_conv { 1 } else { 3 };
        let encoder = self.frame_len * d + d;
        let blocks: usize = self
            .stages
            .iter()
            .map(|s| {
                let per_block = 4 * d
                    + 8 * d * d
                    + 6 * d
                    + convs * (s.conv_kernel * d + d * d)
                    + 2 * d * g
                    + g
                    + d
                    + 2 * d * f
                    + f
                    + d;
                per_block * s.num_blocks
            })
            .sum();
        encoder + blocks + 2 * d + d * v + v
    }
}
