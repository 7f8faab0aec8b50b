//! Stage-structured encoder: framing feature encoder, stages of
//! [`EchoBlock`]s that differ only in window size, and a CTC output head.
//!
//! The sequence length stays at the frame count through the whole stack.

mod block;
pub mod checkpoint;
mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use block::EchoBlock;
pub use config::{
    ModelConfig, StageConfig, DEFAULT_CONV_KERNEL, ECHO_B_BLOCKS, ECHO_S_BLOCKS, FRAME_LEN, SAMPLE_RATE,
    STAGE_WINDOWS,
};

use crate::attention::AttentionMask;
use crate::error::{Error, Result};
use crate::layers::{join, HasParams, LayerNorm, Linear};
use crate::numerics::Tensor;

/// Floor on the waveform variance used during normalization.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Normalizes `waveform` to zero mean and unit variance and cuts it into
/// non-overlapping frames of `frame_len` samples, `[floor(len / frame_len),
/// frame_len]`. Trailing samples that do not fill a frame are dropped.
pub fn frame_waveform(waveform: &[f64], frame_len: usize) -> Result<Tensor> {
    if waveform.is_empty() {
        return Err(Error::contract("empty waveform"));
    }
    if let Some(bad) = waveform.iter().find(|v| !v.is_finite()) {
        return Err(Error::contract(format!("non-finite sample {bad}")));
    }
    let frames = waveform.len() / frame_len;
    if frames == 0 {
        return Err(Error::contract(format!(
            "waveform of {} samples is shorter than one {frame_len}-sample frame",
            waveform.len()
        )));
    }
    let n = waveform.len() as f64;
    let mean = waveform.iter().sum::<f64>() / n;
    let var = waveform.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / var.max(VARIANCE_FLOOR).sqrt();
    let data = waveform[..frames * frame_len]
        .iter()
        .map(|v| (v - mean) * inv_std)
        .collect();
    Tensor::new(&[frames, frame_len], data)
}

/// Which block ran with which window; reported by [`Model::forward_traced`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockTrace {
    pub stage: usize,
    pub block: usize,
    pub window: usize,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub feature: Linear,
    /// Blocks grouped by stage.
    pub stages: Vec<Vec<EchoBlock>>,
    pub final_norm: LayerNorm,
    pub head: Linear,
}

impl Model {
    /// Randomly initialized model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        let feature = Linear::new(&mut rng, config.frame_len, d);
        let residual_scale = 1.0 / (2.0 * config.total_blocks() as f64).sqrt();
        let mut stages = Vec::with_capacity(config.stages.len());
        for stage in &config.stages {
            let attn = config.attention(stage)?;
            let blocks = (0..stage.num_blocks)
                .map(|_| {
                    EchoBlock::new(
                        &mut rng,
                        attn,
                        config.gate_hidden,
                        config.ffn_hidden,
                        config.gate_init_bias,
                        residual_scale,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(blocks);
        }
        let head = Linear::new(&mut rng, d, config.vocab_size);
        Ok(Model {
            feature,
            stages,
            final_norm: LayerNorm::new(d),
            head,
            config,
        })
    }

    pub fn blocks(&self) -> impl Iterator<Item = &EchoBlock> {
        self.stages.iter().flatten()
    }

    /// Frame features `[T, d]` with `T = floor(samples / frame_len)`.
    pub fn feature_encode(&self, waveform: &[f64]) -> Result<Tensor> {
        self.feature.forward(&frame_waveform(waveform, self.config.frame_len)?)
    }

    /// Per-frame log-probabilities `[T, vocab_size]`.
    pub fn forward(&self, waveform: &[f64]) -> Result<Tensor> {
        self.forward_traced(waveform, |_| {})
    }

    pub fn forward_traced(&self, waveform: &[f64], mut hook: impl FnMut(BlockTrace)) -> Result<Tensor> {
        let mut x = self.feature_encode(waveform)?;
        let mut index = 0;
        for (stage, (cfg, blocks)) in self.config.stages.iter().zip(&self.stages).enumerate() {
            for block in blocks {
                hook(BlockTrace {
                    stage,
                    block: index,
                    window: cfg.window,
                });
                x = block.forward(&x, cfg.window, &AttentionMask::All)?;
                index += 1;
            }
        }
        self.head.forward(&self.final_norm.forward(&x)?)?.log_softmax()
    }
}

impl HasParams for Model {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.feature.visit_params(&join(prefix, "feature"), out);
        for (i, block) in self.blocks().enumerate() {
            block.visit_params(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.final_norm.visit_params(&join(prefix, "final_norm"), out);
        self.head.visit_params(&join(prefix, "head"), out);
    }
}
