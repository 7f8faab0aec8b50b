use rand::Rng;

use crate::attention::{AttentionConfig, AttentionMask, EchoMsa, MultiHeadAttention};
use crate::error::Result;
use crate::gate::{fuse, gate_coefficients, GateParams};
use crate::layers::{join, HasParams, LayerNorm, Linear};
use crate::numerics::Tensor;

/// Pre-norm encoder block with parallel full and windowed attention.
///
/// ```text
/// n   = norm_attn(x)
/// h   = x + fuse(msa(n), echo(n), gate(n))
/// out = h + ffn(norm_ffn(h))
/// ```
#[derive(Clone, Debug)]
pub struct EchoBlock {
    pub norm_attn: LayerNorm,
    pub msa: MultiHeadAttention,
    pub echo: EchoMsa,
    pub gate: GateParams,
    pub norm_ffn: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl EchoBlock {
    /// Output projections of the two attention branches and the
    /// feed-forward layer are shrunk by `residual_scale` so that a deep
    /// stack starts close to the identity.
    pub fn new(
        rng: &mut impl Rng,
        attn: AttentionConfig,
        gate_hidden: usize,
        ffn_hidden: usize,
        gate_init_bias: f64,
        residual_scale: f64,
    ) -> Result<Self> {
        let d = attn.model_dim;
        let block = EchoBlock {
            norm_attn: LayerNorm::new(d),
            msa: MultiHeadAttention::new(rng, d, attn.num_heads),
            echo: EchoMsa::new(rng, attn)?,
            gate: GateParams::new(rng, d, gate_hidden, gate_init_bias)?,
            norm_ffn: LayerNorm::new(d),
            ffn_in: Linear::new(rng, d, ffn_hidden),
            ffn_out: Linear::new(rng, ffn_hidden, d),
        };
        for w in [&block.msa.proj.output.weight, &block.echo.proj.output.weight, &block.ffn_out.weight] {
            w.update(|data, _| data.iter_mut().for_each(|v| *v *= residual_scale));
        }
        Ok(block)
    }

    pub fn forward(&self, x: &Tensor, window: usize, mask: &AttentionMask) -> Result<Tensor> {
        let n = self.norm_attn.forward(x)?;
        let full = self.msa.forward(&n, mask)?.output;
        let local = self.echo.forward_with_window(&n, window)?.output;
        let g = gate_coefficients(&n, &self.gate)?;
        let h = x.add(&fuse(&full, &local, &g)?)?;
        self.feed_forward(&h)
    }

    /// The same block with only the full-attention branch (gate fixed at 1).
    pub fn forward_msa_only(&self, x: &Tensor, mask: &AttentionMask) -> Result<Tensor> {
        let n = self.norm_attn.forward(x)?;
        let h = x.add(&self.msa.forward(&n, mask)?.output)?;
        self.feed_forward(&h)
    }

    fn feed_forward(&self, h: &Tensor) -> Result<Tensor> {
        let f = self.ffn_out.forward(&self.ffn_in.forward(&self.norm_ffn.forward(h)?)?.relu())?;
        h.add(&f)
    }
}

impl HasParams for EchoBlock {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.norm_attn.visit_params(&join(prefix, "norm_attn"), out);
        self.msa.visit_params(&join(prefix, "msa"), out);
        self.echo.visit_params(&join(prefix, "echo"), out);
        self.gate.visit_params(&join(prefix, "gate"), out);
        self.norm_ffn.visit_params(&join(prefix, "norm_ffn"), out);
        self.ffn_in.visit_params(&join(prefix, "ffn_in"), out);
        self.ffn_out.visit_params(&join(prefix, "ffn_out"), out);
    }
}
