//! Full multi-head self-attention and the windowed Echo-MSA variant.
//!
//! [`MultiHeadAttention`] lets every token attend to every unmasked token.
//! [`EchoMsa`] first runs Q, K and V through depthwise-separable
//! convolutions, then restricts each query to the keys within
//! `floor(window / 2)` positions of itself (see [`effective_window`]).

mod windowed;

use rand::Rng;

pub use windowed::{band_half_width, effective_window, windowed_attention};

use crate::error::{Error, Result};
use crate::layers::{join, uniform, HasParams, Linear};
use crate::numerics::macs::{self, MacKind};
use crate::numerics::{depthwise_separable_conv1d, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub num_heads: usize,
    /// Window size; each query sees `window / 2` neighbours on either side.
    pub window: usize,
    pub conv_kernel: usize,
    /// Use one convolution for Q, K and V instead of three.
    pub share_conv: bool,
}

impl AttentionConfig {
    pub fn new(model_dim: usize, num_heads: usize, window: usize, conv_kernel: usize) -> Result<Self> {
        let cfg = AttentionConfig {
            model_dim,
            num_heads,
            window,
            conv_kernel,
            share_conv: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} must be a positive multiple of num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.window == 0 || self.conv_kernel == 0 {
            return Err(Error::Config("window and conv_kernel must be >= 1".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.head_dim() as f64).sqrt()
    }

    pub fn half_window(&self) -> usize {
        self.window / 2
    }
}

/// Which keys each query may attend to. `true` means attend.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum AttentionMask {
    #[default]
    All,
    /// `[T]`: key positions that exist (false = padding).
    Keys(Vec<bool>),
    /// `[T, T]` row-major: `allowed[q * T + k]`.
    Pairs(Vec<bool>),
}

impl AttentionMask {
    /// Keys within `half` positions of each query.
    pub fn band(len: usize, half: usize) -> Self {
        let mut allowed = vec![false; len * len];
        for q in 0..len {
            for k in 0..len {
                allowed[q * len + k] = q.abs_diff(k) <= half;
            }
        }
        AttentionMask::Pairs(allowed)
    }

    /// Expands to a `[T, T]` matrix, checking every query keeps a key.
    pub fn expand(&self, len: usize) -> Result<Vec<bool>> {
        let full = match self {
            AttentionMask::All => vec![true; len * len],
            AttentionMask::Keys(keys) => {
                if keys.len() != len {
                    return Err(Error::dim("attention mask", &[keys.len()], &[len]));
                }
                (0..len).flat_map(|_| keys.iter().copied()).collect()
            }
            AttentionMask::Pairs(p) => {
                if p.len() != len * len {
                    return Err(Error::dim("attention mask", &[p.len()], &[len, len]));
                }
                p.clone()
            }
        };
        if let Some(row) = full.chunks(len).position(|r| !r.contains(&true)) {
            return Err(Error::contract(format!(
                "attention mask leaves query {row} with no key"
            )));
        }
        Ok(full)
    }
}

/// Attention result: mixed output `[T, d]` and per-head weights, either
/// `[h, T, T]` (full) or `[h, T, W_eff]` (windowed).
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub output: Tensor,
    pub weights: Tensor,
}

/// Learned query/key/value/output projections. The key bias stays at zero
/// and is not a parameter: it shifts every score of a query by the same
/// amount, which softmax ignores.
#[derive(Clone, Debug)]
pub struct QkvProjections {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl QkvProjections {
    pub fn new(rng: &mut impl Rng, d: usize) -> Self {
        QkvProjections {
            query: Linear::new(rng, d, d),
            key: Linear::new(rng, d, d),
            value: Linear::new(rng, d, d),
            output: Linear::new(rng, d, d),
        }
    }

    fn qkv(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        Ok((
            self.query.forward(x)?,
            self.key.forward(x)?,
            self.value.forward(x)?,
        ))
    }
}

impl HasParams for QkvProjections {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.query.visit_params(&join(prefix, "query"), out);
        out.push((join(&join(prefix, "key"), "weight"), self.key.weight.clone()));
        self.value.visit_params(&join(prefix, "value"), out);
        self.output.visit_params(&join(prefix, "output"), out);
    }
}

/// Scaled dot-product attention of every query against every allowed key,
/// split over `num_heads` column groups. `mask` is `[T, T]`.
pub fn full_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: &[bool],
    num_heads: usize,
) -> Result<(Tensor, Tensor)> {
    let (len, d) = (q.rows(), q.cols());
    if d % num_heads != 0 {
        return Err(Error::contract(format!(
            "{num_heads} heads do not divide width {d}"
        )));
    }
    let dh = d / num_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(num_heads);
    let mut weights = Vec::with_capacity(num_heads * len * len);
    for h in 0..num_heads {
        let qh = q.slice_cols(h * dh, dh)?;
        let kh = k.slice_cols(h * dh, dh)?;
        let vh = v.slice_cols(h * dh, dh)?;
        let (out, a) = macs::with_kind(MacKind::Attention, || -> Result<_> {
            let scores = qh.matmul(&kh.transpose()?)?.scale(scale);
            let a = scores.masked_softmax(mask)?;
            Ok((a.matmul(&vh)?, a))
        })?;
        weights.extend_from_slice(&a.data());
        heads.push(out);
    }
    let out = if heads.len() == 1 {
        heads.pop().expect("one head")
    } else {
        Tensor::concat_cols(&heads)?
    };
    Ok((out, Tensor::new(&[num_heads, len, len], weights)?))
}

/// Standard multi-head self-attention.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub num_heads: usize,
    pub proj: QkvProjections,
}

impl MultiHeadAttention {
    pub fn new(rng: &mut impl Rng, model_dim: usize, num_heads: usize) -> Self {
        MultiHeadAttention {
            num_heads,
            proj: QkvProjections::new(rng, model_dim),
        }
    }

    pub fn forward(&self, x: &Tensor, mask: &AttentionMask) -> Result<AttentionOutput> {
        let len = x.rows();
        let mask = mask.expand(len)?;
        let (q, k, v) = self.proj.qkv(x)?;
        let (mixed, weights) = full_attention(&q, &k, &v, &mask, self.num_heads)?;
        Ok(AttentionOutput {
            output: self.proj.output.forward(&mixed)?,
            weights,
        })
    }
}

impl HasParams for MultiHeadAttention {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.proj.visit_params(prefix, out);
    }
}

/// Depthwise kernel `[k, d]` followed by a pointwise mix `[d, d]`.
#[derive(Clone, Debug)]
pub struct SeparableConv {
    pub depthwise: Tensor,
    pub pointwise: Tensor,
}

impl SeparableConv {
    /// Near-identity start: the centre tap is 1 and the pointwise mix is the
    /// identity, both perturbed by small uniform noise.
    pub fn new(rng: &mut impl Rng, kernel: usize, d: usize) -> Self {
        let noise = 0.1;
        let depthwise = uniform(rng, &[kernel, d], noise);
        let centre = crate::numerics::same_padding(kernel).0;
        depthwise.update(|w, _| w[centre * d..(centre + 1) * d].iter_mut().for_each(|v| *v += 1.0));
        let pointwise = uniform(rng, &[d, d], noise / (d as f64).sqrt());
        pointwise.update(|w, _| (0..d).for_each(|i| w[i * d + i] += 1.0));
        SeparableConv {
            depthwise,
            pointwise,
        }
    }

    /// Exact identity map (single unit tap, identity mix).
    pub fn identity(d: usize) -> Self {
        SeparableConv {
            depthwise: Tensor::param(&[1, d], vec![1.0; d]).expect("shape"),
            pointwise: Tensor::param(&[d, d], Tensor::eye(d).to_vec()).expect("shape"),
        }
    }

    pub fn kernel(&self) -> usize {
        self.depthwise.rows()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        depthwise_separable_conv1d(x, &self.depthwise, &self.pointwise)
    }
}

impl HasParams for SeparableConv {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "depthwise"), self.depthwise.clone()));
        out.push((join(prefix, "pointwise"), self.pointwise.clone()));
    }
}

#[derive(Clone, Debug)]
pub enum QkvConv {
    Shared(SeparableConv),
    Independent {
        query: SeparableConv,
        key: SeparableConv,
        value: SeparableConv,
    },
}

impl QkvConv {
    fn apply(&self, q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (cq, ck, cv) = match self {
            QkvConv::Shared(c) => (c, c, c),
            QkvConv::Independent { query, key, value } => (query, key, value),
        };
        Ok((cq.forward(q)?, ck.forward(k)?, cv.forward(v)?))
    }
}

impl HasParams for QkvConv {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        match self {
            QkvConv::Shared(c) => c.visit_params(&join(prefix, "shared"), out),
            QkvConv::Independent { query, key, value } => {
                query.visit_params(&join(prefix, "query"), out);
                key.visit_params(&join(prefix, "key"), out);
                value.visit_params(&join(prefix, "value"), out);
            }
        }
    }
}

/// Windowed multi-scale attention with convolved Q/K/V.
#[derive(Clone, Debug)]
pub struct EchoMsa {
    pub config: AttentionConfig,
    pub proj: QkvProjections,
    pub conv: QkvConv,
}

impl EchoMsa {
    pub fn new(rng: &mut impl Rng, config: AttentionConfig) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let proj = QkvProjections::new(rng, d);
        let k = config.conv_kernel;
        let conv = if config.share_conv {
            QkvConv::Shared(SeparableConv::new(rng, k, d))
        } else {
            QkvConv::Independent {
                query: SeparableConv::new(rng, k, d),
                key: SeparableConv::new(rng, k, d),
                value: SeparableConv::new(rng, k, d),
            }
        };
        Ok(EchoMsa { config, proj, conv })
    }

    pub fn from_parts(config: AttentionConfig, proj: QkvProjections, conv: QkvConv) -> Result<Self> {
        config.validate()?;
        Ok(EchoMsa { config, proj, conv })
    }

    fn convolved_qkv(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (q, k, v) = self.proj.qkv(x)?;
        self.conv.apply(&q, &k, &v)
    }

    pub fn forward(&self, x: &Tensor) -> Result<AttentionOutput> {
        self.forward_with_window(x, self.config.window)
    }

    /// Runs with an explicit window size instead of the configured one.
    pub fn forward_with_window(&self, x: &Tensor, window: usize) -> Result<AttentionOutput> {
        if window == 0 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        let (q, k, v) = self.convolved_qkv(x)?;
        let head_dim = self.config.head_dim();
        let (mixed, weights) = windowed_attention(
            &q,
            &k,
            &v,
            self.config.num_heads,
            window / 2,
            1.0 / (head_dim as f64).sqrt(),
        )?;
        Ok(AttentionOutput {
            output: self.proj.output.forward(&mixed)?,
            weights,
        })
    }

    /// Same function computed as full attention under a band mask. Quadratic
    /// in T; kept for equivalence checks against [`EchoMsa::forward`].
    pub fn forward_reference(&self, x: &Tensor) -> Result<AttentionOutput> {
        let len = x.rows();
        let mask = AttentionMask::band(len, self.config.half_window()).expand(len)?;
        let (q, k, v) = self.convolved_qkv(x)?;
        let (mixed, weights) = full_attention(&q, &k, &v, &mask, self.config.num_heads)?;
        Ok(AttentionOutput {
            output: self.proj.output.forward(&mixed)?,
            weights,
        })
    }
}

impl HasParams for EchoMsa {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.proj.visit_params(prefix, out);
        self.conv.visit_params(&join(prefix, "conv"), out);
    }
}
