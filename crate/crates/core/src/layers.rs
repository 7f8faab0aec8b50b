//! Parameter containers shared by the attention, gate and model modules.

use rand::Rng;

use crate::error::Result;
use crate::numerics::Tensor;

/// Anything owning trainable tensors. Names are dot-separated paths and the
/// visiting order is fixed, which makes checkpoints and optimizer state
/// deterministic.
pub trait HasParams {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>);

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params("", &mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = if bound == 0.0 {
        vec![0.0; n]
    } else {
        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
    };
    Tensor::param(shape, data).expect("non-empty shape")
}

pub(crate) fn constant(shape: &[usize], value: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(shape, vec![value; n]).expect("non-empty shape")
}

pub(crate) fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, &[fan_in, fan_out], bound)
}

/// Affine map `x * weight + bias` applied to each row of `x[T, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: xavier(rng, fan_in, fan_out),
            bias: constant(&[fan_out], 0.0),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: constant(&[fan_in, fan_out], 0.0),
            bias: constant(&[fan_out], 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add_bias(&self.bias)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

impl HasParams for Linear {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: constant(&[dim], 1.0),
            bias: constant(&[dim], 0.0),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gain, &self.bias, self.eps)
    }
}

impl HasParams for LayerNorm {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "gain"), self.gain.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}
