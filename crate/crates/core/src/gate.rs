//! Dual focus gate: a two-layer sigmoid network that blends the outputs of
//! full attention and windowed attention element by element.
//!
//! ```text
//! H   = ReLU(X W1 + b1)
//! G   = sigmoid(H W2 + b2)
//! out = G * O1 + (1 - G) * O2
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{constant, join, xavier, HasParams};
use crate::numerics::Tensor;

/// Bias of the output layer at initialization. With `w2 = 0` every gate
/// starts at sigmoid(2) ~ 0.88, so the full-attention branch dominates.
pub const DEFAULT_GATE_BIAS: f64 = 2.0;

#[derive(Clone, Debug)]
pub struct GateParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl GateParams {
    /// `w1` random, `w2 = 0` and `b2 = init_bias`.
    pub fn new(rng: &mut impl Rng, model_dim: usize, hidden: usize, init_bias: f64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("gate hidden width must be >= 1".into()));
        }
        Ok(GateParams {
            w1: xavier(rng, model_dim, hidden),
            b1: constant(&[hidden], 0.0),
            w2: constant(&[hidden, model_dim], 0.0),
            b2: constant(&[model_dim], init_bias),
        })
    }

    pub fn zeros(model_dim: usize, hidden: usize) -> Self {
        GateParams {
            w1: constant(&[model_dim, hidden], 0.0),
            b1: constant(&[hidden], 0.0),
            w2: constant(&[hidden, model_dim], 0.0),
            b2: constant(&[model_dim], 0.0),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b1.numel()
    }
}

impl HasParams for GateParams {
    fn visit_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "w1"), self.w1.clone()));
        out.push((join(prefix, "b1"), self.b1.clone()));
        out.push((join(prefix, "w2"), self.w2.clone()));
        out.push((join(prefix, "b2"), self.b2.clone()));
    }
}

/// Per-element blending coefficients `G` in (0, 1), shape `[T, d]`.
pub fn gate_coefficients(x: &Tensor, params: &GateParams) -> Result<Tensor> {
    let hidden = x.matmul(&params.w1)?.add_bias(&params.b1)?.relu();
    Ok(hidden.matmul(&params.w2)?.add_bias(&params.b2)?.sigmoid())
}

/// `g * o1 + (1 - g) * o2`, elementwise.
///
/// The result is clamped to `[min(o1, o2), max(o1, o2)]` to absorb rounding,
/// so it never leaves the interval spanned by its inputs.
pub fn fuse(o1: &Tensor, o2: &Tensor, g: &Tensor) -> Result<Tensor> {
    if o1.shape() != o2.shape() {
        return Err(Error::dim("fuse", o1.shape(), o2.shape()));
    }
    if g.shape() != o1.shape() {
        return Err(Error::dim("fuse", o1.shape(), g.shape()));
    }
    let out = {
        let (a, b, w) = (o1.data(), o2.data(), g.data());
        a.iter()
            .zip(b.iter())
            .zip(w.iter())
            .map(|((&a, &b), &w)| (w * a + (1.0 - w) * b).clamp(a.min(b), a.max(b)))
            .collect()
    };
    Ok(Tensor::from_op(
        "fuse",
        o1.shape().to_vec(),
        out,
        vec![o1.clone(), o2.clone(), g.clone()],
        Box::new(|grad, p| {
            let (a, b, w) = (p[0].data(), p[1].data(), p[2].data());
            let d1 = grad.iter().zip(w.iter()).map(|(g, w)| g * w).collect();
            let d2 = grad.iter().zip(w.iter()).map(|(g, w)| g * (1.0 - w)).collect();
            let dg = grad
                .iter()
                .zip(a.iter().zip(b.iter()))
                .map(|(g, (a, b))| g * (a - b))
                .collect();
            vec![d1, d2, dg]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testing::{assert_gradients, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_half() {
        let g = gate_coefficients(&Tensor::full(&[3, 4], 0.7), &GateParams::zeros(4, 5)).unwrap();
        assert!(g.to_vec().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn large_output_bias_saturates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = GateParams::new(&mut rng, 4, 4, 20.0).unwrap();
        p.w1 = random_tensor(&mut rng, &[4, 4], 1.0, true);
        let x = random_tensor(&mut rng, &[3, 4], 1.0, false);
        let g = gate_coefficients(&x, &p).unwrap();
        assert!(g.to_vec().iter().all(|&v| v >= 1.0 - 1e-8));
    }

    #[test]
    fn matches_two_layer_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (d, dh, len) = (3, 5, 4);
        let p = GateParams {
            w1: random_tensor(&mut rng, &[d, dh], 1.0, true),
            b1: random_tensor(&mut rng, &[dh], 1.0, true),
            w2: random_tensor(&mut rng, &[dh, d], 1.0, true),
            b2: random_tensor(&mut rng, &[d], 1.0, true),
        };
        let x = random_tensor(&mut rng, &[len, d], 1.0, false);
        let got = gate_coefficients(&x, &p).unwrap().to_vec();
        let (xv, w1, b1, w2, b2) = (x.to_vec(), p.w1.to_vec(), p.b1.to_vec(), p.w2.to_vec(), p.b2.to_vec());
        for t in 0..len {
            let h: Vec<f64> = (0..dh)
                .map(|j| (b1[j] + (0..d).map(|i| xv[t * d + i] * w1[i * dh + j]).sum::<f64>()).max(0.0))
                .collect();
            for c in 0..d {
                let z = b2[c] + (0..dh).map(|j| h[j] * w2[j * d + c]).sum::<f64>();
                let want = 1.0 / (1.0 + (-z).exp());
                assert!((got[t * d + c] - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn fuse_endpoints_and_midpoint() {
        let o1 = Tensor::new(&[2], vec![2.0, -1.5]).unwrap();
        let o2 = Tensor::new(&[2], vec![4.0, 7.25]).unwrap();
        assert_eq!(fuse(&o1, &o2, &Tensor::full(&[2], 1.0)).unwrap().to_vec(), o1.to_vec());
        assert_eq!(fuse(&o1, &o2, &Tensor::full(&[2], 0.0)).unwrap().to_vec(), o2.to_vec());
        let mid = fuse(&o1, &o2, &Tensor::full(&[2], 0.5)).unwrap().to_vec();
        assert_eq!(mid[0], 3.0);
    }

    #[test]
    fn fuse_shape_mismatch() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[4]);
        assert!(matches!(fuse(&a, &b, &a), Err(Error::Dimension { .. })));
    }

    #[test]
    fn fuse_gradients_are_gate_and_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o1 = random_tensor(&mut rng, &[2, 3], 1.0, true);
        let o2 = random_tensor(&mut rng, &[2, 3], 1.0, true);
        let g = Tensor::new(&[2, 3], vec![0.1, 0.2, 0.3, 0.6, 0.7, 0.95]).unwrap();
        fuse(&o1, &o2, &g).unwrap().sum().backward().unwrap();
        assert_eq!(o1.grad().unwrap(), g.to_vec());
        let comp: Vec<f64> = g.to_vec().iter().map(|w| 1.0 - w).collect();
        assert_eq!(o2.grad().unwrap(), comp);
    }

    #[test]
    fn gate_and_fuse_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (d, dh) = (4, 3);
        let p = GateParams {
            w1: random_tensor(&mut rng, &[d, dh], 1.0, true),
            b1: random_tensor(&mut rng, &[dh], 1.0, true),
            w2: random_tensor(&mut rng, &[dh, d], 1.0, true),
            b2: random_tensor(&mut rng, &[d], 1.0, true),
        };
        let x = random_tensor(&mut rng, &[5, d], 1.0, true);
        let o1 = random_tensor(&mut rng, &[5, d], 1.0, true);
        let o2 = random_tensor(&mut rng, &[5, d], 1.0, true);
        let w = random_tensor(&mut rng, &[5, d], 1.0, false);
        let inputs = [x.clone(), p.w1.clone(), p.b1.clone(), p.w2.clone(), p.b2.clone(), o1.clone(), o2.clone()];
        assert_gradients(&inputs, || {
            let g = gate_coefficients(&x, &p)?;
            fuse(&o1, &o2, &g)?.mul(&w).map(|t| t.sum())
        });
    }
}
