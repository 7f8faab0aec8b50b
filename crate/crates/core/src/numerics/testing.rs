//! Helpers shared by unit tests, integration tests and the gradcheck command.

use rand::Rng;

use super::gradcheck::{check_gradients, GradCheckOptions};
use super::tensor::Tensor;
use crate::error::Result;

/// Tensor with entries uniform in `[-scale, scale]`.
pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64, requires_grad: bool) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
    if requires_grad {
        Tensor::param(shape, data).expect("valid shape")
    } else {
        Tensor::new(shape, data).expect("valid shape")
    }
}

/// Panics unless every gradient of `loss` w.r.t. `inputs` matches central
/// differences (h = 1e-5) to relative error below 1e-4.
#[track_caller]
pub fn assert_gradients(inputs: &[Tensor], loss: impl Fn() -> Result<Tensor>) {
    let out = check_gradients(inputs, loss, GradCheckOptions::default()).expect("loss evaluates");
    assert!(out.passed(), "gradient check failed: {out:?}");
}
