//! Central finite-difference verification of recorded gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{no_grad, Tensor};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Upper bound on probed entries per tensor; `None` probes all of them.
    pub max_probes: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            max_probes: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOutcome {
    /// Largest `|analytic - numeric| / (|numeric| + 1e-8)` over all probes.
    pub max_rel_error: f64,
    pub probes: usize,
    pub worst: Option<Mismatch>,
    pub tolerance: f64,
}

impl GradCheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

/// Compares the gradients recorded by `loss` against central differences
/// with respect to each tensor in `inputs`. The tensors are perturbed in
/// place and restored afterwards; their accumulated gradients are cleared.
pub fn check_gradients<F>(inputs: &[Tensor], loss: F, opts: GradCheckOptions) -> Result<GradCheckOutcome>
where
    F: Fn() -> Result<Tensor>,
{
    for t in inputs {
        t.zero_grad();
    }
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    for t in inputs {
        t.zero_grad();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut outcome = GradCheckOutcome {
        max_rel_error: 0.0,
        probes: 0,
        worst: None,
        tolerance: opts.tolerance,
    };
    for (ti, t) in inputs.iter().enumerate() {
        let n = t.numel();
        let indices: Vec<usize> = match opts.max_probes {
            Some(cap) if cap < n => {
                let mut v = sample(&mut rng, n, cap).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let original = t.to_vec();
        for idx in indices {
            let eval_at = |v: f64| -> Result<f64> {
                let mut d = original.clone();
                d[idx] = v;
                t.set_data(d)?;
                no_grad(|| loss().map(|l| l.item()))
            };
            let plus = eval_at(original[idx] + opts.step);
            let minus = eval_at(original[idx] - opts.step);
            t.set_data(original.clone())?;
            let numeric = (plus? - minus?) / (2.0 * opts.step);
            let a = analytic[ti][idx];
            let err = relative_error(a, numeric);
            outcome.probes += 1;
            if err > outcome.max_rel_error || err.is_nan() {
                outcome.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                outcome.worst = Some(Mismatch {
                    tensor: ti,
                    index: idx,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_backward_rule() {
        let x = Tensor::param(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let broken = || {
            let v: Vec<f64> = x.data().iter().map(|a| a * a).collect();
            Ok(Tensor::from_op(
                "broken_square",
                vec![3],
                v,
                vec![x.clone()],
                // should be 2x
                Box::new(|g, p| vec![p[0].data().iter().zip(g).map(|(a, g)| 3.0 * a * g).collect()]),
            )
            .sum())
        };
        let out = check_gradients(&[x.clone()], broken, GradCheckOptions::default()).unwrap();
        assert!(!out.passed());
        assert!(out.max_rel_error > 0.4);
        assert_eq!(x.to_vec(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn probe_cap_limits_work() {
        let x = Tensor::param(&[10], (0..10).map(|i| i as f64 * 0.1).collect()).unwrap();
        let opts = GradCheckOptions {
            max_probes: Some(3),
            ..Default::default()
        };
        let out = check_gradients(&[x.clone()], || Ok(x.mul(&x)?.sum()), opts).unwrap();
        assert_eq!(out.probes, 3);
        assert!(out.passed());
    }
}
