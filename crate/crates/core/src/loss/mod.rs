//! Training objectives: CTC, sample-weighted CTC, the focal term over
//! per-sample CTC losses, and their blend
//!
//! ```text
//! L = lambda * (1/N) sum_i w_i * ctc_i  +  (1 - lambda) * alpha * sum_i (1 - e^-ctc_i)^gamma * ctc_i
//! ```
//!
//! The focal term treats each utterance's CTC negative log-likelihood
//! `x_i = -ln p_i` as the "hardness" of that sample, so it equals the usual
//! focal loss `alpha (1 - p)^gamma (-ln p)` summed over the batch.

mod ctc;
mod decode;
pub mod oracle;

use serde::{Deserialize, Serialize};

pub use ctc::ctc_loss;
pub use decode::{edit_distance, greedy_decode};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Index of the CTC blank symbol.
pub const BLANK: usize = 0;

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 0.25;
pub const DEFAULT_GAMMA: f64 = 2.0;

/// Target symbols (blank excluded) over a vocabulary of `vocab_size`
/// entries, blank included.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelSequence {
    symbols: Vec<usize>,
    vocab_size: usize,
}

impl LabelSequence {
    pub fn new(symbols: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::contract(format!(
                "vocabulary of {vocab_size} has no room beside the blank"
            )));
        }
        if let Some(&bad) = symbols.iter().find(|&&s| s == BLANK || s >= vocab_size) {
            return Err(Error::contract(format!(
                "label symbol {bad} outside 1..{vocab_size}"
            )));
        }
        Ok(LabelSequence { symbols, vocab_size })
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Fewest frames any alignment needs: one per symbol plus a separating
    /// blank between equal neighbours.
    pub fn min_frames(&self) -> usize {
        let repeats = self.symbols.windows(2).filter(|w| w[0] == w[1]).count();
        self.symbols.len() + repeats
    }

    pub fn is_feasible(&self, frames: usize) -> bool {
        frames >= 1 && frames >= self.min_frames()
    }
}

/// How per-sample weights `w_i` are chosen.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum SampleWeighting {
    #[default]
    Uniform,
    /// One weight per batch item.
    PerSample(Vec<f64>),
    /// Weight per vocabulary symbol; a sample gets the mean weight of its
    /// symbols (1 for an empty label).
    ClassTable(Vec<f64>),
}

/// Optional schedule for the blend weight. Constant unless configured.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LambdaSchedule {
    #[default]
    Constant,
    /// Linear from the configured lambda to `end` over `steps` steps.
    Linear { end: f64, steps: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub weighting: SampleWeighting,
    pub lambda_schedule: LambdaSchedule,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: DEFAULT_LAMBDA,
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
            weighting: SampleWeighting::Uniform,
            lambda_schedule: LambdaSchedule::Constant,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha {} must be > 0", self.alpha)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma {} must be >= 0", self.gamma)));
        }
        let weights = match &self.weighting {
            SampleWeighting::Uniform => &[][..],
            SampleWeighting::PerSample(w) | SampleWeighting::ClassTable(w) => w,
        };
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("sample weights must be >= 0".into()));
        }
        if let LambdaSchedule::Linear { end, .. } = self.lambda_schedule {
            if !(0.0..=1.0).contains(&end) {
                return Err(Error::Config(format!("lambda end {end} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn lambda_at(&self, step: usize) -> f64 {
        match self.lambda_schedule {
            LambdaSchedule::Constant => self.lambda,
            LambdaSchedule::Linear { end, steps } => {
                if steps == 0 || step >= steps {
                    end
                } else {
                    let f = step as f64 / steps as f64;
                    self.lambda + (end - self.lambda) * f
                }
            }
        }
    }

    /// Weights for a batch of label sequences.
    pub fn sample_weights(&self, labels: &[LabelSequence]) -> Result<Vec<f64>> {
        match &self.weighting {
            SampleWeighting::Uniform => Ok(vec![1.0; labels.len()]),
            SampleWeighting::PerSample(w) => {
                if w.len() != labels.len() {
                    return Err(Error::contract(format!(
                        "{} sample weights for a batch of {}",
                        w.len(),
                        labels.len()
                    )));
                }
                Ok(w.clone())
            }
            SampleWeighting::ClassTable(table) => labels
                .iter()
                .map(|y| {
                    if y.is_empty() {
                        return Ok(1.0);
                    }
                    let mut total = 0.0;
                    for &s in y.symbols() {
                        total += table.get(s).copied().ok_or_else(|| {
                            Error::Config(format!("class table has no weight for symbol {s}"))
                        })?;
                    }
                    Ok(total / y.len() as f64)
                })
                .collect(),
        }
    }
}

/// `(1/N) sum_i losses_i * weights_i`.
pub fn weighted_ctc(losses: &[Tensor], weights: &[f64]) -> Result<Tensor> {
    if losses.len() != weights.len() {
        return Err(Error::contract(format!(
            "{} losses but {} weights",
            losses.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::contract("sample weights must be >= 0"));
    }
    let n = losses.len() as f64;
    let stacked = Tensor::stack(losses)?;
    let w = Tensor::new(&[losses.len()], weights.to_vec())?;
    Ok(stacked.mul(&w)?.sum().scale(1.0 / n))
}

/// `alpha * sum_i (1 - e^{-x_i})^gamma * x_i` for non-negative `x[n]`.
pub fn focal_term(x: &Tensor, alpha: f64, gamma: f64) -> Result<Tensor> {
    let values = x.to_vec();
    if let Some(bad) = values.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::contract(format!(
            "focal term needs non-negative losses, got {bad}"
        )));
    }
    let total: f64 = values
        .iter()
        .map(|&v| (-(-v).exp_m1()).powf(gamma) * v)
        .sum::<f64>()
        * alpha;
    Ok(Tensor::from_op(
        "focal_term",
        Vec::new(),
        vec![total],
        vec![x.clone()],
        Box::new(move |g, _| {
            vec![values
                .iter()
                .map(|&v| {
                    let hard = -(-v).exp_m1();
                    let mut d = hard.powf(gamma);
                    if gamma != 0.0 && v > 0.0 && v.is_finite() {
                        d += gamma * hard.powf(gamma - 1.0) * (-v).exp() * v;
                    }
                    g[0] * alpha * d
                })
                .collect()]
        }),
    ))
}

/// Components of the blended objective for one batch.
#[derive(Clone, Debug)]
pub struct ECtcLoss {
    pub total: Tensor,
    pub weighted_ctc: Tensor,
    pub focal: Tensor,
    pub per_sample: Vec<Tensor>,
}

/// `lambda * weighted_ctc + (1 - lambda) * focal_term(ctc)` over a batch of
/// per-utterance log-probabilities and their labels, using `cfg.lambda`.
pub fn e_ctc_loss(log_probs: &[Tensor], labels: &[LabelSequence], cfg: &LossConfig) -> Result<ECtcLoss> {
    cfg.validate()?;
    if log_probs.len() != labels.len() || log_probs.is_empty() {
        return Err(Error::contract(format!(
            "{} outputs for {} label sequences",
            log_probs.len(),
            labels.len()
        )));
    }
    let per_sample = log_probs
        .iter()
        .zip(labels)
        .map(|(lp, y)| ctc_loss(lp, y))
        .collect::<Result<Vec<_>>>()?;
    let weights = cfg.sample_weights(labels)?;
    let weighted = weighted_ctc(&per_sample, &weights)?;
    let focal = focal_term(&Tensor::stack(&per_sample)?, cfg.alpha, cfg.gamma)?;
    let total = weighted.scale(cfg.lambda).add(&focal.scale(1.0 - cfg.lambda))?;
    Ok(ECtcLoss {
        total,
        weighted_ctc: weighted,
        focal,
        per_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testing::{assert_gradients, random_tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalars(v: &[f64]) -> Vec<Tensor> {
        v.iter().map(|&x| Tensor::scalar(x)).collect()
    }

    #[test]
    fn labels_reject_blank_and_out_of_range() {
        assert!(LabelSequence::new(vec![0], 3).is_err());
        assert!(LabelSequence::new(vec![3], 3).is_err());
        assert!(LabelSequence::new(vec![1], 1).is_err());
        let y = LabelSequence::new(vec![1, 1, 2, 2, 2], 3).unwrap();
        assert_eq!(y.min_frames(), 8);
        assert!(!y.is_feasible(7));
        assert!(y.is_feasible(8));
    }

    #[test]
    fn weighted_ctc_cases() {
        let l = scalars(&[2.0, 4.0]);
        assert_eq!(weighted_ctc(&l, &[1.0, 1.0]).unwrap().item(), 3.0);
        assert_eq!(weighted_ctc(&l, &[1.0, 0.0]).unwrap().item(), 1.0);
        assert!(weighted_ctc(&l, &[1.0]).is_err());
        assert!(weighted_ctc(&l, &[1.0, -1.0]).is_err());
    }

    #[test]
    fn weighted_ctc_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..10.0)).collect();
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..2.0)).collect();
        let want: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / 5.0;
        let got = weighted_ctc(&scalars(&v), &w).unwrap().item();
        assert!((got - want).abs() <= 1e-12);
    }

    #[test]
    fn focal_reductions() {
        let x = Tensor::new(&[3], vec![0.3, 1.7, 4.0]).unwrap();
        assert_eq!(focal_term(&x, 1.0, 0.0).unwrap().item(), 0.3 + 1.7 + 4.0);
        let zero = Tensor::new(&[1], vec![0.0]).unwrap();
        assert_eq!(focal_term(&zero, 0.25, 2.0).unwrap().item(), 0.0);
        assert_eq!(focal_term(&zero, 3.0, 0.5).unwrap().item(), 0.0);
    }

    #[test]
    fn focal_at_half_probability() {
        let x = Tensor::new(&[1], vec![-(0.5f64).ln()]).unwrap();
        let got = focal_term(&x, 0.25, 2.0).unwrap().item();
        let want = 0.25 * 0.5 * 0.5 * (2.0f64).ln();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.04332).abs() < 1e-5);
    }

    #[test]
    fn focal_rejects_negative() {
        let x = Tensor::new(&[2], vec![0.1, -0.2]).unwrap();
        assert!(matches!(focal_term(&x, 0.25, 2.0), Err(Error::Contract(_))));
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        for gamma in [0.0, 0.5, 1.0, 2.0, 3.5] {
            let x = Tensor::param(&[4], vec![0.05, 0.7, 2.0, 5.0]).unwrap();
            assert_gradients(&[x.clone()], || focal_term(&x, 0.25, gamma));
        }
    }

    #[test]
    fn focal_is_nondecreasing_on_a_grid() {
        for gamma in [0.0, 1.0, 2.0] {
            let x = Tensor::param(&[200], (0..200).map(|i| i as f64 * 0.05).collect()).unwrap();
            focal_term(&x, 1.0, gamma).unwrap().backward().unwrap();
            assert!(x.grad().unwrap().iter().all(|&g| g >= 0.0));
        }
    }

    #[test]
    fn focal_suppresses_easy_samples() {
        let ratio = |v: f64| {
            focal_term(&Tensor::new(&[1], vec![v]).unwrap(), 0.25, 2.0).unwrap().item() / v
        };
        for (small, large) in [(0.01, 0.1), (0.1, 1.0), (0.5, 3.0), (2.0, 8.0)] {
            assert!(ratio(small) < ratio(large));
        }
    }

    fn batch(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Vec<LabelSequence>) {
        let labels = vec![
            LabelSequence::new(vec![1, 2], 3).unwrap(),
            LabelSequence::new(vec![2], 3).unwrap(),
            LabelSequence::new(vec![1, 1], 3).unwrap(),
        ];
        let lps = labels
            .iter()
            .map(|_| {
                let logits = random_tensor(rng, &[5, 3], 2.0, false);
                Tensor::param(&[5, 3], logits.log_softmax().unwrap().to_vec()).unwrap()
            })
            .collect();
        (lps, labels)
    }

    #[test]
    fn blend_endpoints_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (lps, labels) = batch(&mut rng);
        let cfg = |lambda| LossConfig {
            lambda,
            ..Default::default()
        };
        let one = e_ctc_loss(&lps, &labels, &cfg(1.0)).unwrap();
        assert_eq!(one.total.item(), one.weighted_ctc.item());
        let zero = e_ctc_loss(&lps, &labels, &cfg(0.0)).unwrap();
        assert_eq!(zero.total.item(), zero.focal.item());
        let half = e_ctc_loss(&lps, &labels, &cfg(0.5)).unwrap().total.item();
        let (lo, hi) = (one.total.item().min(zero.total.item()), one.total.item().max(zero.total.item()));
        assert!(lo <= half && half <= hi);
    }

    #[test]
    fn single_sample_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (lps, labels) = batch(&mut rng);
        let out = e_ctc_loss(&lps[..1], &labels[..1], &LossConfig::default()).unwrap();
        let l = out.per_sample[0].item();
        let want = 0.5 * l + 0.5 * 0.25 * (1.0 - (-l).exp()).powi(2) * l;
        assert!((out.total.item() - want).abs() < 1e-14);
    }

    #[test]
    fn e_ctc_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (lps, labels) = batch(&mut rng);
        let cfg = LossConfig {
            weighting: SampleWeighting::PerSample(vec![0.5, 1.0, 2.0]),
            ..Default::default()
        };
        assert_gradients(&lps, || e_ctc_loss(&lps, &labels, &cfg).map(|l| l.total));
    }

    #[test]
    fn class_table_weights_average_symbols() {
        let cfg = LossConfig {
            weighting: SampleWeighting::ClassTable(vec![0.0, 1.0, 3.0]),
            ..Default::default()
        };
        let labels = vec![
            LabelSequence::new(vec![1, 2], 3).unwrap(),
            LabelSequence::new(vec![], 3).unwrap(),
        ];
        assert_eq!(cfg.sample_weights(&labels).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn defaults_and_validation() {
        let cfg = LossConfig::default();
        assert_eq!((cfg.lambda, cfg.alpha, cfg.gamma), (0.5, 0.25, 2.0));
        assert!(LossConfig { lambda: 1.5, ..cfg.clone() }.validate().is_err());
        assert!(LossConfig { alpha: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(LossConfig { gamma: -1.0, ..cfg.clone() }.validate().is_err());
        let sched = LossConfig {
            lambda_schedule: LambdaSchedule::Linear { end: 1.0, steps: 10 },
            ..cfg
        };
        assert_eq!(sched.lambda_at(0), 0.5);
        assert_eq!(sched.lambda_at(5), 0.75);
        assert_eq!(sched.lambda_at(50), 1.0);
    }
}
