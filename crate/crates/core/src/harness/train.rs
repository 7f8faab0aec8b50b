//! Full-batch gradient descent on the compound CTC objective.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::data::Utterance;
use super::report::{EvalReport, RunReport, StepRecord};
use super::schedule::ScheduleConfig;
use crate::error::{Error, Result};
use crate::layers::HasParams;
use crate::loss::{ctc_loss, e_ctc_loss, edit_distance, greedy_decode, LabelSequence, LossConfig};
use crate::model::Model;
use crate::numerics::{macs, no_grad, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    /// Heavy-ball momentum; 0 gives plain gradient descent.
    pub momentum: f64,
    /// Log the loss every this many steps (0 disables logging).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            momentum: 0.0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("train.steps must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trace: Vec<StepRecord>,
    pub report: RunReport,
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Multi-line summary of every parameter's value and gradient range.
pub fn tensor_dump(params: &[(String, Tensor)]) -> String {
    let mut out = String::new();
    for (name, t) in params {
        let (lo, hi) = min_max(&t.data());
        out.push_str(&format!("  {name}: value [{lo:e}, {hi:e}]"));
        if let Some(g) = t.grad() {
            let (glo, ghi) = min_max(&g);
            out.push_str(&format!(" grad [{glo:e}, {ghi:e}]"));
        }
        out.push('\n');
    }
    out
}

/// Decoupled update `p <- p (1 - lr wd) - lr v` with `v <- mu v + grad`.
fn apply_update(params: &[(String, Tensor)], velocity: &mut [Vec<f64>], lr: f64, decay: f64, momentum: f64) {
    let shrink = 1.0 - lr * decay;
    for ((_, p), v) in params.iter().zip(velocity.iter_mut()) {
        p.update(|data, grad| {
            for ((x, g), m) in data.iter_mut().zip(grad).zip(v.iter_mut()) {
                *m = momentum * *m + g;
                *x = *x * shrink - lr * *m;
            }
        });
    }
}

/// Trains `model` in place on the whole of `data` every step.
///
/// A non-finite loss or gradient aborts with [`Error::Numeric`] carrying a
/// dump of every parameter's value and gradient range at that step.
pub fn train(
    model: &Model,
    data: &[Utterance],
    loss: &LossConfig,
    schedule: &ScheduleConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    schedule.validate()?;
    loss.validate()?;
    if data.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    let started = Instant::now();
    let params = model.named_params();
    let labels: Vec<LabelSequence> = data.iter().map(|u| u.labels.clone()).collect();
    let mut velocity: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        for (_, p) in &params {
            p.zero_grad();
        }
        let step_loss = LossConfig {
            lambda: loss.lambda_at(step),
            ..loss.clone()
        };
        let forward = || {
            let log_probs = data
                .iter()
                .map(|u| model.forward(&u.waveform))
                .collect::<Result<Vec<_>>>()?;
            e_ctc_loss(&log_probs, &labels, &step_loss)
        };
        let out = match forward() {
            Err(Error::Numeric(msg)) => {
                return Err(Error::numeric(format!("{msg} at step {step}\n{}", tensor_dump(&params))));
            }
            other => other?,
        };
        let value = out.total.item();
        if !value.is_finite() {
            let per_sample: Vec<f64> = out.per_sample.iter().map(Tensor::item).collect();
            return Err(Error::numeric(format!(
                "loss is {value} at step {step}; per-sample CTC {per_sample:?}\n{}",
                tensor_dump(&params)
            )));
        }
        out.total.backward()?;
        let bad_grad = params
            .iter()
            .find(|(_, t)| t.grad().is_some_and(|g| g.iter().any(|x| !x.is_finite())));
        if let Some((name, _)) = bad_grad {
            return Err(Error::numeric(format!(
                "non-finite gradient for {name} at step {step}\n{}",
                tensor_dump(&params)
            )));
        }
        let lr = schedule.lr_at(step);
        apply_update(&params, &mut velocity, lr, schedule.weight_decay, cfg.momentum);
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!("step {step:>5}  lr {lr:.3e}  loss {value:.6}");
        }
        trace.push(StepRecord {
            step,
            lr,
            lambda: step_loss.lambda,
            loss: value,
        });
    }
    for (_, p) in &params {
        p.zero_grad();
    }

    let (eval, counts) = macs::measure(|| evaluate(model, data));
    let report = RunReport {
        seed,
        steps: cfg.steps,
        num_params: model.num_params(),
        lambda: loss.lambda,
        alpha: loss.alpha,
        gamma: loss.gamma,
        losses: trace.iter().map(|r| r.loss).collect(),
        eval: eval?,
        macs_per_epoch: counts.into(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { trace, report })
}

/// Greedy-decode accuracy and mean CTC loss over `data`.
pub fn evaluate(model: &Model, data: &[Utterance]) -> Result<EvalReport> {
    no_grad(|| {
        let mut exact = 0;
        let mut errors = 0;
        let mut reference = 0;
        let mut loss = 0.0;
        for u in data {
            let lp = model.forward(&u.waveform)?;
            let hyp = greedy_decode(&lp)?;
            if hyp.symbols() == u.labels.symbols() {
                exact += 1;
            }
            errors += edit_distance(hyp.symbols(), u.labels.symbols());
            reference += u.labels.len();
            loss += ctc_loss(&lp, &u.labels)?.item();
        }
        let n = data.len().max(1) as f64;
        Ok(EvalReport {
            num_utterances: data.len(),
            exact_match: exact as f64 / n,
            token_error_rate: if reference == 0 { 0.0 } else { errors as f64 / reference as f64 },
            mean_ctc_loss: loss / n,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::{synth_dataset, DatasetSpec};
    use crate::model::ModelConfig;

    fn setup() -> (Model, Vec<Utterance>) {
        let spec = DatasetSpec {
            num_samples: 3,
            frame_len: 16,
            sample_rate: 1600,
            vocab_size: 3,
            ..DatasetSpec::default()
        };
        let mut cfg = ModelConfig::tiny(8, 2, 3);
        cfg.frame_len = 16;
        (Model::new(cfg, 0).unwrap(), synth_dataset(&spec).unwrap())
    }

    #[test]
    fn loss_decreases_on_tiny_problem() {
        let (model, data) = setup();
        let schedule = ScheduleConfig::for_steps(30).scaled(500.0);
        let cfg = TrainConfig {
            steps: 30,
            momentum: 0.5,
            log_every: 0,
        };
        let out = train(&model, &data, &LossConfig::default(), &schedule, &cfg, 0).unwrap();
        let r = &out.report;
        assert_eq!(out.trace.len(), 30);
        assert!(r.final_loss().unwrap() < r.initial_loss().unwrap());
        assert!(r.macs_per_epoch.total > 0);
    }

    #[test]
    fn lambda_one_matches_weighted_ctc_trace() {
        let cfg = TrainConfig {
            steps: 4,
            momentum: 0.0,
            log_every: 0,
        };
        let schedule = ScheduleConfig::for_steps(4).scaled(100.0);
        let (m1, data) = setup();
        let (m2, _) = setup();
        let l1 = LossConfig {
            lambda: 1.0,
            ..LossConfig::default()
        };
        let l2 = LossConfig {
            lambda: 1.0,
            alpha: 3.0,
            gamma: 0.5,
            ..LossConfig::default()
        };
        let a = train(&m1, &data, &l1, &schedule, &cfg, 0).unwrap();
        let b = train(&m2, &data, &l2, &schedule, &cfg, 0).unwrap();
        assert_eq!(a.report.losses, b.report.losses);
    }

    #[test]
    fn nan_aborts_with_dump() {
        let (model, data) = setup();
        model.head.bias.set_data(vec![f64::NAN; 3]).unwrap();
        let cfg = TrainConfig {
            steps: 3,
            ..TrainConfig::default()
        };
        let err = train(&model, &data, &LossConfig::default(), &ScheduleConfig::for_steps(3), &cfg, 0).unwrap_err();
        match err {
            Error::Numeric(msg) => {
                assert!(msg.contains("step 0"));
                assert!(msg.contains("head.bias"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decay_shrinks_without_gradient() {
        let p = Tensor::param(&[2], vec![1.0, -2.0]).unwrap();
        let params = vec![("p".to_string(), p.clone())];
        let mut v = vec![vec![0.0; 2]];
        apply_update(&params, &mut v, 0.1, 0.5, 0.0);
        assert_eq!(p.to_vec(), vec![0.95, -1.9]);
    }
}
