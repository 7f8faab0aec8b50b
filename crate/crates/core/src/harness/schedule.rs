//! Stage-based learning rate with cosine annealing inside each stage.
//!
//! Stage `s` covers steps `[b[s-1], b[s])` (with `b[-1] = 0`) and uses
//! `rate = r[s] * 0.5 * (1 + cos(pi * progress))`, where `progress` runs
//! from 0 at the stage start towards 1 at its end. Steps at or past the
//! final boundary get `min_rate`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STAGE_RATES: [f64; 3] = [6e-5, 6e-6, 6e-7];
/// Share of the total steps given to each stage.
pub const DEFAULT_STAGE_FRACTIONS: [f64; 3] = [0.6, 0.3, 0.1];
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.0005;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub stage_rates: Vec<f64>,
    /// Exclusive end step of each stage.
    pub stage_boundaries: Vec<usize>,
    pub weight_decay: f64,
    pub min_rate: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig::for_steps(1000)
    }
}

impl ScheduleConfig {
    /// Default rates with boundaries splitting `total_steps` 60/30/10.
    pub fn for_steps(total_steps: usize) -> Self {
        ScheduleConfig {
            stage_rates: DEFAULT_STAGE_RATES.to_vec(),
            stage_boundaries: split_steps(total_steps, &DEFAULT_STAGE_FRACTIONS),
            weight_decay: DEFAULT_WEIGHT_DECAY,
            min_rate: 0.0,
        }
    }

    /// Same stage layout with every rate multiplied by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        for r in &mut self.stage_rates {
            *r *= factor;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_rates.is_empty() || self.stage_rates.len() != self.stage_boundaries.len() {
            return Err(Error::Config(format!(
                "{} stage rates for {} boundaries",
                self.stage_rates.len(),
                self.stage_boundaries.len()
            )));
        }
        if !self.stage_rates.iter().all(|r| r.is_finite() && *r > 0.0) {
            return Err(Error::Config("stage rates must be finite and positive".into()));
        }
        if self.stage_rates.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("stage rates must be strictly decreasing".into()));
        }
        if self.stage_boundaries[0] == 0 || self.stage_boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("stage boundaries must be positive and strictly increasing".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.min_rate >= 0.0) {
            return Err(Error::Config("weight_decay and min_rate must be >= 0".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.stage_boundaries.last().copied().unwrap_or(0)
    }

    /// Stage index and its `[start, end)` step range.
    pub fn stage_of(&self, step: usize) -> Option<(usize, usize, usize)> {
        let mut start = 0;
        for (s, &end) in self.stage_boundaries.iter().enumerate() {
            if step < end {
                return Some((s, start, end));
            }
            start = end;
        }
        None
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        match self.stage_of(step) {
            Some((s, start, end)) => {
                let progress = (step - start) as f64 / (end - start) as f64;
                self.stage_rates[s] * 0.5 * (1.0 + (PI * progress).cos())
            }
            None => self.min_rate,
        }
    }
}

/// Cumulative boundaries from fractions of `total`; the last boundary is
/// always `total`, and every stage keeps at least one step when
/// `total >= fractions.len()`.
pub fn split_steps(total: usize, fractions: &[f64]) -> Vec<usize> {
    let sum: f64 = fractions.iter().sum();
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(fractions.len());
    let mut prev = 0;
    for (i, f) in fractions.iter().enumerate() {
        acc += f;
        let b = if i + 1 == fractions.len() {
            total
        } else {
            let stages_left = fractions.len() - 1 - i;
            ((acc / sum * total as f64).round() as usize)
                .max(prev + 1)
                .min(total.saturating_sub(stages_left))
        };
        out.push(b);
        prev = b;
    }
    out
}
