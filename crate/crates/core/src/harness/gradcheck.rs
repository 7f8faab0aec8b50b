//! Finite-difference checks for every differentiable op, grouped by scope.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionMask, EchoMsa, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::gate::{fuse, gate_coefficients, GateParams};
use crate::layers::HasParams;
use crate::loss::{ctc_loss, e_ctc_loss, focal_term, LabelSequence, LossConfig};
use crate::model::{EchoBlock, Model, ModelConfig};
use crate::numerics::gradcheck::{check_gradients, GradCheckOptions, GradCheckOutcome};
use crate::numerics::testing::random_tensor;
use crate::numerics::{depthwise_separable_conv1d, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Numerics,
    Attention,
    Gate,
    Loss,
    Model,
    #[default]
    All,
}

impl Scope {
    pub fn includes(self, other: Scope) -> bool {
        self == Scope::All || self == other
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "numerics" => Ok(Scope::Numerics),
            "attention" => Ok(Scope::Attention),
            "gate" => Ok(Scope::Gate),
            "loss" => Ok(Scope::Loss),
            "model" => Ok(Scope::Model),
            "all" => Ok(Scope::All),
            other => Err(Error::Config(format!("unknown gradcheck scope {other:?}"))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scope::Numerics => "numerics",
            Scope::Attention => "attention",
            Scope::Gate => "gate",
            Scope::Loss => "loss",
            Scope::Model => "model",
            Scope::All => "all",
        };
        f.pad(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub scope: Scope,
    pub step: f64,
    pub tolerance: f64,
    /// Probed entries per tensor for the block and model checks.
    pub max_probes: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        let d = GradCheckOptions::default();
        GradcheckConfig {
            scope: Scope::All,
            step: d.step,
            tolerance: d.tolerance,
            max_probes: 6,
        }
    }
}

type CheckFn = Box<dyn Fn(&mut ChaCha8Rng, GradCheckOptions) -> Result<GradCheckOutcome>>;

/// One named finite-difference check.
pub struct OpCheck {
    pub scope: Scope,
    pub name: String,
    run: CheckFn,
}

impl OpCheck {
    pub fn new(
        scope: Scope,
        name: impl Into<String>,
        run: impl Fn(&mut ChaCha8Rng, GradCheckOptions) -> Result<GradCheckOutcome> + 'static,
    ) -> Self {
        OpCheck {
            scope,
            name: name.into(),
            run: Box::new(run),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpResult {
    pub scope: Scope,
    pub op: String,
    pub max_rel_error: f64,
    pub probes: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub results: Vec<OpResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.results.iter().filter(|r| !r.passed).map(|r| r.op.as_str()).collect()
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(
                f,
                "{:<4} {:<10} {:<14} max rel err {:.3e} over {} probes",
                if r.passed { "ok" } else { "FAIL" },
                r.scope,
                r.op,
                r.max_rel_error,
                r.probes
            )?;
        }
        Ok(())
    }
}

/// Weighted sum with fixed random weights, so that every output element
/// contributes a distinct gradient.
fn probe_sum(rng: &mut ChaCha8Rng, out: &Tensor) -> Result<impl Fn(&Tensor) -> Result<Tensor>> {
    let w = random_tensor(rng, out.shape(), 1.0, false);
    Ok(move |t: &Tensor| Ok(t.mul(&w)?.sum()))
}

/// Random values kept at least `margin` away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(margin..1.0);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::param(shape, data).expect("valid shape")
}

fn randomize(params: &[(String, Tensor)], rng: &mut ChaCha8Rng, scale: f64) {
    for (_, p) in params {
        let v = (0..p.numel()).map(|_| rng.random_range(-scale..scale)).collect();
        p.set_data(v).expect("same length");
    }
}

fn unary(name: &'static str, scope: Scope, f: fn(&Tensor) -> Result<Tensor>) -> OpCheck {
    OpCheck::new(scope, name, move |rng, opts| {
        let x = away_from_zero(rng, &[4, 5], 0.05);
        let w = probe_sum(rng, &f(&x)?)?;
        check_gradients(&[x.clone()], || w(&f(&x)?), opts)
    })
}

fn tensor_checks() -> Vec<OpCheck> {
    let s = Scope::Numerics;
    vec![
        OpCheck::new(s, "matmul", |rng, opts| {
            let a = random_tensor(rng, &[3, 4], 1.0, true);
            let b = random_tensor(rng, &[4, 5], 1.0, true);
            let w = probe_sum(rng, &a.matmul(&b)?)?;
            check_gradients(&[a.clone(), b.clone()], || w(&a.matmul(&b)?), opts)
        }),
        unary("softmax", s, |x| x.softmax(1)),
        unary("log_softmax", s, |x| x.log_softmax()),
        unary("relu", s, |x| Ok(x.relu())),
        unary("sigmoid", s, |x| Ok(x.sigmoid())),
        unary("exp", s, |x| Ok(x.exp())),
        OpCheck::new(s, "layer_norm", |rng, opts| {
            let x = random_tensor(rng, &[4, 6], 1.0, true);
            let g = random_tensor(rng, &[6], 1.0, true);
            let b = random_tensor(rng, &[6], 1.0, true);
            let w = probe_sum(rng, &x.layer_norm(&g, &b, 1e-5)?)?;
            check_gradients(&[x.clone(), g.clone(), b.clone()], || w(&x.layer_norm(&g, &b, 1e-5)?), opts)
        }),
        OpCheck::new(s, "conv", |rng, opts| {
            let x = random_tensor(rng, &[7, 4], 1.0, true);
            let dw = random_tensor(rng, &[4, 4], 1.0, true);
            let pw = random_tensor(rng, &[4, 4], 1.0, true);
            let f = || depthwise_separable_conv1d(&x, &dw, &pw);
            let w = probe_sum(rng, &f()?)?;
            check_gradients(&[x.clone(), dw.clone(), pw.clone()], || w(&f()?), opts)
        }),
    ]
}

fn attention_checks() -> Vec<OpCheck> {
    let s = Scope::Attention;
    vec![
        OpCheck::new(s, "msa", |rng, opts| {
            let msa = MultiHeadAttention::new(rng, 6, 2);
            let x = random_tensor(rng, &[5, 6], 1.0, true);
            let f = || Ok(msa.forward(&x, &AttentionMask::All)?.output);
            let w = probe_sum(rng, &f()?)?;
            let mut inputs = vec![x.clone()];
            inputs.extend(msa.named_params().into_iter().map(|(_, t)| t));
            check_gradients(&inputs, || w(&f()?), opts)
        }),
        OpCheck::new(s, "echo_msa", |rng, opts| {
            let echo = EchoMsa::new(rng, AttentionConfig::new(6, 2, 4, 3)?)?;
            randomize(&echo.named_params(), rng, 0.6);
            let x = random_tensor(rng, &[9, 6], 1.0, true);
            let f = || Ok(echo.forward(&x)?.output);
            let w = probe_sum(rng, &f()?)?;
            let mut inputs = vec![x.clone()];
            inputs.extend(echo.named_params().into_iter().map(|(_, t)| t));
            check_gradients(&inputs, || w(&f()?), opts)
        }),
    ]
}

fn gate_checks() -> Vec<OpCheck> {
    let s = Scope::Gate;
    vec![
        OpCheck::new(s, "gate", |rng, opts| {
            let p = GateParams::new(rng, 4, 5, 0.0)?;
            randomize(&p.named_params(), rng, 1.0);
            let x = random_tensor(rng, &[3, 4], 1.0, true);
            let w = probe_sum(rng, &gate_coefficients(&x, &p)?)?;
            let mut inputs = vec![x.clone()];
            inputs.extend(p.named_params().into_iter().map(|(_, t)| t));
            check_gradients(&inputs, || w(&gate_coefficients(&x, &p)?), opts)
        }),
        OpCheck::new(s, "fuse", |rng, opts| {
            let o1 = random_tensor(rng, &[3, 4], 1.0, true);
            let o2 = random_tensor(rng, &[3, 4], 1.0, true);
            let g = random_tensor(rng, &[3, 4], 2.0, true);
            let f = || fuse(&o1, &o2, &g.sigmoid());
            let w = probe_sum(rng, &f()?)?;
            check_gradients(&[o1.clone(), o2.clone(), g.clone()], || w(&f()?), opts)
        }),
    ]
}

fn loss_checks() -> Vec<OpCheck> {
    let s = Scope::Loss;
    vec![
        OpCheck::new(s, "ctc_loss", |rng, opts| {
            let x = random_tensor(rng, &[6, 4], 2.0, true);
            let y = LabelSequence::new(vec![1, 2, 2], 4)?;
            check_gradients(&[x.clone()], || ctc_loss(&x.log_softmax()?, &y), opts)
        }),
        OpCheck::new(s, "focal_term", |rng, opts| {
            let x = Tensor::param(&[4], (0..4).map(|_| rng.random_range(0.1..3.0)).collect())?;
            check_gradients(&[x.clone()], || focal_term(&x, 0.25, 2.0), opts)
        }),
        OpCheck::new(s, "e_ctc", |rng, opts| {
            let xs: Vec<Tensor> = (0..3).map(|_| random_tensor(rng, &[5, 3], 2.0, true)).collect();
            let ys = vec![
                LabelSequence::new(vec![1], 3)?,
                LabelSequence::new(vec![1, 2], 3)?,
                LabelSequence::new(vec![2, 2], 3)?,
            ];
            let cfg = LossConfig::default();
            let f = || {
                let lps = xs.iter().map(|x| x.log_softmax()).collect::<Result<Vec<_>>>()?;
                Ok(e_ctc_loss(&lps, &ys, &cfg)?.total)
            };
            check_gradients(&xs, f, opts)
        }),
    ]
}

fn model_checks(max_probes: usize) -> Vec<OpCheck> {
    let s = Scope::Model;
    let capped = move |opts: GradCheckOptions| GradCheckOptions {
        max_probes: Some(max_probes),
        ..opts
    };
    vec![
        OpCheck::new(s, "block", move |rng, opts| {
            let attn = AttentionConfig::new(8, 2, 4, 3)?;
            let block = EchoBlock::new(rng, attn, 6, 12, 0.0, 1.0)?;
            // At +-0.5 attention is nearly flat and some query/key gradients
            // fall to ~1e-8, below what central differences resolve.
            randomize(&block.named_params(), rng, 1.0);
            let x = random_tensor(rng, &[6, 8], 1.0, true);
            let f = || block.forward(&x, 4, &AttentionMask::All);
            let w = probe_sum(rng, &f()?)?;
            let mut inputs = vec![x.clone()];
            inputs.extend(block.named_params().into_iter().map(|(_, t)| t));
            check_gradients(&inputs, || w(&f()?), capped(opts))
        }),
        OpCheck::new(s, "model", move |rng, opts| {
            let mut cfg = ModelConfig::tiny(8, 2, 4);
            cfg.frame_len = 8;
            cfg.ffn_hidden = 8;
            cfg.gate_hidden = 4;
            let model = Model::new(cfg, rng.random())?;
            randomize(&model.named_params(), rng, 1.0);
            let wave: Vec<f64> = (0..8 * 7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = LabelSequence::new(vec![1, 3, 3], 4)?;
            let inputs: Vec<Tensor> = model.named_params().into_iter().map(|(_, t)| t).collect();
            check_gradients(&inputs, || ctc_loss(&model.forward(&wave)?, &y), capped(opts))
        }),
    ]
}

/// Every built-in check, in report order.
pub fn builtin_checks(cfg: &GradcheckConfig) -> Vec<OpCheck> {
    let mut all = tensor_checks();
    all.extend(attention_checks());
    all.extend(gate_checks());
    all.extend(loss_checks());
    all.extend(model_checks(cfg.max_probes));
    all
}

/// Runs the checks that fall under `cfg.scope`. Each check draws its data
/// from its own generator seeded by `seed` and its position.
pub fn run_checks(checks: &[OpCheck], cfg: &GradcheckConfig, seed: u64) -> Result<GradcheckReport> {
    let opts = GradCheckOptions {
        step: cfg.step,
        tolerance: cfg.tolerance,
        max_probes: None,
        seed,
    };
    let mut results = Vec::new();
    for (i, check) in checks.iter().enumerate() {
        if !cfg.scope.includes(check.scope) {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let out = (check.run)(&mut rng, opts)?;
        results.push(OpResult {
            scope: check.scope,
            op: check.name.clone(),
            max_rel_error: out.max_rel_error,
            probes: out.probes,
            passed: out.passed(),
        });
    }
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        results,
    })
}

pub fn gradcheck(cfg: &GradcheckConfig, seed: u64) -> Result<GradcheckReport> {
    run_checks(&builtin_checks(cfg), cfg, seed)
}
