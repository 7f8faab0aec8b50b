//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use echomsa::attention::{
    AttentionConfig, AttentionMask, EchoMsa, MultiHeadAttention, QkvConv, SeparableConv,
};
use echomsa::gate::{fuse, gate_coefficients, GateParams};
use echomsa::harness::bench::{echo_msa_macs, msa_macs};
use echomsa::harness::data::synth_dataset;
use echomsa::harness::gradcheck::{gradcheck, GradcheckConfig, Scope};
use echomsa::harness::run::{run_train, CHECKPOINT_FILE, TRACE_FILE};
use echomsa::harness::train::{evaluate, train};
use echomsa::harness::{RunConfig, ScheduleConfig};
use echomsa::loss::{
    ctc_loss, e_ctc_loss, focal_term, weighted_ctc, LabelSequence, LossConfig, DEFAULT_ALPHA, DEFAULT_GAMMA,
    DEFAULT_LAMBDA,
};
use echomsa::model::Model;
use echomsa::numerics::testing::random_tensor;
use echomsa::numerics::Tensor;
use echomsa::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sum over every length-T path that collapses to `labels`, by enumeration.
fn brute_force_ctc(lp: &[f64], frames: usize, vocab: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut path = vec![0usize; frames];
    loop {
        let mut collapsed: Vec<usize> = Vec::new();
        let mut prev = None;
        for &s in &path {
            if Some(s) != prev && s != 0 {
                collapsed.push(s);
            }
            prev = Some(s);
        }
        if collapsed == labels {
            total += path.iter().enumerate().map(|(t, &s)| lp[t * vocab + s]).sum::<f64>().exp();
        }
        let mut i = 0;
        while i < frames {
            path[i] += 1;
            if path[i] < vocab {
                break;
            }
            path[i] = 0;
            i += 1;
        }
        if i == frames {
            break;
        }
    }
    -total.ln()
}

fn ctc_oracle() -> Result<Verdict> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut mismatched = 0;
    for frames in 1..=6 {
        for vocab in 2..=4 {
            for label_len in 0..=3 {
                for _ in 0..4 {
                    let x = random_tensor(&mut rng, &[frames, vocab], 3.0, false);
                    let lp = x.log_softmax()?;
                    let labels: Vec<usize> = (0..label_len).map(|_| rng.random_range(1..vocab)).collect();
                    let y = LabelSequence::new(labels.clone(), vocab)?;
                    let fast = ctc_loss(&lp, &y)?.item();
                    let slow = brute_force_ctc(&lp.to_vec(), frames, vocab, &labels);
                    cases += 1;
                    if fast.is_infinite() || slow.is_infinite() {
                        if fast != slow {
                            mismatched += 1;
                        }
                        continue;
                    }
                    worst = worst.max((fast - slow).abs());
                }
            }
        }
    }
    let elapsed = start.elapsed();
    Ok(verdict(
        cases >= 200 && worst <= 1e-9 && mismatched == 0 && elapsed < Duration::from_secs(30),
        format!("{cases} distributions, max |diff| {worst:.2e}, {mismatched} infeasibility mismatches, {elapsed:.1?}"),
    ))
}

fn gradient_suite() -> Result<Verdict> {
    let start = Instant::now();
    let cfg = GradcheckConfig {
        scope: Scope::All,
        ..GradcheckConfig::default()
    };
    let report = gradcheck(&cfg, 0)?;
    let elapsed = start.elapsed();
    let worst = report.results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let ops: Vec<&str> = report.results.iter().map(|r| r.op.as_str()).collect();
    let required = [
        "matmul", "softmax", "conv", "relu", "sigmoid", "msa", "echo_msa", "gate", "ctc_loss", "focal_term", "block",
    ];
    let covered = required.iter().all(|r| ops.contains(r));
    Ok(verdict(
        report.passed() && covered && elapsed < Duration::from_secs(120),
        format!(
            "{} ops, worst rel err {worst:.2e}, failures {:?}, {elapsed:.1?}",
            ops.len(),
            report.failures()
        ),
    ))
}

fn attention_degeneracy() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (d, heads) = (8, 2);
    let msa = MultiHeadAttention::new(&mut rng, d, heads);
    let mut worst: f64 = 0.0;
    for len in [1, 5, 17] {
        let mut cfg = AttentionConfig::new(d, heads, 2 * len, 1)?;
        cfg.share_conv = true;
        let echo = EchoMsa::from_parts(cfg, msa.proj.clone(), QkvConv::Shared(SeparableConv::identity(d)))?;
        let x = random_tensor(&mut rng, &[len, d], 1.0, false);
        let a = echo.forward(&x)?.output.to_vec();
        let b = msa.forward(&x, &AttentionMask::All)?.output.to_vec();
        worst = worst.max(max_abs_diff(&a, &b));
    }
    Ok(verdict(worst <= 1e-10, format!("T in {{1, 5, 17}}, max |diff| {worst:.2e}")))
}

fn locality() -> Result<Verdict> {
    let (len, window, d) = (16, 4, 8);
    let mut violations = 0;
    let mut reached = 0;
    for kernel in [1, 4] {
        let mut rng = ChaCha8Rng::seed_from_u64(kernel as u64);
        let echo = EchoMsa::new(&mut rng, AttentionConfig::new(d, 2, window, kernel)?)?;
        let x = random_tensor(&mut rng, &[len, d], 1.0, false);
        let base = echo.forward(&x)?.output.to_vec();
        let bound = window / 2 + (kernel - 1);
        for j in 0..len {
            let mut moved = x.to_vec();
            for c in 0..d {
                moved[j * d + c] += 0.5;
            }
            let out = echo.forward(&Tensor::new(&[len, d], moved)?)?.output.to_vec();
            for tau in 0..len {
                let changed = out[tau * d..(tau + 1) * d] != base[tau * d..(tau + 1) * d];
                if changed && j.abs_diff(tau) > bound {
                    violations += 1;
                }
                if changed {
                    reached += 1;
                }
            }
        }
    }
    Ok(verdict(
        violations == 0 && reached > 0,
        format!("T=16, W=4, k in {{1, 4}}: {violations} out-of-reach changes, {reached} in-reach changes"),
    ))
}

fn gate_algebra() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (len, d) = (6, 4);
    let mut out_of_bounds = 0;
    for _ in 0..200 {
        let o1 = random_tensor(&mut rng, &[len, d], 3.0, false);
        let o2 = random_tensor(&mut rng, &[len, d], 3.0, false);
        let g = Tensor::new(&[len, d], (0..len * d).map(|_| rng.random_range(0.0..=1.0)).collect())?;
        let f = fuse(&o1, &o2, &g)?.to_vec();
        for ((v, a), b) in f.iter().zip(o1.to_vec()).zip(o2.to_vec()) {
            if *v < a.min(b) || *v > a.max(b) {
                out_of_bounds += 1;
            }
        }
    }
    let x = random_tensor(&mut rng, &[len, d], 1.0, false);
    let half = gate_coefficients(&x, &GateParams::zeros(d, 5))?;
    let half_dev = half.to_vec().iter().map(|g| (g - 0.5).abs()).fold(0.0, f64::max);

    let o1 = random_tensor(&mut rng, &[len, d], 1.0, false);
    let o2 = random_tensor(&mut rng, &[len, d], 1.0, false);
    let mut worst_sat: f64 = 0.0;
    for (bias, target) in [(20.0, &o1), (-20.0, &o2)] {
        let mut p = GateParams::new(&mut rng, d, 5, bias)?;
        p.w1 = random_tensor(&mut rng, &[d, 5], 1.0, true);
        let g = gate_coefficients(&x, &p)?;
        let f = fuse(&o1, &o2, &g)?;
        worst_sat = worst_sat.max(max_abs_diff(&f.to_vec(), &target.to_vec()));
    }
    Ok(verdict(
        out_of_bounds == 0 && half_dev == 0.0 && worst_sat <= 1e-8,
        format!(
            "{out_of_bounds} out-of-bounds fuse outputs, |G - 0.5| max {half_dev:.1e}, saturated recovery {worst_sat:.2e}"
        ),
    ))
}

fn loss_degeneracies() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let vocab = 4;
    let lps: Vec<Tensor> = (0..4)
        .map(|i| random_tensor(&mut rng, &[5 + i, vocab], 2.0, false).log_softmax())
        .collect::<Result<_>>()?;
    let ys: Vec<LabelSequence> = (0..4)
        .map(|i| LabelSequence::new((0..=i % 3).map(|k| 1 + (i + k) % 3).collect(), vocab))
        .collect::<Result<_>>()?;
    let lambda_one = LossConfig {
        lambda: 1.0,
        ..LossConfig::default()
    };
    let e = e_ctc_loss(&lps, &ys, &lambda_one)?;
    let per: Vec<Tensor> = lps.iter().zip(&ys).map(|(lp, y)| ctc_loss(lp, y)).collect::<Result<_>>()?;
    let w = weighted_ctc(&per, &[1.0; 4])?.item();
    let lambda_exact = e.total.item() == w;

    let xs = Tensor::new(&[5], vec![0.0, 0.3, 1.7, 4.0, 12.5])?;
    let focal = focal_term(&xs, 1.0, 0.0)?.item();
    let sum: f64 = xs.to_vec().iter().sum();
    let focal_exact = focal == sum;

    let defaults = LossConfig::default();
    let defaults_ok = (DEFAULT_LAMBDA, DEFAULT_ALPHA, DEFAULT_GAMMA) == (0.5, 0.25, 2.0)
        && (defaults.lambda, defaults.alpha, defaults.gamma) == (0.5, 0.25, 2.0);
    Ok(verdict(
        lambda_exact && focal_exact && defaults_ok,
        format!(
            "lambda=1 exact: {lambda_exact}, gamma=0 alpha=1 exact: {focal_exact}, defaults (0.5, 0.25, 2): {defaults_ok}"
        ),
    ))
}

fn complexity_scaling() -> Result<Verdict> {
    let start = Instant::now();
    let (d, heads, window, kernel) = (64, 4, 64, 4);
    let lens = [64, 128, 256];
    let echo: Vec<u64> = lens
        .iter()
        .map(|&t| echo_msa_macs(t, window, kernel, d, heads, 0))
        .collect::<Result<_>>()?;
    let full: Vec<u64> = lens.iter().map(|&t| msa_macs(t, d, heads, 0)).collect::<Result<_>>()?;
    let ratios = |v: &[u64]| -> Vec<f64> { v.windows(2).map(|w| w[1] as f64 / w[0] as f64).collect() };
    let (re, rf) = (ratios(&echo), ratios(&full));
    let elapsed = start.elapsed();
    let ok = re.iter().all(|r| (1.9..=2.1).contains(r))
        && rf.iter().all(|r| (3.8..=4.2).contains(r))
        && elapsed < Duration::from_secs(60);
    Ok(verdict(
        ok,
        format!("echo_msa doubling ratios {re:.3?}, full msa {rf:.3?}, {elapsed:.1?}"),
    ))
}

fn toy_overfit() -> Result<Verdict> {
    let start = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.model.preset = "tiny".into();
    cfg.model.model_dim = 32;
    cfg.model.num_heads = 4;
    cfg.data.num_samples = 20;
    cfg.train.steps = 2000;
    cfg.train.momentum = 0.9;
    cfg.train.log_every = 0;
    let model_cfg = cfg.model_config()?;
    let windows = model_cfg.block_windows();
    // Stage rates 6e-3 / 6e-4 / 6e-5: the default three-stage shape scaled by 100.
    let schedule = cfg.schedule_config()?.scaled(100.0);
    let data = synth_dataset(&cfg.data)?;
    let model = Model::new(model_cfg, 0)?;
    let out = train(&model, &data, &cfg.loss, &schedule, &cfg.train, 0)?;
    let eval = evaluate(&model, &data)?;
    let elapsed = start.elapsed();
    Ok(verdict(
        windows == [4, 16, 64, 256]
            && data.len() == 20
            && eval.exact_match >= 0.9
            && elapsed < Duration::from_secs(600),
        format!(
            "d=32, windows {windows:?}, {} utterances, {} steps: loss {:.3} -> {:.4}, exact match {:.2}, {elapsed:.1?}",
            data.len(),
            out.trace.len(),
            out.report.initial_loss().unwrap_or(f64::NAN),
            out.report.final_loss().unwrap_or(f64::NAN),
            eval.exact_match
        ),
    ))
}

fn schedule_conformance() -> Result<Verdict> {
    let cfg = ScheduleConfig::for_steps(2000);
    let mut ok = cfg.stage_rates == [6e-5, 6e-6, 6e-7];
    let mut start = 0;
    let mut lines = Vec::new();
    for (s, &end) in cfg.stage_boundaries.iter().enumerate() {
        let base = cfg.stage_rates[s];
        let at_start = cfg.lr_at(start);
        let at_mid = cfg.lr_at(start + (end - start) / 2);
        ok &= at_start == base && at_mid == base / 2.0;
        lines.push(format!("{at_start:e}@{start} {at_mid:e}@{}", start + (end - start) / 2));
        start = end;
    }
    Ok(verdict(ok, lines.join(", ")))
}

fn determinism() -> Result<Verdict> {
    let dirs = [tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir")];
    let mut cfg = RunConfig::default();
    cfg.seed = 11;
    cfg.model.model_dim = 16;
    cfg.data.num_samples = 4;
    cfg.train.steps = 15;
    cfg.train.momentum = 0.9;
    cfg.train.log_every = 0;
    cfg.schedule.stage_rates = vec![6e-3, 6e-4, 6e-5];
    let mut blobs = Vec::new();
    for dir in &dirs {
        run_train(&cfg, dir.path())?;
        let ckpt = std::fs::read(dir.path().join(CHECKPOINT_FILE)).expect("checkpoint");
        let trace = std::fs::read(dir.path().join(TRACE_FILE)).expect("trace");
        blobs.push((ckpt, trace));
    }
    let same_ckpt = blobs[0].0 == blobs[1].0;
    let same_trace = blobs[0].1 == blobs[1].1;
    Ok(verdict(
        same_ckpt && same_trace,
        format!(
            "checkpoints identical: {same_ckpt} ({} bytes), loss traces identical: {same_trace}",
            blobs[0].0.len()
        ),
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Result<Verdict>); 10] = [
        ("CTC oracle equivalence", ctc_oracle),
        ("gradient suite", gradient_suite),
        ("attention degeneracy", attention_degeneracy),
        ("locality", locality),
        ("gate algebra", gate_algebra),
        ("loss degeneracies", loss_degeneracies),
        ("complexity scaling", complexity_scaling),
        ("toy overfit", toy_overfit),
        ("schedule conformance", schedule_conformance),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let v = check().unwrap_or_else(|e| verdict(false, format!("error: {e}")));
        if !v.passed {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<24} {}  {}",
            i + 1,
            name,
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
