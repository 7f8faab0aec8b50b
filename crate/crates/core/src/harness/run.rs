//! Subcommand bodies shared by the CLI and the integration tests. Each one
//! reads a [`RunConfig`], writes its artifacts under `out`, and returns
//! what it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use super::bench::{bench_attention, write_csv, BenchRow};
use super::config::RunConfig;
use super::data::{synth_dataset, write_corpus, DatasetSpec};
use super::gradcheck::{gradcheck, GradcheckReport};
use super::report::{write_json, write_trace, EvalReport, RunReport};
use super::train::{evaluate, train};
use crate::error::{Error, Result};
use crate::model::{checkpoint, Model};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const REPORT_FILE: &str = "report.json";
pub const EVAL_FILE: &str = "eval.json";
pub const BENCH_FILE: &str = "bench.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.json";
pub const CONFIG_FILE: &str = "config.toml";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains from scratch and writes the checkpoint, loss trace, report and
/// resolved config.
pub fn run_train(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    ensure_dir(out)?;
    let model_cfg = cfg.model_config()?;
    let schedule = cfg.schedule_config()?;
    let data = cfg.data.load()?;
    let model = Model::new(model_cfg, cfg.seed)?;
    log::info!(
        "training {} params on {} utterances for {} steps",
        model.config.param_count(),
        data.len(),
        cfg.train.steps
    );
    let outcome = train(&model, &data, &cfg.loss, &schedule, &cfg.train, cfg.seed)?;
    let config_path = out.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_toml()?).map_err(|e| Error::io(&config_path, e))?;
    checkpoint::save(&model, out.join(CHECKPOINT_FILE))?;
    write_trace(&out.join(TRACE_FILE), &outcome.trace)?;
    write_json(&out.join(REPORT_FILE), &outcome.report)?;
    Ok(outcome.report)
}

/// Greedy-decode evaluation of a saved checkpoint on the configured data.
pub fn run_eval(cfg: &RunConfig, checkpoint_path: &Path, out: &Path) -> Result<EvalReport> {
    ensure_dir(out)?;
    let model = checkpoint::load(checkpoint_path)?;
    let data = cfg.data.load()?;
    let report = evaluate(&model, &data)?;
    write_json(&out.join(EVAL_FILE), &report)?;
    Ok(report)
}

pub fn run_bench(cfg: &RunConfig, out: &Path) -> Result<Vec<BenchRow>> {
    ensure_dir(out)?;
    let rows = bench_attention(&cfg.bench, cfg.seed)?;
    let path = out.join(BENCH_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_csv(&rows, file)?;
    Ok(rows)
}

pub fn run_gradcheck(cfg: &RunConfig, out: &Path) -> Result<GradcheckReport> {
    ensure_dir(out)?;
    let report = gradcheck(&cfg.gradcheck, cfg.seed)?;
    write_json(&out.join(GRADCHECK_FILE), &report)?;
    Ok(report)
}

/// Writes the synthetic corpus as WAV files plus a manifest.
pub fn run_synth(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let spec = DatasetSpec {
        seed: cfg.data.seed,
        ..cfg.data.clone()
    };
    let data = synth_dataset(&spec)?;
    write_corpus(out, &data, spec.sample_rate)
}
