use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use echomsa::harness::gradcheck::Scope;
use echomsa::harness::run::{self, BENCH_FILE, CHECKPOINT_FILE};
use echomsa::harness::RunConfig;
use echomsa::Error;

/// Windowed multi-scale attention speech encoder: training and diagnostics.
#[derive(Parser)]
#[command(name = "echomsa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train from scratch; writes model.ckpt, loss_trace.csv and report.json.
    Train(Common),
    /// Greedy-decode accuracy of a checkpoint on the configured data.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate; defaults to <out>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Attention MAC and timing benchmark; writes bench.csv.
    Bench(Common),
    /// Finite-difference gradient checks.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// numerics, attention, gate, loss, model or all.
        #[arg(long)]
        scope: Option<Scope>,
    },
    /// Write the synthetic corpus as WAV files plus manifest.csv.
    Synth(Common),
}

enum Failure {
    Usage(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numeric(_) => Failure::Numeric(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train(c) => {
            let cfg = load(&c)?;
            let report = run::run_train(&cfg, &c.out)?;
            println!(
                "loss {:.6} -> {:.6}  exact match {:.3}  token error rate {:.3}  ({:.1}s)",
                report.initial_loss().unwrap_or(f64::NAN),
                report.final_loss().unwrap_or(f64::NAN),
                report.eval.exact_match,
                report.eval.token_error_rate,
                report.wall_clock_seconds
            );
            println!("wrote {}", c.out.join(CHECKPOINT_FILE).display());
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load(&common)?;
            let ckpt = checkpoint.unwrap_or_else(|| common.out.join(CHECKPOINT_FILE));
            let r = run::run_eval(&cfg, &ckpt, &common.out)?;
            println!(
                "{} utterances  exact match {:.3}  token error rate {:.3}  mean CTC {:.6}",
                r.num_utterances, r.exact_match, r.token_error_rate, r.mean_ctc_loss
            );
        }
        Command::Bench(c) => {
            let cfg = load(&c)?;
            let rows = run::run_bench(&cfg, &c.out)?;
            println!("{} rows written to {}", rows.len(), c.out.join(BENCH_FILE).display());
        }
        Command::Gradcheck { common, scope } => {
            let mut cfg = load(&common)?;
            if let Some(s) = scope {
                cfg.gradcheck.scope = s;
            }
            let report = run::run_gradcheck(&cfg, &common.out)?;
            print!("{report}");
            if !report.passed() {
                return Err(Failure::Numeric(format!(
                    "gradient check failed for: {}",
                    report.failures().join(", ")
                )));
            }
        }
        Command::Synth(c) => {
            let cfg = load(&c)?;
            let manifest = run::run_synth(&cfg, &c.out)?;
            println!("wrote {}", manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
