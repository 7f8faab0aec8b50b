//! Attention cost benchmark: counted MACs and wall time for full versus
//! windowed attention over a grid of lengths, windows and kernel sizes.
//!
//! MACs cover the attention kernels and, for the windowed variant, the
//! Q/K/V convolutions. The Q/K/V/output projections are identical for
//! both variants and are left out of the count.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionMask, EchoMsa, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::numerics::testing::random_tensor;
use crate::numerics::{macs, no_grad};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub windows: Vec<usize>,
    pub kernels: Vec<usize>,
    pub model_dim: usize,
    pub num_heads: usize,
    /// Timed repetitions per grid point; the fastest is reported.
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            lengths: vec![64, 128, 256],
            windows: vec![4, 16, 64],
            kernels: vec![1, 4],
            model_dim: 64,
            num_heads: 4,
            repeats: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    Msa,
    EchoMsa,
}

/// One CSV row. `window` and `kernel` are empty for full attention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: BenchMode,
    #[serde(rename = "T")]
    pub len: usize,
    #[serde(rename = "W")]
    pub window: Option<usize>,
    #[serde(rename = "k")]
    pub kernel: Option<usize>,
    pub macs: u64,
    pub seconds: f64,
}

fn timed<R>(repeats: usize, mut f: impl FnMut() -> Result<R>) -> Result<(u64, f64)> {
    let mut best = f64::INFINITY;
    let mut counted = 0;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let (out, counts) = macs::measure(&mut f);
        best = best.min(start.elapsed().as_secs_f64());
        out?;
        counted = counts.conv + counts.attention;
    }
    Ok((counted, best))
}

/// Counted MACs (attention kernels plus convolutions) for one forward pass
/// of full attention at length `len`.
pub fn msa_macs(len: usize, model_dim: usize, num_heads: usize, seed: u64) -> Result<u64> {
    bench_msa(len, model_dim, num_heads, 1, seed).map(|r| r.macs)
}

/// Counted MACs for one forward pass of windowed attention.
pub fn echo_msa_macs(len: usize, window: usize, kernel: usize, model_dim: usize, num_heads: usize, seed: u64) -> Result<u64> {
    bench_echo(len, window, kernel, model_dim, num_heads, 1, seed).map(|r| r.macs)
}

fn bench_msa(len: usize, d: usize, heads: usize, repeats: usize, seed: u64) -> Result<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let msa = MultiHeadAttention::new(&mut rng, d, heads);
    let x = random_tensor(&mut rng, &[len, d], 1.0, false);
    let (macs, seconds) = no_grad(|| timed(repeats, || msa.forward(&x, &AttentionMask::All)))?;
    Ok(BenchRow {
        mode: BenchMode::Msa,
        len,
        window: None,
        kernel: None,
        macs,
        seconds,
    })
}

fn bench_echo(len: usize, window: usize, kernel: usize, d: usize, heads: usize, repeats: usize, seed: u64) -> Result<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let echo = EchoMsa::new(&mut rng, AttentionConfig::new(d, heads, window, kernel)?)?;
    let x = random_tensor(&mut rng, &[len, d], 1.0, false);
    let (macs, seconds) = no_grad(|| timed(repeats, || echo.forward(&x)))?;
    Ok(BenchRow {
        mode: BenchMode::EchoMsa,
        len,
        window: Some(window),
        kernel: Some(kernel),
        macs,
        seconds,
    })
}

pub fn bench_attention(cfg: &BenchConfig, seed: u64) -> Result<Vec<BenchRow>> {
    if cfg.lengths.is_empty() || cfg.lengths.contains(&0) {
        return Err(Error::Config("bench.lengths must be non-empty and positive".into()));
    }
    let mut rows = Vec::new();
    for &len in &cfg.lengths {
        rows.push(bench_msa(len, cfg.model_dim, cfg.num_heads, cfg.repeats, seed)?);
        for &window in &cfg.windows {
            for &kernel in &cfg.kernels {
                rows.push(bench_echo(len, window, kernel, cfg.model_dim, cfg.num_heads, cfg.repeats, seed)?);
            }
        }
    }
    Ok(rows)
}

/// Writes rows as CSV with header `mode,T,W,k,macs,seconds`.
pub fn write_csv(rows: &[BenchRow], out: impl Write) -> Result<()> {
    let err = |e: csv::Error| Error::Format {
        what: "bench csv",
        detail: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Format {
        what: "bench csv",
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counted_macs_match_closed_forms() {
        let (d, h) = (8, 2);
        // scores + mixing: 2 * T * T * d
        assert_eq!(msa_macs(10, d, h, 0).unwrap(), 2 * 10 * 10 * 8);
        // band width 2 * 2 + 1 = 5; three depthwise (k d per row) and
        // pointwise (d^2 per row) convolutions
        let conv = 3 * 10 * (3 * d + d * d);
        assert_eq!(echo_msa_macs(10, 4, 3, d, h, 0).unwrap() as usize, 2 * 10 * 5 * d + conv);
    }

    #[test]
    fn wide_window_costs_at_least_full_attention() {
        for len in [3, 8, 20] {
            let full = msa_macs(len, 8, 2, 0).unwrap();
            assert!(echo_msa_macs(len, 2 * len, 1, 8, 2, 0).unwrap() >= full);
        }
    }

    #[test]
    fn csv_layout() {
        let cfg = BenchConfig {
            lengths: vec![4],
            windows: vec![2],
            kernels: vec![1],
            model_dim: 4,
            num_heads: 1,
            repeats: 1,
        };
        let rows = bench_attention(&cfg, 0).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "mode,T,W,k,macs,seconds");
        assert!(lines[1].starts_with("msa,4,,,128,"));
        assert!(lines[2].starts_with("echo_msa,4,2,1,"));
    }
}
