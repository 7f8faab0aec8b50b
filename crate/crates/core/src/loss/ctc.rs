//! CTC negative log-likelihood via the log-space forward-backward recursion.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::{LabelSequence, BLANK};

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Labels interleaved with blanks: `[_, y1, _, y2, ..., _]`.
fn extend(labels: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(BLANK);
    for &l in labels {
        ext.push(l);
        ext.push(BLANK);
    }
    ext
}

/// Whether state `s` may be entered directly from `s - 2` (skipping a blank).
fn can_skip(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

struct Lattice {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    log_z: f64,
}

fn lattice(lp: &[f64], frames: usize, vocab: usize, ext: &[usize]) -> Lattice {
    let states = ext.len();
    let at = |t: usize, s: usize| t * states + s;
    let emit = |t: usize, s: usize| lp[t * vocab + ext[s]];

    let mut alpha = vec![f64::NEG_INFINITY; frames * states];
    alpha[at(0, 0)] = emit(0, 0);
    if states > 1 {
        alpha[at(0, 1)] = emit(0, 1);
    }
    for t in 1..frames {
        for s in 0..states {
            let mut acc = alpha[at(t - 1, s)];
            if s >= 1 {
                acc = log_add(acc, alpha[at(t - 1, s - 1)]);
            }
            if can_skip(ext, s) {
                acc = log_add(acc, alpha[at(t - 1, s - 2)]);
            }
            if acc != f64::NEG_INFINITY {
                alpha[at(t, s)] = acc + emit(t, s);
            }
        }
    }

    let mut beta = vec![f64::NEG_INFINITY; frames * states];
    let last = frames - 1;
    beta[at(last, states - 1)] = emit(last, states - 1);
    if states > 1 {
        beta[at(last, states - 2)] = emit(last, states - 2);
    }
    for t in (0..last).rev() {
        for s in 0..states {
            let mut acc = beta[at(t + 1, s)];
            if s + 1 < states {
                acc = log_add(acc, beta[at(t + 1, s + 1)]);
            }
            if s + 2 < states && can_skip(ext, s + 2) {
                acc = log_add(acc, beta[at(t + 1, s + 2)]);
            }
            if acc != f64::NEG_INFINITY {
                beta[at(t, s)] = acc + emit(t, s);
            }
        }
    }

    let mut log_z = alpha[at(last, states - 1)];
    if states > 1 {
        log_z = log_add(log_z, alpha[at(last, states - 2)]);
    }
    Lattice { alpha, beta, log_z }
}

/// CTC loss `-log sum_pi P(pi)` over all frame-level paths `pi` that
/// collapse to `labels`, for per-frame log-probabilities `log_probs[T, V]`
/// with blank at index 0.
///
/// The rows are expected to be log-softmax outputs; unnormalized rows are
/// accepted and give the negative log of the summed path scores.
///
/// When the label sequence cannot be aligned in `T` frames (see
/// [`LabelSequence::is_feasible`]) the loss is `+inf` and its gradient is
/// zero everywhere.
pub fn ctc_loss(log_probs: &Tensor, labels: &LabelSequence) -> Result<Tensor> {
    let (frames, vocab) = match log_probs.shape() {
        [t, v] => (*t, *v),
        s => return Err(Error::dim("ctc_loss", s, &[0, labels.vocab_size()])),
    };
    if vocab != labels.vocab_size() {
        return Err(Error::dim("ctc_loss", log_probs.shape(), &[frames, labels.vocab_size()]));
    }
    if !labels.is_feasible(frames) {
        return Ok(Tensor::from_op(
            "ctc_loss",
            Vec::new(),
            vec![f64::INFINITY],
            vec![log_probs.clone()],
            Box::new(move |_, _| vec![vec![0.0; frames * vocab]]),
        ));
    }
    let ext = extend(labels.symbols());
    let lp = log_probs.to_vec();
    if lp.iter().any(|v| v.is_nan()) {
        return Err(Error::numeric("ctc_loss: NaN log-probability"));
    }
    let lat = lattice(&lp, frames, vocab, &ext);
    let loss = -lat.log_z;
    Ok(Tensor::from_op(
        "ctc_loss",
        Vec::new(),
        vec![loss],
        vec![log_probs.clone()],
        Box::new(move |g, _| {
            let states = ext.len();
            let mut grad = vec![0.0; frames * vocab];
            for t in 0..frames {
                for (s, &sym) in ext.iter().enumerate() {
                    let a = lat.alpha[t * states + s];
                    let b = lat.beta[t * states + s];
                    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
                        continue;
                    }
                    let occupancy = (a + b - lp[t * vocab + sym] - lat.log_z).exp();
                    grad[t * vocab + sym] -= g[0] * occupancy;
                }
            }
            vec![grad]
        }),
    ))
}
