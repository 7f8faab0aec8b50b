//! Brute-force CTC reference: enumerates all `V^T` frame-level paths.
//! Exponential; only usable for tiny `T` and `V`.

use super::BLANK;

/// Removes repeats, then blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != BLANK {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// `-ln` of the total probability of all paths collapsing to `labels`,
/// for row-major `log_probs[frames, vocab]`.
pub fn ctc_loss_exhaustive(log_probs: &[f64], frames: usize, vocab: usize, labels: &[usize]) -> f64 {
    let mut path = vec![0usize; frames];
    let mut total = 0.0f64;
    loop {
        if collapse(&path) == labels {
            let lp: f64 = path.iter().enumerate().map(|(t, &s)| log_probs[t * vocab + s]).sum();
            total += lp.exp();
        }
        // odometer increment
        let mut t = 0;
        loop {
            if t == frames {
                return -total.ln();
            }
            path[t] += 1;
            if path[t] < vocab {
                break;
            }
            path[t] = 0;
            t += 1;
        }
    }
}
