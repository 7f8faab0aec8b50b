use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::{oracle::collapse, LabelSequence};

/// Best-path decoding: per-frame argmax (lowest index on ties), collapse
/// repeats, drop blanks.
pub fn greedy_decode(log_probs: &Tensor) -> Result<LabelSequence> {
    let (frames, vocab) = match log_probs.shape() {
        [t, v] => (*t, *v),
        s => return Err(Error::dim("greedy_decode", s, &[0, 0])),
    };
    let lp = log_probs.data();
    let path: Vec<usize> = (0..frames)
        .map(|t| {
            let row = &lp[t * vocab..(t + 1) * vocab];
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    LabelSequence::new(collapse(&path), vocab)
}

/// Levenshtein distance between two symbol sequences.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
