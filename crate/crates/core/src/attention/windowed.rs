//! Banded (sliding-window) attention kernel.
//!
//! Every query at position `tau` scores a fixed band of `2 * half + 1` key
//! slots centred on itself. Keys and values are zero-padded by `half` rows
//! on each side so that every band has the same width; slots that fall in
//! the padding are masked out of the softmax. The work per query is
//! therefore independent of the sequence length.

use crate::error::{Error, Result};
use crate::numerics::macs::{self, MacKind};
use crate::numerics::Tensor;

/// Inclusive 1-based window `(lo, hi)` attended by query `tau` in a
/// sequence of length `len` with window size `window`.
pub fn effective_window(tau: usize, len: usize, window: usize) -> Result<(usize, usize)> {
    if tau == 0 || tau > len {
        return Err(Error::contract(format!(
            "query position {tau} outside 1..={len}"
        )));
    }
    let half = window / 2;
    Ok((tau.saturating_sub(half).max(1), (tau + half).min(len)))
}

/// Half-width actually used for a sequence of length `len`. Bands never need
/// to extend further than `len - 1` positions from the query.
pub fn band_half_width(half: usize, len: usize) -> usize {
    half.min(len.saturating_sub(1))
}

fn pad_rows(src: &[f64], len: usize, d: usize, half: usize) -> Vec<f64> {
    let mut out = vec![0.0; (len + 2 * half) * d];
    out[half * d..(half + len) * d].copy_from_slice(src);
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Multi-head banded attention over `q, k, v: [T, d]`.
///
/// Returns the mixed values `[T, d]` and the attention weights
/// `[heads, T, 2 * hw + 1]` (constant, no gradient) where
/// `hw = band_half_width(half, T)`. Weight slot `j` of query `tau`
/// corresponds to key position `tau - hw + j`.
pub fn windowed_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    num_heads: usize,
    half: usize,
    scale: f64,
) -> Result<(Tensor, Tensor)> {
    let (len, d) = match q.shape() {
        [t, d] => (*t, *d),
        s => return Err(Error::dim("windowed_attention", s, k.shape())),
    };
    for other in [k, v] {
        if other.shape() != q.shape() {
            return Err(Error::dim("windowed_attention", q.shape(), other.shape()));
        }
    }
    if num_heads == 0 || d % num_heads != 0 {
        return Err(Error::contract(format!(
            "{num_heads} heads do not divide width {d}"
        )));
    }
    let dh = d / num_heads;
    let hw = band_half_width(half, len);
    let width = 2 * hw + 1;

    let qd = q.to_vec();
    let kpad = pad_rows(&k.data(), len, d, hw);
    let vpad = pad_rows(&v.data(), len, d, hw);
    let mut weights = vec![0.0; num_heads * len * width];
    let mut out = vec![0.0; len * d];
    let mut scores = vec![0.0; width];

    for head in 0..num_heads {
        let c0 = head * dh;
        for tau in 0..len {
            let qrow = &qd[tau * d + c0..tau * d + c0 + dh];
            // slot j reads padded row tau + j; it is real iff hw <= tau + j < len + hw
            let first = hw.saturating_sub(tau);
            let last = (len + hw - tau).min(width);
            for (j, s) in scores.iter_mut().enumerate() {
                let row = (tau + j) * d + c0;
                *s = scale * dot(qrow, &kpad[row..row + dh]);
            }
            let max = scores[first..last]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let a = &mut weights[(head * len + tau) * width..(head * len + tau + 1) * width];
            let mut total = 0.0;
            for j in first..last {
                let e = (scores[j] - max).exp();
                a[j] = e;
                total += e;
            }
            a[first..last].iter_mut().for_each(|w| *w /= total);
            let orow = &mut out[tau * d + c0..tau * d + c0 + dh];
            for (j, &aj) in a.iter().enumerate() {
                let row = (tau + j) * d + c0;
                for (o, vv) in orow.iter_mut().zip(&vpad[row..row + dh]) {
                    *o += aj * vv;
                }
            }
        }
    }
    macs::record_as(MacKind::Attention, (2 * len * width * d) as u64);

    let weights_t = Tensor::new(&[num_heads, len, width], weights.clone())?;
    let out = Tensor::from_op(
        "windowed_attention",
        vec![len, d],
        out,
        vec![q.clone(), k.clone(), v.clone()],
        Box::new(move |g, _| {
            let mut dq = vec![0.0; len * d];
            let mut dkpad = vec![0.0; (len + 2 * hw) * d];
            let mut dvpad = vec![0.0; (len + 2 * hw) * d];
            let mut da = vec![0.0; width];
            for head in 0..num_heads {
                let c0 = head * dh;
                for tau in 0..len {
                    let a = &weights[(head * len + tau) * width..(head * len + tau + 1) * width];
                    let grow = &g[tau * d + c0..tau * d + c0 + dh];
                    for j in 0..width {
                        let row = (tau + j) * d + c0;
                        da[j] = dot(grow, &vpad[row..row + dh]);
                        for (dv, gv) in dvpad[row..row + dh].iter_mut().zip(grow) {
                            *dv += a[j] * gv;
                        }
                    }
                    let centre: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
                    let qrow = &qd[tau * d + c0..tau * d + c0 + dh];
                    for j in 0..width {
                        let ds = a[j] * (da[j] - centre) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let row = (tau + j) * d + c0;
                        for c in 0..dh {
                            dq[tau * d + c0 + c] += ds * kpad[row + c];
                            dkpad[row + c] += ds * qrow[c];
                        }
                    }
                }
            }
            let strip = |p: Vec<f64>| p[hw * d..(hw + len) * d].to_vec();
            vec![dq, strip(dkpad), strip(dvpad)]
        }),
    );
    Ok((out, weights_t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testing::{assert_gradients, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn window_examples() {
        assert_eq!(effective_window(1, 100, 4).unwrap(), (1, 3));
        assert_eq!(effective_window(50, 100, 4).unwrap(), (48, 52));
        assert_eq!(effective_window(100, 100, 256).unwrap(), (1, 100));
        assert_eq!(effective_window(3, 5, 1).unwrap(), (3, 3));
        assert!(effective_window(0, 5, 4).is_err());
        assert!(effective_window(6, 5, 4).is_err());
    }

    #[test]
    fn band_width_is_capped_by_length() {
        assert_eq!(band_half_width(128, 10), 9);
        assert_eq!(band_half_width(2, 10), 2);
        assert_eq!(band_half_width(5, 1), 0);
    }

    #[test]
    fn weights_cover_exactly_the_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let len = 7;
        let q = random_tensor(&mut rng, &[len, 4], 1.0, false);
        let k = random_tensor(&mut rng, &[len, 4], 1.0, false);
        let v = random_tensor(&mut rng, &[len, 4], 1.0, false);
        let (_, w) = windowed_attention(&q, &k, &v, 2, 2, 0.5).unwrap();
        assert_eq!(w.shape(), &[2, len, 5]);
        let w = w.to_vec();
        for head in 0..2 {
            for tau in 0..len {
                let row = &w[(head * len + tau) * 5..(head * len + tau + 1) * 5];
                let (lo, hi) = effective_window(tau + 1, len, 4).unwrap();
                for (j, &a) in row.iter().enumerate() {
                    let pos = tau as isize - 2 + j as isize + 1;
                    let inside = pos >= lo as isize && pos <= hi as isize;
                    assert_eq!(a > 0.0, inside, "tau {tau} slot {j}");
                }
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (len, half) in [(6, 1), (5, 2), (3, 8)] {
            let q = random_tensor(&mut rng, &[len, 4], 1.5, true);
            let k = random_tensor(&mut rng, &[len, 4], 1.5, true);
            let v = random_tensor(&mut rng, &[len, 4], 1.5, true);
            let w = random_tensor(&mut rng, &[len, 4], 1.0, false);
            assert_gradients(&[q.clone(), k.clone(), v.clone()], || {
                let (o, _) = windowed_attention(&q, &k, &v, 2, half, 0.7)?;
                o.mul(&w).map(|t| t.sum())
            });
        }
    }
}
