use super::macs::{self, MacKind};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Zero padding `(left, right)` that keeps the output length equal to the
/// input length. Even kernels put the extra tap on the left.
pub fn same_padding(kernel: usize) -> (usize, usize) {
    (kernel / 2, (kernel - 1) / 2)
}

impl Tensor {
    /// Per-channel 1-D convolution of `x[T, d]` with `kernel[k, d]`, using
    /// 'same' zero padding (see [`same_padding`]).
    ///
    /// `out[t, c] = sum_i kernel[i, c] * x[t - left + i, c]`
    pub fn depthwise_conv1d(&self, kernel: &Tensor) -> Result<Tensor> {
        let (t_len, d) = match self.shape() {
            [t, d] => (*t, *d),
            s => return Err(Error::dim("depthwise_conv1d", s, kernel.shape())),
        };
        let k = match kernel.shape() {
            [k, kd] if *kd == d && *k >= 1 => *k,
            s => return Err(Error::dim("depthwise_conv1d", self.shape(), s)),
        };
        let (left, right) = same_padding(k);
        if k > t_len + left + right {
            return Err(Error::dim("depthwise_conv1d", self.shape(), kernel.shape()));
        }
        let x = self.data();
        let w = kernel.data();
        let mut out = vec![0.0; t_len * d];
        for t in 0..t_len {
            for i in 0..k {
                let Some(s) = (t + i).checked_sub(left).filter(|&s| s < t_len) else {
                    continue;
                };
                let orow = &mut out[t * d..(t + 1) * d];
                let xrow = &x[s * d..(s + 1) * d];
                let wrow = &w[i * d..(i + 1) * d];
                for c in 0..d {
                    orow[c] += wrow[c] * xrow[c];
                }
            }
        }
        macs::record_as(MacKind::Conv, (t_len * k * d) as u64);
        drop((x, w));
        Ok(Tensor::from_op(
            "depthwise_conv1d",
            vec![t_len, d],
            out,
            vec![self.clone(), kernel.clone()],
            Box::new(move |g, p| {
                let x = p[0].data();
                let w = p[1].data();
                let mut dx = vec![0.0; t_len * d];
                let mut dw = vec![0.0; k * d];
                for t in 0..t_len {
                    for i in 0..k {
                        let Some(s) = (t + i).checked_sub(left).filter(|&s| s < t_len) else {
                            continue;
                        };
                        for c in 0..d {
                            let gv = g[t * d + c];
                            dx[s * d + c] += w[i * d + c] * gv;
                            dw[i * d + c] += x[s * d + c] * gv;
                        }
                    }
                }
                vec![dx, dw]
            }),
        ))
    }
}

/// Depthwise convolution followed by a 1x1 pointwise channel mix
/// `pointwise[d, d]`. Output length equals input length.
pub fn depthwise_separable_conv1d(
    x: &Tensor,
    depthwise: &Tensor,
    pointwise: &Tensor,
) -> Result<Tensor> {
    macs::with_kind(MacKind::Conv, || {
        x.depthwise_conv1d(depthwise)?.matmul(pointwise)
    })
}
