//! Differentiable tensor operations.
//!
//! Broadcasting is limited to adding a bias vector along the leading axis
//! ([`Tensor::add_bias`]); every other binary operation requires identical
//! shapes.

use super::macs;
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// `out[m,n] = a[m,k] * b[k,n]`
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[m,k] = g[m,n] * b[k,n]^T`
fn mm_bt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `out[k,n] = a[m,k]^T * g[m,n]`
fn mm_at(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::numeric(format!("{op}: NaN input")));
    }
    Ok(())
}

impl Tensor {
    fn require_2d(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::dim(op, s, &[0, 0])),
        }
    }

    fn require_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.require_2d("matmul")?;
        let (k2, n) = rhs.require_2d("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(), rhs.shape()));
        }
        let out = mm(&self.data(), &rhs.data(), m, k, n);
        macs::record((m * k * n) as u64);
        Ok(Tensor::from_op(
            "matmul",
            vec![m, n],
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, p| {
                let a = p[0].data();
                let b = p[1].data();
                vec![mm_bt(g, &b, m, k, n), mm_at(&a, g, m, k, n)]
            }),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.require_2d("transpose")?;
        let src = self.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        drop(src);
        Ok(Tensor::from_op(
            "transpose",
            vec![n, m],
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut back = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        back[i * n + j] = g[j * m + i];
                    }
                }
                vec![back]
            }),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::dim("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![g.to_vec()]),
        ))
    }

    fn zip_with(
        &self,
        rhs: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        back: impl Fn(&[f64], &[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + 'static,
    ) -> Result<Tensor> {
        self.require_same(rhs, op)?;
        let out = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_op(
            op,
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, p| {
                let (ga, gb) = back(g, &p[0].data(), &p[1].data());
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, "add", |a, b| a + b, |g, _, _| (g.to_vec(), g.to_vec()))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(
            rhs,
            "sub",
            |a, b| a - b,
            |g, _, _| (g.to_vec(), g.iter().map(|v| -v).collect()),
        )
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(
            rhs,
            "mul",
            |a, b| a * b,
            |g, a, b| {
                (
                    g.iter().zip(b).map(|(g, b)| g * b).collect(),
                    g.iter().zip(a).map(|(g, a)| g * a).collect(),
                )
            },
        )
    }

    /// Adds `bias[n]` to every row of a `[m, n]` tensor.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (m, n) = self.require_2d("add_bias")?;
        if bias.shape() != [n] {
            return Err(Error::dim("add_bias", self.shape(), bias.shape()));
        }
        let mut out = self.to_vec();
        {
            let b = bias.data();
            for row in out.chunks_mut(n) {
                row.iter_mut().zip(b.iter()).for_each(|(o, b)| *o += b);
            }
        }
        Ok(Tensor::from_op(
            "add_bias",
            vec![m, n],
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, _| {
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                vec![g.to_vec(), gb]
            }),
        ))
    }

    fn map_unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        // (input, output, upstream) -> downstream
        df: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let saved = out.clone();
        Tensor::from_op(
            op,
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, p| {
                let x = p[0].data();
                vec![x
                    .iter()
                    .zip(&saved)
                    .zip(g)
                    .map(|((&x, &y), &g)| df(x, y, g))
                    .collect()]
            }),
        )
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map_unary("scale", |x| x * s, move |_, _, g| g * s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        self.map_unary("add_scalar", |x| x + s, |_, _, g| g)
    }

    pub fn relu(&self) -> Tensor {
        self.map_unary(
            "relu",
            |x| x.max(0.0),
            |x, _, g| if x > 0.0 { g } else { 0.0 },
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map_unary("sigmoid", sigmoid, |_, y, g| g * y * (1.0 - y))
    }

    pub fn exp(&self) -> Tensor {
        self.map_unary("exp", f64::exp, |_, y, g| g * y)
    }

    pub fn ln(&self) -> Tensor {
        self.map_unary("ln", f64::ln, |x, _, g| g / x)
    }

    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        let s = self.data().iter().sum();
        Tensor::from_op(
            "sum",
            Vec::new(),
            vec![s],
            vec![self.clone()],
            Box::new(move |g, _| vec![vec![g[0]; n]]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        self.sum().scale(1.0 / n as f64)
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_finite("softmax", &self.data())?;
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::contract(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let max = (0..n).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[at(j)] /= total;
                }
            }
        }
        drop(src);
        let saved = out.clone();
        Ok(Tensor::from_op(
            "softmax",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let y = &saved;
                let mut back = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * n * inner + j * inner + i;
                        let dot: f64 = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            back[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                vec![back]
            }),
        ))
    }

    /// Row-wise log-softmax of a `[m, n]` tensor.
    pub fn log_softmax(&self) -> Result<Tensor> {
        let (m, n) = self.require_2d("log_softmax")?;
        check_finite("log_softmax", &self.data())?;
        let mut out = self.to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let saved = out.clone();
        Ok(Tensor::from_op(
            "log_softmax",
            vec![m, n],
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut back = vec![0.0; m * n];
                for r in 0..m {
                    let gs = &g[r * n..(r + 1) * n];
                    let total: f64 = gs.iter().sum();
                    for j in 0..n {
                        back[r * n + j] = gs[j] - saved[r * n + j].exp() * total;
                    }
                }
                vec![back]
            }),
        ))
    }

    /// Row-wise softmax of `[m, n]` where `mask[i*n + j] == false` excludes
    /// entry `j` of row `i` (it receives exactly zero weight).
    pub fn masked_softmax(&self, mask: &[bool]) -> Result<Tensor> {
        let (m, n) = self.require_2d("masked_softmax")?;
        if mask.len() != m * n {
            return Err(Error::dim("masked_softmax", self.shape(), &[mask.len()]));
        }
        check_finite("masked_softmax", &self.data())?;
        let src = self.data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let keep = &mask[r * n..(r + 1) * n];
            let row = &src[r * n..(r + 1) * n];
            let max = row
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::contract(format!(
                    "attention row {r} has no attendable position"
                )));
            }
            let mut total = 0.0;
            for j in 0..n {
                if keep[j] {
                    let e = (row[j] - max).exp();
                    out[r * n + j] = e;
                    total += e;
                }
            }
            out[r * n..(r + 1) * n].iter_mut().for_each(|v| *v /= total);
        }
        drop(src);
        let saved = out.clone();
        Ok(Tensor::from_op(
            "masked_softmax",
            vec![m, n],
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut back = vec![0.0; m * n];
                for r in 0..m {
                    let y = &saved[r * n..(r + 1) * n];
                    let gs = &g[r * n..(r + 1) * n];
                    let dot: f64 = y.iter().zip(gs).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        back[r * n + j] = y[j] * (gs[j] - dot);
                    }
                }
                vec![back]
            }),
        ))
    }

    /// Normalizes each row of `[m, n]` to zero mean and unit variance, then
    /// applies `gain[n]` and `bias[n]`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let (m, n) = self.require_2d("layer_norm")?;
        if gain.shape() != [n] || bias.shape() != [n] {
            return Err(Error::dim("layer_norm", self.shape(), gain.shape()));
        }
        let x = self.data();
        let gv = gain.data();
        let bv = bias.data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &x[r * n..(r + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mu) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * gv[j] + bv[j];
            }
        }
        macs::record((2 * m * n) as u64);
        drop((x, gv, bv));
        Ok(Tensor::from_op(
            "layer_norm",
            vec![m, n],
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |g, p| {
                let gv = p[1].data();
                let mut dx = vec![0.0; m * n];
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                let nf = n as f64;
                for r in 0..m {
                    let gs = &g[r * n..(r + 1) * n];
                    let hs = &xhat[r * n..(r + 1) * n];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..n {
                        let dh = gs[j] * gv[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hs[j];
                        dgain[j] += gs[j] * hs[j];
                        dbias[j] += gs[j];
                    }
                    for j in 0..n {
                        let dh = gs[j] * gv[j];
                        dx[r * n + j] = rstd[r] / nf * (nf * dh - sum_dh - hs[j] * sum_dh_h);
                    }
                }
                vec![dx, dgain, dbias]
            }),
        ))
    }

    /// Columns `[start, start + len)` of a `[m, n]` tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (m, n) = self.require_2d("slice_cols")?;
        if len == 0 || start + len > n {
            return Err(Error::dim("slice_cols", self.shape(), &[start, len]));
        }
        let src = self.data();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        drop(src);
        Ok(Tensor::from_op(
            "slice_cols",
            vec![m, len],
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut back = vec![0.0; m * n];
                for r in 0..m {
                    back[r * n + start..r * n + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![back]
            }),
        ))
    }

    /// Concatenates `[m, n_i]` tensors along columns.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        let (m, _) = first.require_2d("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = p.require_2d("concat_cols")?;
            if pm != m {
                return Err(Error::dim("concat_cols", first.shape(), p.shape()));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = vec![0.0; m * n];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let src = p.data();
            for r in 0..m {
                out[r * n + offset..r * n + offset + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        Ok(Tensor::from_op(
            "concat_cols",
            vec![m, n],
            out,
            parts.to_vec(),
            Box::new(move |g, _| {
                let mut offset = 0;
                widths
                    .iter()
                    .map(|&w| {
                        let mut back = Vec::with_capacity(m * w);
                        for r in 0..m {
                            back.extend_from_slice(&g[r * n + offset..r * n + offset + w]);
                        }
                        offset += w;
                        back
                    })
                    .collect()
            }),
        ))
    }

    /// Packs single-element tensors into a vector of shape `[len]`.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        if items.is_empty() {
            return Err(Error::contract("stack of nothing"));
        }
        if let Some(bad) = items.iter().find(|t| t.numel() != 1) {
            return Err(Error::dim("stack", bad.shape(), &[1]));
        }
        let out = items.iter().map(Tensor::item).collect();
        Ok(Tensor::from_op(
            "stack",
            vec![items.len()],
            out,
            items.to_vec(),
            Box::new(|g, _| g.iter().map(|&v| vec![v]).collect()),
        ))
    }

    /// Element `index` of the flattened tensor, as a scalar.
    pub fn select(&self, index: usize) -> Result<Tensor> {
        let n = self.numel();
        if index >= n {
            return Err(Error::dim("select", self.shape(), &[index]));
        }
        let v = self.data()[index];
        Ok(Tensor::from_op(
            "select",
            Vec::new(),
            vec![v],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut back = vec![0.0; n];
                back[index] = g[0];
                vec![back]
            }),
        ))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
