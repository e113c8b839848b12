//! Differentiable primitives and their adjoints.

use super::kernels::{self, gemm, split_at_axis};
use super::Tensor;
use crate::error::{Error, Result};

pub(crate) enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    MatMul(Tensor, Tensor),
    Bmm {
        a: Tensor,
        b: Tensor,
        trans_b: bool,
    },
    Softmax {
        input: Tensor,
        temperature: f64,
        probs: Vec<f64>,
    },
    LogSoftmax {
        input: Tensor,
        temperature: f64,
        probs: Vec<f64>,
    },
    LayerNorm {
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Tensor),
    Reshape(Tensor),
    Permute(Tensor, Vec<usize>),
    Concat(Vec<Tensor>, usize),
    Narrow {
        input: Tensor,
        axis: usize,
        start: usize,
    },
    Sum(Tensor),
    Mean(Tensor),
    MeanAxis(Tensor, usize),
    Gather(Tensor, Vec<usize>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Bmm { .. } => "bmm",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::LayerNorm { .. } => "layernorm",
            Op::Gelu(..) => "gelu",
            Op::Reshape(..) => "reshape",
            Op::Permute(..) => "permute",
            Op::Concat(..) => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MeanAxis(..) => "mean_axis",
            Op::Gather(..) => "gather",
        }
    }

    pub fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![a, b],
            Op::Bmm { a, b, .. } => vec![a, b],
            Op::LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::Concat(parts, _) => parts.iter().collect(),
            Op::Scale(a, _)
            | Op::Gelu(a)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanAxis(a, _)
            | Op::Gather(a, _) => vec![a],
            Op::Softmax { input, .. } | Op::LogSoftmax { input, .. } | Op::Narrow { input, .. } => {
                vec![input]
            }
        }
    }

    /// Adjoints for each entry of [`Op::inputs`], `None` where the input
    /// does not require a gradient.
    pub fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let want = |t: &Tensor| t.requires_grad();
        match self {
            Op::Add(a, b) => vec![
                want(a).then(|| g.to_vec()),
                want(b).then(|| reduce_broadcast(g, b.numel())),
            ],
            Op::Sub(a, b) => vec![
                want(a).then(|| g.to_vec()),
                want(b).then(|| {
                    let mut gb = reduce_broadcast(g, b.numel());
                    gb.iter_mut().for_each(|v| *v = -*v);
                    gb
                }),
            ],
            Op::Mul(a, b) => {
                let ad = a.data();
                let bd = b.data();
                let nb = bd.len();
                let ga = want(a).then(|| {
                    g.iter()
                        .enumerate()
                        .map(|(i, gi)| gi * bd[i % nb])
                        .collect::<Vec<_>>()
                });
                let gb = want(b).then(|| {
                    let mut acc = vec![0.0; nb];
                    for (i, (gi, ai)) in g.iter().zip(ad.iter()).enumerate() {
                        acc[i % nb] += gi * ai;
                    }
                    acc
                });
                vec![ga, gb]
            }
            Op::Scale(a, s) => vec![want(a).then(|| g.iter().map(|v| v * s).collect())],
            Op::MatMul(a, b) => {
                let (k, n) = (b.shape()[0], b.shape()[1]);
                let m = a.numel() / k;
                let ga = want(a).then(|| {
                    let mut out = vec![0.0; m * k];
                    gemm(m, n, k, g, false, &b.data(), true, &mut out, false);
                    out
                });
                let gb = want(b).then(|| {
                    let mut out = vec![0.0; k * n];
                    gemm(k, m, n, &a.data(), true, g, false, &mut out, false);
                    out
                });
                vec![ga, gb]
            }
            Op::Bmm { a, b, trans_b } => {
                let (batch, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
                let n = if *trans_b { b.shape()[1] } else { b.shape()[2] };
                let ga = want(a).then(|| {
                    let bd = b.data();
                    let mut out = vec![0.0; batch * m * k];
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &bd[i * k * n..(i + 1) * k * n];
                        let oi = &mut out[i * m * k..(i + 1) * m * k];
                        // dA = dC · op(B)ᵀ
                        gemm(m, n, k, gi, false, bi, !*trans_b, oi, false);
                    }
                    out
                });
                let gb = want(b).then(|| {
                    let ad = a.data();
                    let mut out = vec![0.0; batch * k * n];
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &ad[i * m * k..(i + 1) * m * k];
                        let oi = &mut out[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // B stored n×k: dB = dCᵀ · A
                            gemm(n, m, k, gi, true, ai, false, oi, false);
                        } else {
                            gemm(k, m, n, ai, true, gi, false, oi, false);
                        }
                    }
                    out
                });
                vec![ga, gb]
            }
            Op::Softmax {
                input,
                temperature,
                probs,
            } => {
                let cols = *input.shape().last().unwrap();
                let gx = want(input).then(|| {
                    let mut out = vec![0.0; g.len()];
                    for ((gr, pr), orow) in g
                        .chunks_exact(cols)
                        .zip(probs.chunks_exact(cols))
                        .zip(out.chunks_exact_mut(cols))
                    {
                        let dot: f64 = gr.iter().zip(pr).map(|(a, b)| a * b).sum();
                        for ((o, gi), pi) in orow.iter_mut().zip(gr).zip(pr) {
                            *o = pi * (gi - dot) / temperature;
                        }
                    }
                    out
                });
                vec![gx]
            }
            Op::LogSoftmax {
                input,
                temperature,
                probs,
            } => {
                let cols = *input.shape().last().unwrap();
                let gx = want(input).then(|| {
                    let mut out = vec![0.0; g.len()];
                    for ((gr, pr), orow) in g
                        .chunks_exact(cols)
                        .zip(probs.chunks_exact(cols))
                        .zip(out.chunks_exact_mut(cols))
                    {
                        let total: f64 = gr.iter().sum();
                        for ((o, gi), pi) in orow.iter_mut().zip(gr).zip(pr) {
                            *o = (gi - pi * total) / temperature;
                        }
                    }
                    out
                });
                vec![gx]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = gamma.numel();
                let gam = gamma.data();
                let gx = want(x).then(|| {
                    let mut out = vec![0.0; g.len()];
                    for (r, ((gr, xr), orow)) in g
                        .chunks_exact(d)
                        .zip(xhat.chunks_exact(d))
                        .zip(out.chunks_exact_mut(d))
                        .enumerate()
                    {
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for j in 0..d {
                            let dxh = gr[j] * gam[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xr[j];
                        }
                        let scale = rstd[r] / d as f64;
                        for j in 0..d {
                            let dxh = gr[j] * gam[j];
                            orow[j] = scale * (d as f64 * dxh - sum_dxhat - xr[j] * sum_dxhat_xhat);
                        }
                    }
                    out
                });
                let ggamma = want(gamma).then(|| {
                    let mut acc = vec![0.0; d];
                    for (gr, xr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            acc[j] += gr[j] * xr[j];
                        }
                    }
                    acc
                });
                let gbeta = want(beta).then(|| reduce_broadcast(g, d));
                vec![gx, ggamma, gbeta]
            }
            Op::Gelu(a) => vec![want(a).then(|| {
                a.data()
                    .iter()
                    .zip(g)
                    .map(|(x, gi)| gi * kernels::gelu_grad(*x))
                    .collect()
            })],
            Op::Reshape(a) => vec![want(a).then(|| g.to_vec())],
            Op::Permute(a, perm) => vec![want(a).then(|| {
                let out_shape: Vec<usize> = perm.iter().map(|&p| a.shape()[p]).collect();
                kernels::permute(g, &out_shape, &kernels::inverse_permutation(perm))
            })],
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                let total: usize = parts.iter().map(|p| p.shape()[*axis]).sum();
                let (outer, _, inner) = split_at_axis(parts[0].shape(), *axis);
                parts
                    .iter()
                    .map(|p| {
                        let len = p.shape()[*axis];
                        let start = offset;
                        offset += len;
                        want(p).then(|| narrow_data(g, outer, total, inner, start, len))
                    })
                    .collect()
            }
            Op::Narrow { input, axis, start } => vec![want(input).then(|| {
                let (outer, full, inner) = split_at_axis(input.shape(), *axis);
                let len = g.len() / (outer * inner);
                let mut out = vec![0.0; input.numel()];
                for o in 0..outer {
                    let dst = o * full * inner + start * inner;
                    let src = o * len * inner;
                    out[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                out
            })],
            Op::Sum(a) => vec![want(a).then(|| vec![g[0]; a.numel()])],
            Op::Mean(a) => vec![want(a).then(|| vec![g[0] / a.numel() as f64; a.numel()])],
            Op::MeanAxis(a, axis) => vec![want(a).then(|| {
                let (outer, len, inner) = split_at_axis(a.shape(), *axis);
                let mut out = vec![0.0; a.numel()];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            out[(o * len + l) * inner + i] = g[o * inner + i] / len as f64;
                        }
                    }
                }
                out
            })],
            Op::Gather(a, indices) => vec![want(a).then(|| {
                let row = a.numel() / a.shape()[0];
                let mut out = vec![0.0; a.numel()];
                for (k, &idx) in indices.iter().enumerate() {
                    for j in 0..row {
                        out[idx * row + j] += g[k * row + j];
                    }
                }
                out
            })],
        }
    }
}

/// Sum a broadcast gradient back down to a trailing block of `n` elements.
fn reduce_broadcast(g: &[f64], n: usize) -> Vec<f64> {
    if g.len() == n {
        return g.to_vec();
    }
    let mut acc = vec![0.0; n];
    for chunk in g.chunks_exact(n) {
        for (a, v) in acc.iter_mut().zip(chunk) {
            *a += v;
        }
    }
    acc
}

fn narrow_data(
    data: &[f64],
    outer: usize,
    full: usize,
    inner: usize,
    start: usize,
    len: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * full * inner + start * inner;
        out.extend_from_slice(&data[base..base + len * inner]);
    }
    out
}

fn check_suffix(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
        return Err(Error::shape(op, sa, sb));
    }
    Ok(())
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::Usage(format!(
            "{op}: axis {axis} out of range for shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

impl Tensor {
    /// Element-wise sum. `other` may be a trailing-dimension suffix of
    /// `self`'s shape, in which case it is broadcast over the leading axes.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        check_suffix("add", self, other)?;
        let a = self.data();
        let b = other.data();
        let nb = b.len();
        let data = a.iter().enumerate().map(|(i, x)| x + b[i % nb]).collect();
        drop((a, b));
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Add(self.clone(), other.clone()),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        check_suffix("sub", self, other)?;
        let a = self.data();
        let b = other.data();
        let nb = b.len();
        let data = a.iter().enumerate().map(|(i, x)| x - b[i % nb]).collect();
        drop((a, b));
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Sub(self.clone(), other.clone()),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        check_suffix("mul", self, other)?;
        let a = self.data();
        let b = other.data();
        let nb = b.len();
        let data = a.iter().enumerate().map(|(i, x)| x * b[i % nb]).collect();
        drop((a, b));
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Mul(self.clone(), other.clone()),
        ))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * s).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Scale(self.clone(), s))
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// `[.., k] · [k, n] -> [.., n]`; leading axes of `self` are flattened
    /// into the row dimension.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() < 1 || other.rank() != 2 || self.shape()[self.rank() - 1] != other.shape()[0]
        {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let (k, n) = (other.shape()[0], other.shape()[1]);
        let m = self.numel() / k;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data(), false, &other.data(), false, &mut out, false);
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(Tensor::from_op(
            shape,
            out,
            Op::MatMul(self.clone(), other.clone()),
        ))
    }

    /// Batched product `[b, m, k] · [b, k, n]`, or `[b, m, k] · [b, n, k]ᵀ`
    /// when `trans_b`.
    pub fn bmm(&self, other: &Tensor, trans_b: bool) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::shape("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(Error::shape("bmm", sa, sb));
        }
        let ad = self.data();
        let bd = other.data();
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &ad[i * m * k..(i + 1) * m * k],
                false,
                &bd[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        drop((ad, bd));
        Ok(Tensor::from_op(
            vec![batch, m, n],
            out,
            Op::Bmm {
                a: self.clone(),
                b: other.clone(),
                trans_b,
            },
        ))
    }

    /// Softmax of `self / temperature` along the last axis, computed with
    /// max-subtraction.
    pub fn softmax_temperature(&self, temperature: f64) -> Result<Tensor> {
        check_temperature(temperature)?;
        let cols = self.last_dim()?;
        let probs = kernels::softmax_rows(&self.data(), cols, temperature);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            probs.clone(),
            Op::Softmax {
                input: self.clone(),
                temperature,
                probs,
            },
        ))
    }

    pub fn softmax(&self) -> Result<Tensor> {
        self.softmax_temperature(1.0)
    }

    pub fn log_softmax_temperature(&self, temperature: f64) -> Result<Tensor> {
        check_temperature(temperature)?;
        let cols = self.last_dim()?;
        let (logp, probs) = kernels::log_softmax_rows(&self.data(), cols, temperature);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            logp,
            Op::LogSoftmax {
                input: self.clone(),
                temperature,
                probs,
            },
        ))
    }

    pub fn log_softmax(&self) -> Result<Tensor> {
        self.log_softmax_temperature(1.0)
    }

    /// Normalise each row over the last axis, then apply `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let d = self.last_dim()?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape("layernorm", self.shape(), gamma.shape()));
        }
        let x = self.data();
        let gam = gamma.data();
        let bet = beta.data();
        let rows = x.len() / d;
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * gam[j] + bet[j];
            }
        }
        drop((x, gam, bet));
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::LayerNorm {
                x: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                xhat,
                rstd,
            },
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor {
        let data = self.data().iter().map(|&x| kernels::gelu(x)).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Gelu(self.clone()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let mut seen = vec![false; self.rank()];
        if perm.len() != self.rank() || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Usage(format!(
                "permute: {perm:?} is not a permutation of the axes of {:?}",
                self.shape()
            )));
        }
        let data = kernels::permute(&self.data(), self.shape(), perm);
        let shape = perm.iter().map(|&p| self.shape()[p]).collect();
        Ok(Tensor::from_op(
            shape,
            data,
            Op::Permute(self.clone(), perm.to_vec()),
        ))
    }

    /// Swap two axes.
    pub fn transpose(&self, a0: usize, a1: usize) -> Result<Tensor> {
        check_axis("transpose", self, a0.max(a1))?;
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        perm.swap(a0, a1);
        self.permute(&perm)
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        check_axis("concat", first, axis)?;
        for p in &parts[1..] {
            let ok = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = split_at_axis(first.shape(), axis);
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        let datas: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (p, d) in parts.iter().zip(&datas) {
                let chunk = p.shape()[axis] * inner;
                out.extend_from_slice(&d[o * chunk..(o + 1) * chunk]);
            }
        }
        drop(datas);
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(shape, out, Op::Concat(parts.to_vec(), axis)))
    }

    /// Contiguous range `[start, start + len)` along `axis`. Gradients of
    /// the result land in this tensor's gradient at the same offsets.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis("narrow", self, axis)?;
        if len == 0 || start + len > self.shape()[axis] {
            return Err(Error::Usage(format!(
                "narrow: range {start}..{} outside axis {axis} of {:?}",
                start + len,
                self.shape()
            )));
        }
        let (outer, full, inner) = split_at_axis(self.shape(), axis);
        let data = narrow_data(&self.data(), outer, full, inner, start, len);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            shape,
            data,
            Op::Narrow {
                input: self.clone(),
                axis,
                start,
            },
        ))
    }

    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        Tensor::from_op(Vec::new(), vec![total], Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let mean = total / self.numel() as f64;
        Tensor::from_op(Vec::new(), vec![mean], Op::Mean(self.clone()))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("mean_axis", self, axis)?;
        let (outer, len, inner) = split_at_axis(self.shape(), axis);
        let d = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += d[(o * len + l) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        drop(d);
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op(shape, out, Op::MeanAxis(self.clone(), axis)))
    }

    /// Embedding-style lookup of rows along axis 0. Indices may repeat;
    /// adjoints of repeated rows are summed.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        if self.rank() == 0 || indices.is_empty() {
            return Err(Error::Usage("gather_rows needs a rank ≥ 1 tensor and indices".into()));
        }
        let rows = self.shape()[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Usage(format!(
                "gather_rows: index {bad} out of range for {rows} rows"
            )));
        }
        let row = self.numel() / rows;
        let d = self.data();
        let mut out = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            out.extend_from_slice(&d[i * row..(i + 1) * row]);
        }
        drop(d);
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        Ok(Tensor::from_op(
            shape,
            out,
            Op::Gather(self.clone(), indices.to_vec()),
        ))
    }

    fn last_dim(&self) -> Result<usize> {
        self.shape()
            .last()
            .copied()
            .ok_or_else(|| Error::Usage("operation needs a rank ≥ 1 tensor".into()))
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Parameter(format!(
            "temperature must be positive and finite, got {t}"
        )));
    }
    Ok(())
}
