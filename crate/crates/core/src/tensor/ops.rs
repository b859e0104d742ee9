use super::{numel, BackwardCtx, Real, Result, Tensor, TensorError};

/// Per-row supervision for [`Tensor::cross_entropy`].
#[derive(Debug, Clone, PartialEq)]
pub enum Target<F: Real = f32> {
    /// One class index per row.
    Classes(Vec<usize>),
    /// Row-major target distributions, `rows * classes` values (one-hot or soft).
    Probs(Vec<F>),
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside the broadcast `out` shape (0 on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = contiguous_strides(shape);
    let lead = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < lead || shape[i - lead] == 1 {
                0
            } else {
                own[i - lead]
            }
        })
        .collect()
}

/// Calls `f(out_index, a_offset, b_offset)` for every element of `out`.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    if out.is_empty() {
        f(0, 0, 0);
        return;
    }
    let nd = out.len();
    let inner = out[nd - 1];
    let (ia, ib) = (sa[nd - 1], sb[nd - 1]);
    let outer = numel(&out[..nd - 1]);
    let mut idx = vec![0usize; nd - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    for _ in 0..outer {
        for j in 0..inner {
            f(o, oa + j * ia, ob + j * ib);
            o += 1;
        }
        for d in (0..nd - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// True when `shape` equals the trailing axes of `out` (a tiled block).
fn is_trailing_tile(shape: &[usize], out: &[usize]) -> bool {
    shape.len() <= out.len() && shape == &out[out.len() - shape.len()..]
}

/// Sums a broadcast gradient back onto an operand of `shape`.
fn unbroadcast<F: Real>(grad: &[F], shape: &[usize], out: &[usize], scale: Option<&[F]>, sother: &[usize]) -> Vec<F> {
    let mut acc = vec![F::zero(); numel(shape)];
    if scale.is_none() && is_trailing_tile(shape, out) {
        for g in grad.chunks(acc.len()) {
            acc.iter_mut().zip(g).for_each(|(a, &g)| *a += g);
        }
        return acc;
    }
    let s = broadcast_strides(shape, out);
    match scale {
        None => for_each_broadcast(out, &s, &s, |o, i, _| acc[i] += grad[o]),
        Some(other) => for_each_broadcast(out, &s, sother, |o, i, j| acc[i] += grad[o] * other[j]),
    }
    acc
}

fn permute_data<F: Real>(data: &[F], shape: &[usize], axes: &[usize]) -> (Vec<F>, Vec<usize>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src = contiguous_strides(shape);
    let strides: Vec<usize> = axes.iter().map(|&a| src[a]).collect();
    let zero = vec![0; out_shape.len()];
    let mut out = Vec::with_capacity(data.len());
    for_each_broadcast(&out_shape, &strides, &zero, |_, i, _| out.push(data[i]));
    (out, out_shape)
}

fn row_len(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    if shape.is_empty() {
        return Err(TensorError::Shape {
            op,
            msg: "expected at least one dimension".into(),
        });
    }
    Ok((shape[0], numel(&shape[1..])))
}

impl<F: Real> Tensor<F> {
    fn binary(
        &self,
        other: &Tensor<F>,
        op: &'static str,
        f: impl Fn(F, F) -> F,
        mul: bool,
    ) -> Result<Self> {
        let out_shape = broadcast_shape(op, self.shape(), other.shape())?;
        let sa = broadcast_strides(self.shape(), &out_shape);
        let sb = broadcast_strides(other.shape(), &out_shape);
        let mut out = vec![F::zero(); numel(&out_shape)];
        {
            let (a, b) = (self.data(), other.data());
            if self.shape() == other.shape() {
                out.iter_mut()
                    .zip(a.iter().zip(b.iter()))
                    .for_each(|(o, (&x, &y))| *o = f(x, y));
            } else if is_trailing_tile(other.shape(), &out_shape) && self.shape() == out_shape.as_slice() {
                for (o, x) in out.chunks_mut(b.len()).zip(a.chunks(b.len())) {
                    o.iter_mut().zip(x.iter().zip(b.iter())).for_each(|(o, (&x, &y))| *o = f(x, y));
                }
            } else {
                for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| out[o] = f(a[i], b[j]));
            }
        }
        let shapes = (self.shape().to_vec(), other.shape().to_vec(), out_shape.clone());
        Ok(Tensor::from_op(
            out,
            out_shape,
            op,
            vec![self.clone(), other.clone()],
            move |ctx: &BackwardCtx<'_, F>| {
                let (sa_shape, sb_shape, out_shape) = &shapes;
                let pa = &ctx.parents[0];
                let pb = &ctx.parents[1];
                let ga = pa.requires_grad().then(|| {
                    if mul {
                        let b = pb.data();
                        unbroadcast(ctx.grad, sa_shape, out_shape, Some(&b), &broadcast_strides(sb_shape, out_shape))
                    } else if sa_shape == out_shape {
                        ctx.grad.to_vec()
                    } else {
                        unbroadcast(ctx.grad, sa_shape, out_shape, None, &[])
                    }
                });
                let gb = pb.requires_grad().then(|| {
                    if mul {
                        let a = pa.data();
                        unbroadcast(ctx.grad, sb_shape, out_shape, Some(&a), &broadcast_strides(sa_shape, out_shape))
                    } else if sb_shape == out_shape {
                        ctx.grad.to_vec()
                    } else {
                        unbroadcast(ctx.grad, sb_shape, out_shape, None, &[])
                    }
                });
                vec![ga, gb]
            },
        ))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&self, other: &Tensor<F>) -> Result<Self> {
        self.binary(other, "add", |x, y| x + y, false)
    }

    /// Elementwise product with numpy-style broadcasting.
    pub fn mul(&self, other: &Tensor<F>) -> Result<Self> {
        self.binary(other, "mul", |x, y| x * y, true)
    }

    pub fn scale(&self, s: F) -> Self {
        let out: Vec<F> = self.data().iter().map(|&x| x * s).collect();
        Tensor::from_op(out, self.shape().to_vec(), "scale", vec![self.clone()], move |ctx| {
            vec![Some(ctx.grad.iter().map(|&g| g * s).collect())]
        })
    }

    /// Matrix product over the last two axes; leading axes broadcast.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Self> {
        let (sa, sb) = (self.shape(), other.shape());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let batch = broadcast_shape("matmul", ba, bb).map_err(|_| mismatch())?;
        let nb = numel(&batch);
        let a_off = matrix_offsets(ba, &batch);
        let b_off = matrix_offsets(bb, &batch);
        let mut out_shape = batch.clone();
        out_shape.extend([m, n]);
        let mut out = vec![F::zero(); nb * m * n];
        {
            let (a, b) = (self.data(), other.data());
            let flat = bb.is_empty() && ba == batch.as_slice();
            if flat {
                gemm_into(nb * m, k, n, &a, 0, Layout::N, &b, 0, Layout::N, &mut out, 0, false);
            } else {
                for bi in 0..nb {
                    gemm_into(m, k, n, &a, a_off[bi] * m * k, Layout::N, &b, b_off[bi] * k * n, Layout::N, &mut out, bi * m * n, false);
                }
            }
        }
        let (ba, bb) = (ba.to_vec(), bb.to_vec());
        Ok(Tensor::from_op(
            out,
            out_shape,
            "matmul",
            vec![self.clone(), other.clone()],
            move |ctx| {
                let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
                let (a, b) = (pa.data(), pb.data());
                let g = ctx.grad;
                let flat = bb.is_empty() && ba == batch;
                let ga = pa.requires_grad().then(|| {
                    let mut ga = vec![F::zero(); a.len()];
                    if flat {
                        // dA = dC . B^T
                        gemm_into(nb * m, n, k, g, 0, Layout::N, &b, 0, Layout::T(n), &mut ga, 0, false);
                    } else {
                        for bi in 0..nb {
                            gemm_into(m, n, k, g, bi * m * n, Layout::N, &b, b_off[bi] * k * n, Layout::T(n), &mut ga, a_off[bi] * m * k, true);
                        }
                    }
                    ga
                });
                let gb = pb.requires_grad().then(|| {
                    let mut gb = vec![F::zero(); b.len()];
                    if flat {
                        // dB = A^T . dC
                        gemm_into(k, nb * m, n, &a, 0, Layout::T(k), g, 0, Layout::N, &mut gb, 0, false);
                    } else {
                        for bi in 0..nb {
                            gemm_into(k, m, n, &a, a_off[bi] * m * k, Layout::T(k), g, bi * m * n, Layout::N, &mut gb, b_off[bi] * k * n, true);
                        }
                    }
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    /// GELU, tanh approximation, evaluated as `x * sigmoid(2u)` with
    /// `u = sqrt(2/pi) (x + 0.044715 x^3)`.
    pub fn gelu(&self) -> Self {
        let c2 = F::of(2.0 * (2.0 / std::f64::consts::PI).sqrt());
        let a = F::of(0.044715);
        let gate = move |x: F| F::one() / (F::one() + (-(c2 * (x + a * x * x * x))).exp());
        let out: Vec<F> = self.data().iter().map(|&x| x * gate(x)).collect();
        Tensor::from_op(out, self.shape().to_vec(), "gelu", vec![self.clone()], move |ctx| {
            let x = ctx.parents[0].data();
            let three = F::of(3.0);
            let g = x
                .iter()
                .zip(ctx.grad)
                .map(|(&x, &g)| {
                    let s = gate(x);
                    g * (s + x * s * (F::one() - s) * c2 * (F::one() + three * a * x * x))
                })
                .collect();
            vec![Some(g)]
        })
    }

    /// Softmax over the last axis, stabilised by subtracting the row maximum.
    pub fn softmax_rows(&self) -> Result<Self> {
        let (_, c) = last_axis("softmax_rows", self.shape())?;
        let data = self.data();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "softmax_rows" });
        }
        let mut out = vec![F::zero(); data.len()];
        for (row, dst) in data.chunks(c).zip(out.chunks_mut(c)) {
            softmax_into(row, dst);
        }
        drop(data);
        Ok(Tensor::from_op(out, self.shape().to_vec(), "softmax_rows", vec![self.clone()], move |ctx| {
            let mut gx = vec![F::zero(); ctx.out.len()];
            for ((y, g), dst) in ctx.out.chunks(c).zip(ctx.grad.chunks(c)).zip(gx.chunks_mut(c)) {
                let dot: F = y.iter().zip(g).map(|(&y, &g)| y * g).sum();
                for ((d, &y), &g) in dst.iter_mut().zip(y).zip(g) {
                    *d = y * (g - dot);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Tensor<F>, beta: &Tensor<F>, eps: f64) -> Result<Self> {
        let (_, d) = last_axis("layer_norm", self.shape())?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut out = vec![F::zero(); x.len()];
        for (row, dst) in x.chunks(d).zip(out.chunks_mut(d)) {
            let (mean, rstd) = row_stats(row, eps);
            for (((o, &v), &g), &b) in dst.iter_mut().zip(row).zip(gm.iter()).zip(bt.iter()) {
                *o = (v - mean) * rstd * g + b;
            }
        }
        drop((x, gm, bt));
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "layer_norm",
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |ctx| {
                let x = ctx.parents[0].data();
                let gm = ctx.parents[1].data();
                let mut gx = vec![F::zero(); x.len()];
                let mut ggamma = vec![F::zero(); d];
                let mut gbeta = vec![F::zero(); d];
                let mut xhat = vec![F::zero(); d];
                let mut gxhat = vec![F::zero(); d];
                let df = F::of(d as f64);
                for ((row, g), dst) in x.chunks(d).zip(ctx.grad.chunks(d)).zip(gx.chunks_mut(d)) {
                    let (mean, rstd) = row_stats(row, eps);
                    let (mut s1, mut s2) = (0f64, 0f64);
                    for i in 0..d {
                        xhat[i] = (row[i] - mean) * rstd;
                        gxhat[i] = g[i] * gm[i];
                        s1 += gxhat[i].f64();
                        s2 += (gxhat[i] * xhat[i]).f64();
                        ggamma[i] += g[i] * xhat[i];
                        gbeta[i] += g[i];
                    }
                    let (s1, s2) = (F::of(s1), F::of(s2));
                    let k = rstd / df;
                    for i in 0..d {
                        dst[i] = k * (df * gxhat[i] - s1 - xhat[i] * s2);
                    }
                }
                vec![
                    ctx.parents[0].requires_grad().then_some(gx),
                    ctx.parents[1].requires_grad().then_some(ggamma),
                    ctx.parents[2].requires_grad().then_some(gbeta),
                ]
            },
        ))
    }

    pub fn sum(&self) -> Self {
        let s: f64 = self.data().iter().map(|v| v.f64()).sum();
        let n = self.numel();
        Tensor::from_op(vec![F::of(s)], vec![], "sum", vec![self.clone()], move |ctx| {
            vec![Some(vec![ctx.grad[0]; n])]
        })
    }

    pub fn mean(&self) -> Self {
        let n = self.numel();
        let s: f64 = self.data().iter().map(|v| v.f64()).sum();
        let inv = F::of(1.0 / n as f64);
        Tensor::from_op(vec![F::of(s / n as f64)], vec![], "mean", vec![self.clone()], move |ctx| {
            vec![Some(vec![ctx.grad[0] * inv; n])]
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), "reshape", vec![self.clone()], |ctx| {
            vec![Some(ctx.grad.to_vec())]
        }))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let nd = self.shape().len();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::Shape {
                op: "permute",
                msg: format!("{axes:?} is not a permutation of {nd} axes"),
            });
        }
        let (out, out_shape) = permute_data(&self.data(), self.shape(), axes);
        let mut inverse = vec![0; nd];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(Tensor::from_op(out, out_shape, "permute", vec![self.clone()], move |ctx| {
            vec![Some(permute_data(ctx.grad, ctx.out_shape, &inverse).0)]
        }))
    }

    /// Swaps two axes.
    pub fn transpose(&self, a: usize, b: usize) -> Result<Self> {
        let mut axes: Vec<usize> = (0..self.shape().len()).collect();
        if a >= axes.len() || b >= axes.len() {
            return Err(TensorError::Shape {
                op: "transpose",
                msg: format!("axes ({a},{b}) out of range for {:?}", self.shape()),
            });
        }
        axes.swap(a, b);
        self.permute(&axes)
    }

    /// Selects slices along the first axis; indices may repeat.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Self> {
        let (rows, len) = row_len("gather_rows", self.shape())?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Shape {
                op: "gather_rows",
                msg: format!("index {bad} out of range for {rows} rows"),
            });
        }
        if indices.is_empty() {
            return Err(TensorError::Shape {
                op: "gather_rows",
                msg: "empty index list".into(),
            });
        }
        let mut out = Vec::with_capacity(indices.len() * len);
        {
            let data = self.data();
            for &i in indices {
                out.extend_from_slice(&data[i * len..(i + 1) * len]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        let idx = indices.to_vec();
        let n = self.numel();
        Ok(Tensor::from_op(out, shape, "gather_rows", vec![self.clone()], move |ctx| {
            let mut g = vec![F::zero(); n];
            for (src, &i) in ctx.grad.chunks(len).zip(&idx) {
                g[i * len..(i + 1) * len].iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
            vec![Some(g)]
        }))
    }

    /// Averages slices along the first axis that share a segment id.
    /// Every segment in `0..segments` must be non-empty.
    pub fn segment_mean(&self, segment_of: &[usize], segments: usize) -> Result<Self> {
        let (rows, len) = row_len("segment_mean", self.shape())?;
        if segment_of.len() != rows {
            return Err(TensorError::Shape {
                op: "segment_mean",
                msg: format!("{} segment ids for {rows} rows", segment_of.len()),
            });
        }
        let mut counts = vec![0usize; segments];
        for &s in segment_of {
            if s >= segments {
                return Err(TensorError::Shape {
                    op: "segment_mean",
                    msg: format!("segment {s} out of range {segments}"),
                });
            }
            counts[s] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(TensorError::Shape {
                op: "segment_mean",
                msg: format!("segment {empty} has no members"),
            });
        }
        let mut acc = vec![0f64; segments * len];
        {
            let data = self.data();
            for (row, &s) in data.chunks(len).zip(segment_of) {
                acc[s * len..(s + 1) * len].iter_mut().zip(row).for_each(|(a, v)| *a += v.f64());
            }
        }
        let out: Vec<F> = acc
            .chunks(len)
            .zip(&counts)
            .flat_map(|(row, &c)| row.iter().map(move |v| F::of(v / c as f64)))
            .collect();
        let mut shape = self.shape().to_vec();
        shape[0] = segments;
        let seg = segment_of.to_vec();
        Ok(Tensor::from_op(out, shape, "segment_mean", vec![self.clone()], move |ctx| {
            let mut g = Vec::with_capacity(rows * len);
            for &s in &seg {
                let inv = F::of(1.0 / counts[s] as f64);
                g.extend(ctx.grad[s * len..(s + 1) * len].iter().map(|&v| v * inv));
            }
            vec![Some(g)]
        }))
    }

    /// Mean cross-entropy of row logits against `target` over rows kept by `mask`.
    pub fn cross_entropy(&self, target: &Target<F>, mask: Option<&[bool]>) -> Result<Self> {
        let shape = self.shape();
        if shape.len() != 2 || shape[1] < 2 {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                msg: format!("expected [rows, classes>=2] logits, got {shape:?}"),
            });
        }
        let (b, c) = (shape[0], shape[1]);
        let probs_target: Vec<F> = match target {
            Target::Classes(cls) => {
                if cls.len() != b || cls.iter().any(|&t| t >= c) {
                    return Err(TensorError::Shape {
                        op: "cross_entropy",
                        msg: format!("class targets {cls:?} do not fit {b} rows of {c} classes"),
                    });
                }
                let mut t = vec![F::zero(); b * c];
                for (r, &cl) in cls.iter().enumerate() {
                    t[r * c + cl] = F::one();
                }
                t
            }
            Target::Probs(p) => {
                if p.len() != b * c {
                    return Err(TensorError::Shape {
                        op: "cross_entropy",
                        msg: format!("{} target values for {b}x{c} logits", p.len()),
                    });
                }
                p.clone()
            }
        };
        let keep: Vec<bool> = match mask {
            Some(m) if m.len() != b => {
                return Err(TensorError::Shape {
                    op: "cross_entropy",
                    msg: format!("mask of length {} for {b} rows", m.len()),
                })
            }
            Some(m) => m.to_vec(),
            None => vec![true; b],
        };
        let kept = keep.iter().filter(|&&k| k).count();
        if kept == 0 {
            return Err(TensorError::EmptyBatch { op: "cross_entropy" });
        }
        let logits = self.data();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "cross_entropy" });
        }
        let mut probs = vec![F::zero(); b * c];
        let mut total = 0f64;
        for r in 0..b {
            let row = &logits[r * c..(r + 1) * c];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
            let lse = max + row.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                probs[r * c + j] = F::of((row[j].f64() - lse).exp());
            }
            if keep[r] {
                total -= (0..c)
                    .map(|j| probs_target[r * c + j].f64() * (row[j].f64() - lse))
                    .sum::<f64>();
            }
        }
        drop(logits);
        let inv = F::of(1.0 / kept as f64);
        Ok(Tensor::from_op(
            vec![F::of(total / kept as f64)],
            vec![],
            "cross_entropy",
            vec![self.clone()],
            move |ctx| {
                let scale = ctx.grad[0] * inv;
                let mut g = vec![F::zero(); b * c];
                for r in (0..b).filter(|&r| keep[r]) {
                    let tsum: F = probs_target[r * c..(r + 1) * c].iter().copied().sum();
                    for j in 0..c {
                        g[r * c + j] = scale * (probs[r * c + j] * tsum - probs_target[r * c + j]);
                    }
                }
                vec![Some(g)]
            },
        ))
    }
}

fn last_axis(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape.last() {
        Some(&c) if c >= 1 => Ok((numel(shape) / c, c)),
        _ => Err(TensorError::Shape {
            op,
            msg: "expected at least one axis".into(),
        }),
    }
}

/// Row mean and reciprocal standard deviation, accumulated in 64 bits.
fn row_stats<F: Real>(row: &[F], eps: f64) -> (F, F) {
    let n = row.len() as f64;
    let mean = row.iter().map(|v| v.f64()).sum::<f64>() / n;
    let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / n;
    (F::of(mean), F::of(1.0 / (var + eps).sqrt()))
}

/// Stable softmax of one row into `dst`; the normaliser accumulates in 64 bits.
pub(crate) fn softmax_into<F: Real>(row: &[F], dst: &mut [F]) {
    let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let mut total = 0f64;
    for (d, &v) in dst.iter_mut().zip(row) {
        *d = (v - max).exp();
        total += d.f64();
    }
    let inv = F::of(1.0 / total);
    dst.iter_mut().for_each(|d| *d *= inv);
}

/// For each broadcast batch index, the matrix index inside an operand whose
/// batch shape is `own`.
fn matrix_offsets(own: &[usize], batch: &[usize]) -> Vec<usize> {
    let s = broadcast_strides(own, batch);
    let mut offs = Vec::with_capacity(numel(batch));
    for_each_broadcast(batch, &s, &s, |_, i, _| offs.push(i));
    offs
}

#[derive(Clone, Copy)]
enum Layout {
    /// Row-major as stored.
    N,
    /// Transposed view of a row-major matrix with the given row length.
    T(usize),
}

impl Layout {
    fn strides(self, cols: usize) -> (isize, isize) {
        match self {
            Layout::N => (cols as isize, 1),
            Layout::T(ld) => (1, ld as isize),
        }
    }
}

/// `c[coff..] (+)= a[aoff..] (m x k) * b[boff..] (k x n)`.
#[allow(clippy::too_many_arguments)]
fn gemm_into<F: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    aoff: usize,
    la: Layout,
    b: &[F],
    boff: usize,
    lb: Layout,
    c: &mut [F],
    coff: usize,
    accumulate: bool,
) {
    assert!(a.len() >= aoff + m * k && b.len() >= boff + k * n && c.len() >= coff + m * n);
    let (rsa, csa) = la.strides(k);
    let (rsb, csb) = lb.strides(n);
    let beta = if accumulate { F::one() } else { F::zero() };
    // SAFETY: bounds asserted above; `c` is a distinct mutable slice.
    unsafe {
        F::gemm(
            m,
            k,
            n,
            F::one(),
            a.as_ptr().add(aoff),
            rsa,
            csa,
            b.as_ptr().add(boff),
            rsb,
            csb,
            beta,
            c.as_mut_ptr().add(coff),
            n as isize,
            1,
        );
    }
}
