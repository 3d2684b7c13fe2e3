//! Forward kernels on plain tensors.
//!
//! These are the non-recording versions of the graph operations. The graph
//! calls into the same kernels, so values computed here and values computed
//! on a tape are bit-identical.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{split_axis, Tensor};

/// `sqrt(2 / pi)` for the tanh form of GELU.
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

/// Boolean `[rows, cols]` pattern applied to the last two axes of a softmax
/// input. `true` marks an admissible key; masked entries get probability
/// exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyMask {
    rows: usize,
    cols: usize,
    allowed: Arc<[bool]>,
}

impl KeyMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::Shape {
                op: "key_mask",
                lhs: vec![rows, cols],
                rhs: vec![allowed.len()],
            });
        }
        if (0..rows).any(|r| !allowed[r * cols..(r + 1) * cols].iter().any(|&a| a)) {
            return Err(Error::Degenerate {
                op: "key_mask",
                detail: "a row admits no keys".into(),
            });
        }
        Ok(Self {
            rows,
            cols,
            allowed: allowed.into(),
        })
    }

    /// Lower-triangular mask: query `i` sees keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n * n).map(|i| i % n <= i / n).collect();
        Self::new(n, n, allowed).expect("causal mask is well formed")
    }

    /// Everything except the diagonal.
    pub fn off_diagonal(n: usize) -> Result<Self> {
        let allowed = (0..n * n).map(|i| i % n != i / n).collect();
        Self::new(n, n, allowed)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Admissibility pattern for the `row`-th row of the masked block.
    pub(crate) fn row(&self, row: usize) -> &[bool] {
        let r = row % self.rows;
        &self.allowed[r * self.cols..(r + 1) * self.cols]
    }
}

fn batch_extent(shape: &[usize]) -> usize {
    shape[..shape.len() - 2].iter().product()
}

/// Validated geometry of a (possibly batched) matrix product.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatmulDims {
    pub batch: usize,
    pub a_batch: usize,
    pub b_batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(MatmulDims, Vec<usize>)> {
    let err = || Error::Shape {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(err());
    }
    let a_lead = &a[..a.len() - 2];
    let b_lead = &b[..b.len() - 2];
    let lead = if a_lead == b_lead || b_lead.is_empty() {
        a_lead
    } else if a_lead.is_empty() {
        b_lead
    } else {
        return Err(err());
    };
    let mut out = lead.to_vec();
    out.extend([m, n]);
    let dims = MatmulDims {
        batch: lead.iter().product(),
        a_batch: batch_extent(a),
        b_batch: batch_extent(b),
        m,
        k,
        n,
    };
    Ok((dims, out))
}

const MR: usize = 4;
const NR: usize = 8;

/// `out[m,n] += a[m,k] * b[k,n]`. Each output element accumulates its
/// products in increasing `k` order, so tiling does not change the result.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let full_cols = n - n % NR;
    let mut i = 0;
    while i + MR <= m {
        let rows: [&[f64]; MR] = std::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
        let mut j = 0;
        while j < full_cols {
            let mut acc = [[0.0f64; NR]; MR];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&out[(i + r) * n + j..(i + r) * n + j + NR]);
            }
            for (p, brow) in b.chunks_exact(n).take(k).enumerate() {
                let bv: &[f64; NR] = brow[j..j + NR].try_into().expect("NR wide");
                let x: [f64; MR] = std::array::from_fn(|r| rows[r][p]);
                for r in 0..MR {
                    for c in 0..NR {
                        acc[r][c] += x[r] * bv[c];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                out[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(row);
            }
            j += NR;
        }
        if full_cols < n {
            gemm_rows(a, b, out, i, i + MR, k, n, full_cols);
        }
        i += MR;
    }
    gemm_rows(a, b, out, i, m, k, n, 0);
}

/// Plain row-by-row accumulation over rows `r0..r1`, columns `c0..n`.
#[allow(clippy::too_many_arguments)]
fn gemm_rows(a: &[f64], b: &[f64], out: &mut [f64], r0: usize, r1: usize, k: usize, n: usize, c0: usize) {
    for i in r0..r1 {
        let orow = &mut out[i * n + c0..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n + c0..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
pub(crate) fn gemm_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let at = transpose_block(a, m, k);
    gemm_acc(&at, g, out, k, m, n);
}

pub(crate) fn transpose_block(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Batched matrix product over leading axes; a rank-2 operand broadcasts.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (d, shape) = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![0.0; d.batch * d.m * d.n];
    if d.b_batch == 1 {
        // Shared right operand: one tall product.
        let rows = d.a_batch * d.m;
        gemm_acc(a.data(), b.data(), &mut out[..rows * d.n], rows, d.k, d.n);
        if d.a_batch == d.batch {
            return Tensor::new(&shape, out);
        }
        for bi in 1..d.batch {
            out.copy_within(0..d.m * d.n, bi * d.m * d.n);
        }
        return Tensor::new(&shape, out);
    }
    for bi in 0..d.batch {
        let ai = if d.a_batch == 1 { 0 } else { bi };
        let bj = if d.b_batch == 1 { 0 } else { bi };
        gemm_acc(
            &a.data()[ai * d.m * d.k..(ai + 1) * d.m * d.k],
            &b.data()[bj * d.k * d.n..(bj + 1) * d.k * d.n],
            &mut out[bi * d.m * d.n..(bi + 1) * d.m * d.n],
            d.m,
            d.k,
            d.n,
        );
    }
    Tensor::new(&shape, out)
}

/// Swaps the last two axes.
pub fn transpose(x: &Tensor) -> Result<Tensor> {
    let r = x.rank();
    if r < 2 {
        return Err(Error::Axis {
            op: "transpose",
            axis: 1,
            rank: r,
        });
    }
    let mut axes: Vec<usize> = (0..r).collect();
    axes.swap(r - 2, r - 1);
    permute(x, &axes)
}

pub fn permute(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank {
        return Err(Error::Shape {
            op: "permute",
            lhs: x.shape().to_vec(),
            rhs: axes.to_vec(),
        });
    }
    for &a in axes {
        if a >= rank || seen[a] {
            return Err(Error::Axis {
                op: "permute",
                axis: a,
                rank,
            });
        }
        seen[a] = true;
    }
    let src_shape = x.shape();
    let mut src_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        src_strides[i] = src_strides[i + 1] * src_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| src_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
    let src = x.data();
    let mut out = Vec::with_capacity(x.numel());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    let inner = out_shape[rank - 1];
    let inner_stride = strides[rank - 1];
    loop {
        for j in 0..inner {
            out.push(src[offset + j * inner_stride]);
        }
        // Advance the multi-index over all but the last axis.
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return Tensor::new(&out_shape, out);
            }
            axis -= 1;
            idx[axis] += 1;
            offset += strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            offset -= strides[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
}

fn check_axis(op: &'static str, x: &Tensor, axis: usize) -> Result<()> {
    if axis >= x.rank() {
        return Err(Error::Axis {
            op,
            axis,
            rank: x.rank(),
        });
    }
    Ok(())
}

/// Softmax along `axis`, stabilized by subtracting the running maximum.
/// NaN inputs propagate to NaN outputs.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("softmax", x, axis)?;
    if axis == x.rank() - 1 {
        return Ok(softmax_last(x, None));
    }
    let mut axes: Vec<usize> = (0..x.rank()).collect();
    axes.swap(axis, x.rank() - 1);
    let moved = permute(x, &axes)?;
    permute(&softmax_last(&moved, None), &axes)
}

pub(crate) fn softmax_row(row: &[f64], allowed: Option<&[bool]>, out: &mut [f64]) {
    let ok = |j: usize| allowed.is_none_or(|a| a[j]);
    let mut max = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if ok(j) && !(v <= max) {
            max = v;
        }
    }
    let mut denom = 0.0;
    for (j, (o, &v)) in out.iter_mut().zip(row).enumerate() {
        *o = if ok(j) { (v - max).exp() } else { 0.0 };
        denom += *o;
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
}

/// Softmax over the last axis with an optional key mask on the last two axes.
pub fn softmax_last(x: &Tensor, mask: Option<&KeyMask>) -> Tensor {
    let cols = *x.shape().last().expect("rank >= 1");
    let mut out = vec![0.0; x.numel()];
    for (r, (src, dst)) in x.data().chunks(cols).zip(out.chunks_mut(cols)).enumerate() {
        softmax_row(src, mask.map(|m| m.row(r)), dst);
    }
    Tensor::new(x.shape(), out).expect("shape preserved")
}

/// Log-softmax over the last axis. Masked entries are `-inf`.
pub fn log_softmax_last(x: &Tensor, mask: Option<&KeyMask>) -> Tensor {
    let cols = *x.shape().last().expect("rank >= 1");
    let mut out = vec![0.0; x.numel()];
    for (r, (src, dst)) in x.data().chunks(cols).zip(out.chunks_mut(cols)).enumerate() {
        let allowed = mask.map(|m| m.row(r));
        let ok = |j: usize| allowed.is_none_or(|a| a[j]);
        let max = src
            .iter()
            .enumerate()
            .filter(|(j, _)| ok(*j))
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = src
            .iter()
            .enumerate()
            .filter(|(j, _)| ok(*j))
            .map(|(_, &v)| (v - max).exp())
            .sum();
        let lse = max + sum.ln();
        for (j, (o, &v)) in dst.iter_mut().zip(src).enumerate() {
            *o = if ok(j) { v - lse } else { f64::NEG_INFINITY };
        }
    }
    Tensor::new(x.shape(), out).expect("shape preserved")
}

/// Per-row statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct NormStats {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm_with_stats(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, NormStats)> {
    let cols = *x.shape().last().expect("rank >= 1");
    if gain.shape() != [cols] || bias.shape() != [cols] {
        return Err(Error::Shape {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gain.shape().to_vec(),
        });
    }
    let rows = x.rows();
    let mut out = vec![0.0; x.numel()];
    let mut xhat = vec![0.0; x.numel()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let src = x.row(r);
        let mean = src.iter().sum::<f64>() / cols as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let rs = 1.0 / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..cols {
            let h = (src[j] - mean) * rs;
            xhat[r * cols + j] = h;
            out[r * cols + j] = h * gain.data()[j] + bias.data()[j];
        }
    }
    Ok((Tensor::new(x.shape(), out)?, NormStats { xhat, rstd }))
}

/// Normalizes each last-axis row to zero mean and unit variance, then applies
/// `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_with_stats(x, gain, bias, eps).map(|(y, _)| y)
}

/// GELU, tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + fast_tanh(GELU_C * (x + GELU_A * x * x * x)))
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    let t = fast_tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

/// `tanh` through a single `exp`; absolute error stays near one ulp of 1.
#[inline]
fn fast_tanh(u: f64) -> f64 {
    if u > 20.0 {
        1.0
    } else if u < -20.0 {
        -1.0
    } else {
        1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
    }
}

/// GELU values together with their derivatives, sharing one `tanh` each.
pub(crate) fn gelu_with_grad(x: &Tensor) -> (Tensor, Vec<f64>) {
    let mut y = x.clone();
    let mut d = Vec::with_capacity(x.numel());
    for v in y.data_mut() {
        let x = *v;
        let t = fast_tanh(GELU_C * (x + GELU_A * x * x * x));
        *v = 0.5 * x * (1.0 + t);
        d.push(0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x));
    }
    (y, d)
}

/// `x W + b` with `W: [in, out]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let mut y = matmul(x, w)?;
    if let Some(b) = b {
        y = add(&y, b)?;
    }
    Ok(y)
}

/// Elementwise sum where `y`'s shape must equal `x`'s or be a suffix of it.
pub fn add(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    let ys = y.shape();
    if ys.len() > xs.len() || xs[xs.len() - ys.len()..] != *ys {
        return Err(Error::Shape {
            op: "add",
            lhs: xs.to_vec(),
            rhs: ys.to_vec(),
        });
    }
    let inner = y.numel();
    let mut out = x.data().to_vec();
    for chunk in out.chunks_mut(inner) {
        for (o, v) in chunk.iter_mut().zip(y.data()) {
            *o += v;
        }
    }
    Tensor::new(xs, out)
}

/// Rows of `table` selected by `ids`: `[ids.len(), width]`.
pub fn embedding_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    if table.rank() != 2 {
        return Err(Error::Axis {
            op: "embedding_lookup",
            axis: 1,
            rank: table.rank(),
        });
    }
    gather(table, ids, 0)
}

pub fn gather(x: &Tensor, indices: &[usize], axis: usize) -> Result<Tensor> {
    check_axis("gather", x, axis)?;
    if indices.is_empty() {
        return Err(Error::Shape {
            op: "gather",
            lhs: x.shape().to_vec(),
            rhs: vec![0],
        });
    }
    let (outer, extent, inner) = split_axis(x.shape(), axis);
    if let Some(&bad) = indices.iter().find(|&&i| i >= extent) {
        return Err(Error::Index {
            op: "gather",
            index: bad,
            extent,
        });
    }
    let mut out = Vec::with_capacity(outer * indices.len() * inner);
    for o in 0..outer {
        for &i in indices {
            let start = (o * extent + i) * inner;
            out.extend_from_slice(&x.data()[start..start + inner]);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = indices.len();
    Tensor::new(&shape, out)
}

/// Adjoint of [`gather`]: accumulates `src` into a zero tensor of `shape`.
pub fn scatter_add(shape: &[usize], src: &Tensor, indices: &[usize], axis: usize) -> Tensor {
    let (outer, extent, inner) = split_axis(shape, axis);
    let mut out = Tensor::zeros(shape);
    let dst = out.data_mut();
    for o in 0..outer {
        for (slot, &i) in indices.iter().enumerate() {
            let s = (o * indices.len() + slot) * inner;
            let d = (o * extent + i) * inner;
            for j in 0..inner {
                dst[d + j] += src.data()[s + j];
            }
        }
    }
    out
}

pub fn concat(xs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = xs.first().ok_or(Error::Shape {
        op: "concat",
        lhs: vec![],
        rhs: vec![],
    })?;
    check_axis("concat", first, axis)?;
    for x in xs {
        let same_rank = x.rank() == first.rank();
        let compatible = same_rank
            && x
                .shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(Error::Shape {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
    }
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let total: usize = xs.iter().map(|x| x.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for x in xs {
            let len = x.shape()[axis] * inner;
            out.extend_from_slice(&x.data()[o * len..(o + 1) * len]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(&shape, out)
}

/// Reduces `axis` away. For `Max`, ties resolve to the first maximal entry.
pub fn reduce(x: &Tensor, axis: usize, kind: Reduce) -> Result<Tensor> {
    reduce_with_argmax(x, axis, kind).map(|(t, _)| t)
}

pub(crate) fn reduce_with_argmax(
    x: &Tensor,
    axis: usize,
    kind: Reduce,
) -> Result<(Tensor, Vec<usize>)> {
    check_axis("reduce", x, axis)?;
    let (outer, extent, inner) = split_axis(x.shape(), axis);
    let mut out = vec![0.0; outer * inner];
    let mut arg = Vec::new();
    if kind == Reduce::Max {
        arg = vec![0; outer * inner];
    }
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| x.data()[(o * extent + i) * inner + j];
            let slot = o * inner + j;
            match kind {
                Reduce::Sum | Reduce::Mean => {
                    let s: f64 = (0..extent).map(at).sum();
                    out[slot] = if kind == Reduce::Mean {
                        s / extent as f64
                    } else {
                        s
                    };
                }
                Reduce::Max => {
                    let mut best = 0;
                    for i in 1..extent {
                        if at(i) > at(best) {
                            best = i;
                        }
                    }
                    out[slot] = at(best);
                    arg[slot] = best;
                }
            }
        }
    }
    let mut shape: Vec<usize> = x.shape().to_vec();
    shape.remove(axis);
    if shape.is_empty() {
        shape.push(1);
    }
    Ok((Tensor::new(&shape, out)?, arg))
}

/// Scales every last-axis row to unit L2 norm.
pub fn normalize_rows(x: &Tensor) -> Result<Tensor> {
    let cols = *x.shape().last().expect("rank >= 1");
    let mut out = x.data().to_vec();
    for (r, row) in out.chunks_mut(cols).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Degenerate {
                op: "normalize_rows",
                detail: format!("row {r} has norm {norm}"),
            });
        }
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    Tensor::new(x.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_arithmetic() {
        let eye = t2(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = t2(&[vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(matmul(&eye, &b).unwrap(), b);
        let r = matmul(&t2(&[vec![1.0, 2.0]]), &t2(&[vec![3.0], vec![4.0]])).unwrap();
        assert_eq!(r.data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = matmul(&a, &b).unwrap_err();
        assert_eq!(
            err,
            Error::Shape {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn matmul_broadcasts_rank2_rhs() {
        let a = Tensor::new(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = t2(&[vec![1.0], vec![1.0]]);
        let y = matmul(&a, &w).unwrap();
        assert_eq!(y.shape(), &[2, 1, 1]);
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::from_vec(vec![0.0, 0.0]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::from_vec(vec![1000.0; 3]), 0).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&Tensor::from_vec(vec![0.0, 3f64.ln()]), 0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_along_leading_axis() {
        let x = t2(&[vec![0.0, 1.0], vec![0.0, 1.0]]);
        let s = softmax(&x, 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5, 0.5, 0.5]);
        assert!(matches!(softmax(&x, 2), Err(Error::Axis { .. })));
    }

    #[test]
    fn softmax_nan_propagates() {
        let s = softmax(&Tensor::from_vec(vec![f64::NAN, 0.0]), 0).unwrap();
        assert!(s.data().iter().all(|v| v.is_nan()));
    }

    #[test]
    fn masked_softmax_zeroes_masked_keys() {
        let x = Tensor::zeros(&[3, 3]);
        let s = softmax_last(&x, Some(&KeyMask::causal(3)));
        assert_eq!(s.data(), &[1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn layer_norm_examples() {
        let g = Tensor::ones(&[3]);
        let b = Tensor::zeros(&[3]);
        let y = layer_norm(&Tensor::full(&[1, 3], 5.0), &g, &b, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
        let g = Tensor::ones(&[2]);
        let b = Tensor::zeros(&[2]);
        let y = layer_norm(&Tensor::from_vec(vec![1.0, -1.0]), &g, &b, 0.0).unwrap();
        assert_eq!(y.data(), &[1.0, -1.0]);
    }

    #[test]
    fn gelu_at_zero() {
        assert_eq!(gelu_scalar(0.0), 0.0);
    }

    #[test]
    fn gather_rows_and_bad_index() {
        let x = Tensor::new(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(gather(&x, &[2, 0], 0).unwrap().data(), &[3.0, 1.0]);
        assert_eq!(
            gather(&x, &[3], 0).unwrap_err(),
            Error::Index {
                op: "gather",
                index: 3,
                extent: 3
            }
        );
    }

    #[test]
    fn reduce_kinds() {
        let x = t2(&[vec![1.0, 5.0], vec![3.0, 2.0]]);
        assert_eq!(reduce(&x, 0, Reduce::Sum).unwrap().data(), &[4.0, 7.0]);
        assert_eq!(reduce(&x, 1, Reduce::Mean).unwrap().data(), &[3.0, 2.5]);
        assert_eq!(reduce(&x, 1, Reduce::Max).unwrap().data(), &[5.0, 3.0]);
    }

    #[test]
    fn concat_and_permute() {
        let a = t2(&[vec![1.0, 2.0]]);
        let b = t2(&[vec![3.0, 4.0]]);
        let c = concat(&[&a, &b], 0).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(transpose(&c).unwrap().data(), &[1.0, 3.0, 2.0, 4.0]);
        let x = Tensor::new(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let p = permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        // p[i,j,k] = x[j,k,i]
        assert_eq!(p.data()[1 * 6 + 1 * 3 + 2], x.data()[1 * 12 + 2 * 4 + 1]);
    }

    #[test]
    fn normalize_rows_rejects_zero() {
        let y = normalize_rows(&Tensor::from_vec(vec![3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[0.6, 0.8]);
        assert!(matches!(
            normalize_rows(&Tensor::zeros(&[2])),
            Err(Error::Degenerate { .. })
        ));
    }
}
