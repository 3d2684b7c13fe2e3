//! Tape of recorded operations and reverse-mode differentiation.
//!
//! A [`Graph`] is built eagerly: every method computes its value immediately
//! and appends a node. [`Graph::backward`] then walks the tape once in
//! reverse order, accumulating gradients into parents. Nodes that do not
//! depend on any trainable leaf are skipped.

use crate::error::{Error, Result};
use crate::ops::{self, KeyMask, NormStats, Reduce};
use crate::tensor::{split_axis, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Gelu(Var, Vec<f64>),
    Softmax(Var),
    LogSoftmax(Var, Option<KeyMask>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        stats: NormStats,
    },
    NormalizeRows(Var, Vec<f64>),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Gather(Var, Vec<usize>, usize),
    Concat(Vec<Var>, usize),
    Reduce(Var, usize, Reduce, Vec<usize>),
    SumAll(Var),
    Pick(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `var` does not influence the differentiated output.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies `v`'s current value into a fresh constant (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `x W (+ b)` with `W: [in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Sum with suffix broadcasting of `y` over the leading axes of `x`.
    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        let value = ops::add(self.value(x), self.value(y))?;
        Ok(self.push(value, Op::Add(x, y), &[x, y]))
    }

    pub fn sub(&mut self, x: Var, y: Var) -> Result<Var> {
        self.same_shape("sub", x, y)?;
        let mut value = self.value(x).clone();
        for (o, v) in value.data_mut().iter_mut().zip(self.value(y).data()) {
            *o -= v;
        }
        Ok(self.push(value, Op::Sub(x, y), &[x, y]))
    }

    pub fn mul(&mut self, x: Var, y: Var) -> Result<Var> {
        self.same_shape("mul", x, y)?;
        let mut value = self.value(x).clone();
        for (o, v) in value.data_mut().iter_mut().zip(self.value(y).data()) {
            *o *= v;
        }
        Ok(self.push(value, Op::Mul(x, y), &[x, y]))
    }

    /// `x * s` for a single-element `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::Shape {
                op: "mul_scalar",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(s).to_vec(),
            });
        }
        let sv = self.value(s).item();
        let value = self.value(x).map(|v| v * sv);
        Ok(self.push(value, Op::MulScalar(x, s), &[x, s]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        self.push(value, Op::Exp(x), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let (value, deriv) = ops::gelu_with_grad(self.value(x));
        self.push(value, Op::Gelu(x, deriv), &[x])
    }

    /// Softmax over the last axis. Masked keys get probability exactly zero.
    pub fn softmax(&mut self, x: Var, mask: Option<KeyMask>) -> Result<Var> {
        self.check_mask("softmax", x, mask.as_ref())?;
        let value = ops::softmax_last(self.value(x), mask.as_ref());
        Ok(self.push(value, Op::Softmax(x), &[x]))
    }

    pub fn log_softmax(&mut self, x: Var, mask: Option<KeyMask>) -> Result<Var> {
        self.check_mask("log_softmax", x, mask.as_ref())?;
        let value = ops::log_softmax_last(self.value(x), mask.as_ref());
        Ok(self.push(value, Op::LogSoftmax(x, mask), &[x]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (value, stats) =
            ops::layer_norm_with_stats(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            },
            &[x, gain, bias],
        ))
    }

    /// Unit L2 norm along the last axis; zero rows are an error.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let value = ops::normalize_rows(self.value(x))?;
        let cols = *self.shape(x).last().expect("rank >= 1");
        let norms = self
            .value(x)
            .data()
            .chunks(cols)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(self.push(value, Op::NormalizeRows(x, norms), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let value = ops::permute(self.value(x), axes)?;
        Ok(self.push(value, Op::Permute(x, axes.to_vec()), &[x]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::Axis {
                op: "transpose",
                axis: 1,
                rank: r,
            });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn gather(&mut self, x: Var, indices: &[usize], axis: usize) -> Result<Var> {
        let value = ops::gather(self.value(x), indices, axis)?;
        Ok(self.push(value, Op::Gather(x, indices.to_vec(), axis), &[x]))
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let value = ops::embedding_lookup(self.value(table), ids)?;
        Ok(self.push(value, Op::Gather(table, ids.to_vec(), 0), &[table]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
        let value = ops::concat(&values, axis)?;
        Ok(self.push(value, Op::Concat(xs.to_vec(), axis), xs))
    }

    pub fn reduce(&mut self, x: Var, axis: usize, kind: Reduce) -> Result<Var> {
        let (value, arg) = ops::reduce_with_argmax(self.value(x), axis, kind)?;
        Ok(self.push(value, Op::Reduce(x, axis, kind, arg), &[x]))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// `out[r] = x[r, targets[r]]` for a rank-2 `x`.
    pub fn pick(&mut self, x: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::Shape {
                op: "pick",
                lhs: shape,
                rhs: vec![targets.len()],
            });
        }
        let cols = shape[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::Index {
                op: "pick",
                index: bad,
                extent: cols,
            });
        }
        let data = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| self.value(x).data()[r * cols + t])
            .collect();
        let value = Tensor::from_vec(data);
        Ok(self.push(value, Op::Pick(x, targets.to_vec()), &[x]))
    }

    fn same_shape(&self, op: &'static str, x: Var, y: Var) -> Result<()> {
        if self.shape(x) != self.shape(y) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(y).to_vec(),
            });
        }
        Ok(())
    }

    fn check_mask(&self, op: &'static str, x: Var, mask: Option<&KeyMask>) -> Result<()> {
        let Some(mask) = mask else { return Ok(()) };
        let shape = self.shape(x);
        let (r, c) = mask.dims();
        let ok = shape.len() >= 2 && shape[shape.len() - 2] == r && shape[shape.len() - 1] == c;
        if !ok {
            return Err(Error::Shape {
                op,
                lhs: shape.to_vec(),
                rhs: vec![r, c],
            });
        }
        Ok(())
    }

    /// Reverse pass from a single-element `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.value(root).numel(),
            1,
            "backward requires a scalar output"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(self.shape(root)));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, g, grads),
            Op::Add(x, y) => {
                self.accumulate(grads, *x, g.clone());
                if self.wants(*y) {
                    let inner = self.value(*y).numel();
                    let mut gy = Tensor::zeros(self.shape(*y));
                    for chunk in g.data().chunks(inner) {
                        for (o, v) in gy.data_mut().iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *y, gy);
                }
            }
            Op::Sub(x, y) => {
                self.accumulate(grads, *x, g.clone());
                self.accumulate(grads, *y, g.map(|v| -v));
            }
            Op::Mul(x, y) => {
                if self.wants(*x) {
                    let mut gx = g.clone();
                    for (o, v) in gx.data_mut().iter_mut().zip(self.value(*y).data()) {
                        *o *= v;
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*y) {
                    let mut gy = g.clone();
                    for (o, v) in gy.data_mut().iter_mut().zip(self.value(*x).data()) {
                        *o *= v;
                    }
                    self.accumulate(grads, *y, gy);
                }
            }
            Op::MulScalar(x, s) => {
                let sv = self.value(*s).item();
                if self.wants(*x) {
                    self.accumulate(grads, *x, g.map(|v| v * sv));
                }
                if self.wants(*s) {
                    let dot: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(a, b)| a * b)
                        .sum();
                    let gs = Tensor::new(self.shape(*s), vec![dot]).expect("single element");
                    self.accumulate(grads, *s, gs);
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, g.map(|v| v * c)),
            Op::Exp(x) => {
                let mut gx = g.clone();
                for (o, y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                    *o *= y;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Gelu(x, deriv) => {
                let mut gx = g.clone();
                for (o, &d) in gx.data_mut().iter_mut().zip(deriv) {
                    *o *= d;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let cols = *g.shape().last().expect("rank >= 1");
                let mut gx = g.clone();
                for (gr, yr) in gx.data_mut().chunks_mut(cols).zip(node.value.data().chunks(cols)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (o, &y) in gr.iter_mut().zip(yr) {
                        *o = y * (*o - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LogSoftmax(x, mask) => {
                let cols = *g.shape().last().expect("rank >= 1");
                let mut gx = g.clone();
                for (r, (gr, yr)) in gx
                    .data_mut()
                    .chunks_mut(cols)
                    .zip(node.value.data().chunks(cols))
                    .enumerate()
                {
                    let allowed = mask.as_ref().map(|m| m.row(r));
                    let ok = |j: usize| allowed.is_none_or(|a| a[j]);
                    let total: f64 = (0..cols).filter(|&j| ok(j)).map(|j| gr[j]).sum();
                    for j in 0..cols {
                        gr[j] = if ok(j) { gr[j] - yr[j].exp() * total } else { 0.0 };
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            } => self.layer_norm_backward(*x, *gain, *bias, stats, g, grads),
            Op::NormalizeRows(x, norms) => {
                let cols = *g.shape().last().expect("rank >= 1");
                let mut gx = g.clone();
                for ((gr, yr), &n) in gx
                    .data_mut()
                    .chunks_mut(cols)
                    .zip(node.value.data().chunks(cols))
                    .zip(norms)
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (o, &y) in gr.iter_mut().zip(yr) {
                        *o = (*o - y * dot) / n;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => {
                let gx = g.reshape(self.shape(*x)).expect("same element count");
                self.accumulate(grads, *x, gx);
            }
            Op::Permute(x, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let gx = ops::permute(g, &inverse).expect("valid inverse permutation");
                self.accumulate(grads, *x, gx);
            }
            Op::Gather(x, indices, axis) => {
                let gx = ops::scatter_add(self.shape(*x), g, indices, *axis);
                self.accumulate(grads, *x, gx);
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let mut start = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    if self.wants(x) {
                        let mut data = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let s = (o * total + start) * inner;
                            data.extend_from_slice(&g.data()[s..s + len * inner]);
                        }
                        let gx = Tensor::new(self.shape(x), data).expect("slice of gradient");
                        self.accumulate(grads, x, gx);
                    }
                    start += len;
                }
            }
            Op::Reduce(x, axis, kind, arg) => {
                let shape = self.shape(*x);
                let (outer, extent, inner) = split_axis(shape, *axis);
                let mut gx = Tensor::zeros(shape);
                let dst = gx.data_mut();
                for o in 0..outer {
                    for j in 0..inner {
                        let gv = g.data()[o * inner + j];
                        match kind {
                            Reduce::Sum | Reduce::Mean => {
                                let v = if *kind == Reduce::Mean {
                                    gv / extent as f64
                                } else {
                                    gv
                                };
                                for i in 0..extent {
                                    dst[(o * extent + i) * inner + j] += v;
                                }
                            }
                            Reduce::Max => {
                                let i = arg[o * inner + j];
                                dst[(o * extent + i) * inner + j] += gv;
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SumAll(x) => {
                let gx = Tensor::full(self.shape(*x), g.item());
                self.accumulate(grads, *x, gx);
            }
            Op::Pick(x, targets) => {
                let shape = self.shape(*x);
                let cols = shape[1];
                let mut gx = Tensor::zeros(shape);
                for (r, &t) in targets.iter().enumerate() {
                    gx.data_mut()[r * cols + t] += g.data()[r];
                }
                self.accumulate(grads, *x, gx);
            }
        }
    }

    fn matmul_backward(&self, a: Var, b: Var, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let (d, _) = ops::matmul_dims(self.shape(a), self.shape(b)).expect("validated on forward");
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let gv = g.data();
        if d.b_batch == 1 && d.a_batch == d.batch {
            // Shared right operand (a linear layer): treat `a` as one tall matrix.
            let rows = d.batch * d.m;
            if self.wants(a) {
                let bt = ops::transpose_block(bv, d.k, d.n);
                let mut ga = vec![0.0; rows * d.k];
                ops::gemm_acc(gv, &bt, &mut ga, rows, d.n, d.k);
                self.accumulate(grads, a, Tensor::new(self.shape(a), ga).expect("shape of a"));
            }
            if self.wants(b) {
                let mut gb = vec![0.0; d.k * d.n];
                ops::gemm_tn_acc(av, gv, &mut gb, rows, d.k, d.n);
                self.accumulate(grads, b, Tensor::new(self.shape(b), gb).expect("shape of b"));
            }
            return;
        }
        if self.wants(a) {
            // dA = G B^T
            let mut ga = vec![0.0; d.a_batch * d.m * d.k];
            let mut bt_cache: Option<Vec<f64>> = None;
            for bi in 0..d.batch {
                let ai = if d.a_batch == 1 { 0 } else { bi };
                let bj = if d.b_batch == 1 { 0 } else { bi };
                let bt = if d.b_batch == 1 {
                    bt_cache
                        .get_or_insert_with(|| ops::transpose_block(&bv[..d.k * d.n], d.k, d.n))
                        .clone()
                } else {
                    ops::transpose_block(&bv[bj * d.k * d.n..(bj + 1) * d.k * d.n], d.k, d.n)
                };
                ops::gemm_acc(
                    &gv[bi * d.m * d.n..(bi + 1) * d.m * d.n],
                    &bt,
                    &mut ga[ai * d.m * d.k..(ai + 1) * d.m * d.k],
                    d.m,
                    d.n,
                    d.k,
                );
            }
            let ga = Tensor::new(self.shape(a), ga).expect("shape of a");
            self.accumulate(grads, a, ga);
        }
        if self.wants(b) {
            // dB = A^T G
            let mut gb = vec![0.0; d.b_batch * d.k * d.n];
            for bi in 0..d.batch {
                let ai = if d.a_batch == 1 { 0 } else { bi };
                let bj = if d.b_batch == 1 { 0 } else { bi };
                ops::gemm_tn_acc(
                    &av[ai * d.m * d.k..(ai + 1) * d.m * d.k],
                    &gv[bi * d.m * d.n..(bi + 1) * d.m * d.n],
                    &mut gb[bj * d.k * d.n..(bj + 1) * d.k * d.n],
                    d.m,
                    d.k,
                    d.n,
                );
            }
            let gb = Tensor::new(self.shape(b), gb).expect("shape of b");
            self.accumulate(grads, b, gb);
        }
    }

    fn layer_norm_backward(
        &self,
        x: Var,
        gain: Var,
        bias: Var,
        stats: &NormStats,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let cols = *g.shape().last().expect("rank >= 1");
        let gamma = self.value(gain).data();
        if self.wants(bias) || self.wants(gain) {
            let mut gb = vec![0.0; cols];
            let mut gg = vec![0.0; cols];
            for (gr, hr) in g.data().chunks(cols).zip(stats.xhat.chunks(cols)) {
                for j in 0..cols {
                    gb[j] += gr[j];
                    gg[j] += gr[j] * hr[j];
                }
            }
            self.accumulate(grads, bias, Tensor::from_vec(gb));
            self.accumulate(grads, gain, Tensor::from_vec(gg));
        }
        if self.wants(x) {
            let mut gx = vec![0.0; g.numel()];
            let n = cols as f64;
            for (r, ((gr, hr), out)) in g
                .data()
                .chunks(cols)
                .zip(stats.xhat.chunks(cols))
                .zip(gx.chunks_mut(cols))
                .enumerate()
            {
                let mut mean_d = 0.0;
                let mut mean_dh = 0.0;
                for j in 0..cols {
                    let d = gr[j] * gamma[j];
                    mean_d += d;
                    mean_dh += d * hr[j];
                }
                mean_d /= n;
                mean_dh /= n;
                let rs = stats.rstd[r];
                for j in 0..cols {
                    let d = gr[j] * gamma[j];
                    out[j] = rs * (d - mean_d - hr[j] * mean_dh);
                }
            }
            let gx = Tensor::new(g.shape(), gx).expect("shape of x");
            self.accumulate(grads, x, gx);
        }
    }
}
