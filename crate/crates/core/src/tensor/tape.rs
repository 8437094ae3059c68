//! Reverse-mode differentiation over a topologically ordered tape.
//!
//! Every operation appends a node whose inputs precede it, so a single
//! reverse sweep visits each node once. Parameter leaves borrow their value
//! from a [`ParamStore`] instead of copying it.

use std::borrow::Cow;

use super::kernels::{gemm, MatView};
use super::{split_axis, strides, ParamId, ParamStore, Tensor};
use crate::error::{EtmaError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var },
    Elementwise { kind: Binary, a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Softmax { x: Var, axis: usize },
    Gelu(Var),
    Tanh(Var),
    LogClamped { x: Var, floor: f64 },
    Sum { x: Var, axis: usize },
    Mean { x: Var, axis: usize },
    SumAll(Var),
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Gather { table: Var, ids: Vec<usize> },
    Expand(Var),
    Normalize { x: Var, inv_std: Vec<f64> },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for one forward/backward pass.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    params: Option<&'p ParamStore>,
    param_vars: Vec<Option<Var>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: None,
            param_vars: Vec::new(),
        }
    }

    /// A tape whose [`Tape::param`] leaves read from `params`.
    pub fn with_params(params: &'p ParamStore) -> Self {
        Tape {
            nodes: Vec::with_capacity(512),
            params: Some(params),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(id.0).copied().flatten() {
            return v;
        }
        let store = self
            .params
            .expect("Tape::param requires a tape built with Tape::with_params");
        let v = self.push(Cow::Borrowed(store.value(id)), Op::Param(id), true);
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        self.param_vars[id.0] = Some(v);
        v
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(EtmaError::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            MatView::new(self.value(a).data(), m, k),
            MatView::new(self.value(b).data(), k, n),
            &mut out,
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(Tensor::from_parts(vec![m, n], out)), Op::MatMul { a, b }, rg))
    }

    /// Batched product `a[B×m×k] · b[B×k×n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(EtmaError::dim("batch_matmul", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm(
                MatView::new(&da[i * m * k..(i + 1) * m * k], m, k),
                MatView::new(&db[i * k * n..(i + 1) * k * n], k, n),
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Cow::Owned(Tensor::from_parts(vec![bs, m, n], out)),
            Op::BatchMatMul { a, b },
            rg,
        ))
    }

    /// Broadcasting rule: `b` must have the same shape as `a`, a shape equal
    /// to a trailing suffix of `a`'s shape, or exactly one element.
    fn elementwise(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let nb = self.value(b).len();
        let ok = sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb || nb == 1;
        if !ok {
            return Err(EtmaError::dim("elementwise", sa, sb));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let out: Vec<f64> = av
            .chunks(nb)
            .flat_map(|chunk| {
                chunk.iter().zip(bv.iter().cycle()).map(move |(&x, &y)| match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                })
            })
            .collect();
        let shape = sa.to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Cow::Owned(Tensor::from_parts(shape, out)),
            Op::Elementwise { kind, a, b },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(Cow::Owned(t), Op::Scale { x, factor }, rg)
    }

    /// Softmax along `axis`, with the slice maximum subtracted first.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(EtmaError::Index {
                what: "softmax axis",
                index: axis,
                bound: shape.len(),
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let idx = |j: usize| base + j * inner;
                let max = (0..len).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                let mut argmax = 0;
                for j in 0..len {
                    out[idx(j)] /= total;
                    if out[idx(j)] > out[idx(argmax)] {
                        argmax = j;
                    }
                }
                // fold any rounding residual into the largest entry
                let (sum, comp) = neumaier_parts(len, |j| out[idx(j)]);
                if sum + comp != 1.0 {
                    out[idx(argmax)] += (1.0 - sum) - comp;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(Tensor::from_parts(shape, out)), Op::Softmax { x, axis }, rg))
    }

    /// Exact GELU, `x · Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v * std_normal_cdf(v));
        let rg = self.rg(x);
        self.push(Cow::Owned(t), Op::Gelu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(Cow::Owned(t), Op::Tanh(x), rg)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Var {
        let t = self.value(x).map(|v| if v < floor { floor.ln() } else { v.ln() });
        let rg = self.rg(x);
        self.push(Cow::Owned(t), Op::LogClamped { x, floor }, rg)
    }

    fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        let mut s: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != axis)
            .map(|(_, &n)| n)
            .collect();
        if s.is_empty() {
            s.push(1);
        }
        s
    }

    fn reduce(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(EtmaError::Index {
                what: "reduction axis",
                index: axis,
                bound: shape.len(),
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let row = &src[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v /= len as f64);
        }
        let op = if mean {
            Op::Mean { x, axis }
        } else {
            Op::Sum { x, axis }
        };
        let rg = self.rg(x);
        Ok(self.push(
            Cow::Owned(Tensor::from_parts(Self::reduced_shape(&shape, axis), out)),
            op,
            rg,
        ))
    }

    /// Sum over `axis`, removing it.
    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, false)
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, true)
    }

    /// Sum of every element, as a one-element tensor. Uses compensated
    /// summation so constant functions like `Σ softmax` evaluate to 1 exactly.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = neumaier_sum(self.value(x).data());
        let rg = self.rg(x);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::SumAll(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(t), Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(EtmaError::dim("permute", &shape, axes));
        }
        let in_strides = strides(&shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len());
        for_each_offset(&out_shape, &src_strides, |_, off| out.push(src[off]));
        let rg = self.rg(x);
        Ok(self.push(
            Cow::Owned(Tensor::from_parts(out_shape, out)),
            Op::Permute { x, axes: axes.to_vec() },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(EtmaError::dim("transpose", self.shape(x), &[]));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(
                *xs.first()
                    .ok_or_else(|| EtmaError::Contract("concat of nothing".into()))?,
            )
            .to_vec();
        if axis >= first.len() {
            return Err(EtmaError::Index {
                what: "concat axis",
                index: axis,
                bound: first.len(),
            });
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(EtmaError::dim("concat", &first, s));
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Cow::Owned(Tensor::from_parts(out_shape, out)),
            Op::Concat { xs: xs.to_vec(), axis },
            rg,
        ))
    }

    /// `len` consecutive entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(EtmaError::Index {
                what: "slice range end",
                index: start + len,
                bound: shape.get(axis).copied().unwrap_or(0),
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(
            Cow::Owned(Tensor::from_parts(out_shape, out)),
            Op::Slice { x, axis, start },
            rg,
        ))
    }

    /// Rows of a `V×d` table selected by `ids`, giving `ids.len()×d`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(EtmaError::dim("gather", &shape, &[ids.len()]));
        }
        let (rows, d) = (shape[0], shape[1]);
        if ids.is_empty() {
            return Err(EtmaError::Contract("gather with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(EtmaError::Index {
                what: "gather table",
                index: bad,
                bound: rows,
            });
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Cow::Owned(Tensor::from_parts(vec![ids.len(), d], out)),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Repeats size-1 axes of `x` up to `shape` (ranks must agree).
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src_shape = self.shape(x).to_vec();
        if src_shape.len() != shape.len() || src_shape.iter().zip(shape).any(|(&s, &t)| s != t && s != 1) {
            return Err(EtmaError::dim("expand", &src_shape, shape));
        }
        let src_strides = expand_strides(&src_shape);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(shape.iter().product());
        for_each_offset(shape, &src_strides, |_, off| out.push(src[off]));
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(Tensor::from_parts(shape.to_vec(), out)), Op::Expand(x), rg))
    }

    /// `(x − mean) / sqrt(var + eps)` over the last axis (biased variance).
    pub fn normalize(&mut self, x: Var, eps: f64) -> Var {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        let src = self.value(x).data();
        let rows = src.len() / d;
        let mut out = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[r] = s;
            for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mu) * s;
            }
        }
        let rg = self.rg(x);
        self.push(
            Cow::Owned(Tensor::from_parts(shape, out)),
            Op::Normalize { x, inv_std },
            rg,
        )
    }

    /// Propagates `d loss / d node` from a one-element `loss` back to every
    /// reachable leaf that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_retaining(loss, &[])
    }

    /// Like [`Tape::backward`], additionally keeping the gradients of the
    /// intermediate nodes in `retain`.
    pub fn backward_retaining(&self, loss: Var, retain: &[Var]) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(EtmaError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut kept: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut param_leaves = Vec::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if retain.contains(&Var(i)) {
                kept[i] = Some(g.clone());
            }
            match &node.op {
                Op::Leaf => kept[i] = Some(g),
                Op::Param(id) => {
                    param_leaves.push((*id, Var(i)));
                    kept[i] = Some(g);
                }
                op => self.backward_op(op, &node.value, &g, &mut grads),
            }
        }
        Ok(Gradients {
            grads: kept,
            param_leaves,
        })
    }

    fn backward_op(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let gv = MatView::new(g, m, n);
                if self.rg(*a) {
                    let bv = MatView::new(self.value(*b).data(), k, n);
                    gemm(gv, bv.t(), self.buf(grads, *a), 1.0);
                }
                if self.rg(*b) {
                    let av = MatView::new(self.value(*a).data(), m, k);
                    gemm(av.t(), gv, self.buf(grads, *b), 1.0);
                }
            }
            Op::BatchMatMul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                if self.rg(*a) {
                    let bd = self.value(*b).data();
                    let ga = self.buf(grads, *a);
                    for i in 0..bs {
                        gemm(
                            MatView::new(&g[i * m * n..(i + 1) * m * n], m, n),
                            MatView::new(&bd[i * k * n..(i + 1) * k * n], k, n).t(),
                            &mut ga[i * m * k..(i + 1) * m * k],
                            1.0,
                        );
                    }
                }
                if self.rg(*b) {
                    let ad = self.value(*a).data();
                    let gb = self.buf(grads, *b);
                    for i in 0..bs {
                        gemm(
                            MatView::new(&ad[i * m * k..(i + 1) * m * k], m, k).t(),
                            MatView::new(&g[i * m * n..(i + 1) * m * n], m, n),
                            &mut gb[i * k * n..(i + 1) * k * n],
                            1.0,
                        );
                    }
                }
            }
            Op::Elementwise { kind, a, b } => {
                let nb = self.value(*b).len();
                if self.rg(*a) {
                    let ga = self.buf(grads, *a);
                    match kind {
                        Binary::Add | Binary::Sub => add_into(ga, g),
                        Binary::Mul => {
                            let bv = self.value(*b).data();
                            for (gi, gc) in ga.chunks_mut(nb).zip(g.chunks(nb)) {
                                for ((x, &y), &w) in gi.iter_mut().zip(gc).zip(bv) {
                                    *x += y * w;
                                }
                            }
                        }
                    }
                }
                if self.rg(*b) {
                    let av = self.value(*a).data();
                    let gb = self.buf(grads, *b);
                    let sign = if *kind == Binary::Sub { -1.0 } else { 1.0 };
                    for (chunk, achunk) in g.chunks(nb).zip(av.chunks(nb)) {
                        for ((acc, &y), &x) in gb.iter_mut().zip(chunk).zip(achunk) {
                            *acc += match kind {
                                Binary::Mul => y * x,
                                _ => sign * y,
                            };
                        }
                    }
                }
            }
            Op::Scale { x, factor } => {
                for (acc, &y) in self.buf(grads, *x).iter_mut().zip(g) {
                    *acc += y * factor;
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(out.shape(), *axis);
                let y = out.data();
                let gx = self.buf(grads, *x);
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..len {
                            let p = base + j * inner;
                            gx[p] += y[p] * (g[p] - dot);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                for ((acc, &y), &v) in self.buf(grads, *x).iter_mut().zip(g).zip(xv) {
                    *acc += y * (std_normal_cdf(v) + v * std_normal_pdf(v));
                }
            }
            Op::Tanh(x) => {
                for ((acc, &y), &t) in self.buf(grads, *x).iter_mut().zip(g).zip(out.data()) {
                    *acc += y * (1.0 - t * t);
                }
            }
            Op::LogClamped { x, floor } => {
                let xv = self.value(*x).data();
                for ((acc, &y), &v) in self.buf(grads, *x).iter_mut().zip(g).zip(xv) {
                    if v > *floor {
                        *acc += y / v;
                    }
                }
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                let f = if matches!(op, Op::Mean { .. }) {
                    1.0 / len as f64
                } else {
                    1.0
                };
                let gx = self.buf(grads, *x);
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for j in 0..len {
                        let dst = &mut gx[(o * len + j) * inner..(o * len + j + 1) * inner];
                        for (a, &v) in dst.iter_mut().zip(src) {
                            *a += v * f;
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                let s = g[0];
                self.buf(grads, *x).iter_mut().for_each(|a| *a += s);
            }
            Op::Reshape(x) => add_into(self.buf(grads, *x), g),
            Op::Permute { x, axes } => {
                let in_strides = strides(self.shape(*x));
                let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
                let gx = self.buf(grads, *x);
                for_each_offset(out.shape(), &src_strides, |lin, off| gx[off] += g[lin]);
            }
            Op::Concat { xs, axis } => {
                let (outer, _, inner) = split_axis(out.shape(), *axis);
                let total: usize = out.shape()[*axis] * inner;
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis] * inner;
                    if self.rg(v) {
                        let gv = self.buf(grads, v);
                        for o in 0..outer {
                            add_into(
                                &mut gv[o * len..(o + 1) * len],
                                &g[o * total + offset..o * total + offset + len],
                            );
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let len = out.shape()[*axis];
                let gx = self.buf(grads, *x);
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    add_into(
                        &mut gx[base..base + len * inner],
                        &g[o * len * inner..(o + 1) * len * inner],
                    );
                }
            }
            Op::Gather { table, ids } => {
                let d = self.shape(*table)[1];
                let gt = self.buf(grads, *table);
                for (r, &i) in ids.iter().enumerate() {
                    add_into(&mut gt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
            Op::Expand(x) => {
                let src_strides = expand_strides(self.shape(*x));
                let gx = self.buf(grads, *x);
                for_each_offset(out.shape(), &src_strides, |lin, off| gx[off] += g[lin]);
            }
            Op::Normalize { x, inv_std } => {
                let d = *out.shape().last().unwrap();
                let y = out.data();
                let gx = self.buf(grads, *x);
                for (r, &s) in inv_std.iter().enumerate() {
                    let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                    let mean_g = gr.iter().sum::<f64>() / d as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for ((acc, &gi), &yi) in gx[r * d..(r + 1) * d].iter_mut().zip(gr).zip(yr) {
                        *acc += s * (gi - mean_g - yi * mean_gy);
                    }
                }
            }
        }
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut [f64] {
        let n = self.value(v).len();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

/// Gradients produced by [`Tape::backward`], kept for leaf nodes only.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    param_leaves: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of a leaf or retained node; `None` if it was not reached.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.param_leaves
            .iter()
            .filter_map(|&(id, v)| self.get(v).map(|g| (id, g)))
    }
}

fn neumaier_sum(values: &[f64]) -> f64 {
    let (sum, comp) = neumaier_parts(values.len(), |i| values[i]);
    sum + comp
}

/// Running sum and its compensation term.
fn neumaier_parts(n: usize, value: impl Fn(usize) -> f64) -> (f64, f64) {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in (0..n).map(value) {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    (sum, comp)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Strides that read a size-1 axis repeatedly.
fn expand_strides(shape: &[usize]) -> Vec<usize> {
    strides(shape)
        .into_iter()
        .zip(shape)
        .map(|(s, &n)| if n == 1 { 0 } else { s })
        .collect()
}

/// Calls `f(linear_index, source_offset)` for every position of `shape`
/// in row-major order, where the source offset uses `src_strides`.
fn for_each_offset(shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let total: usize = shape.iter().product();
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for lin in 0..total {
        f(lin, off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= src_strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
