//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied to its nodes in creation
//! order, which is already a topological order. [`Graph::backward`] walks the
//! record in reverse and applies each operation's vector-Jacobian product once.

mod kernels;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{split_axis, Tensor};

pub(crate) use kernels::mix64;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Sin(Var),
    Cos(Var),
    Sqrt(Var),
    Square(Var),
    Relu(Var),
    Gelu(Var),
    Matmul(Var, Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Sum {
        x: Var,
        axis: usize,
    },
    Mean {
        x: Var,
        axis: usize,
    },
    SumAll(Var),
    MeanAll(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    RotatePairs {
        x: Var,
        cos: Arc<Vec<f64>>,
        sin: Arc<Vec<f64>>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// An append-only record of tensor operations.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
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

    /// A leaf that does not take part in differentiation.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, false)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, true)
    }

    fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value: t,
            requires_grad,
            op: Op::Leaf,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = kernels::broadcast_shape(ta.shape(), tb.shape())
            .ok_or_else(|| Error::shape(name, ta.shape(), tb.shape()))?;
        let data = kernels::broadcast_binary(ta.data(), ta.shape(), tb.data(), tb.shape(), &shape, f);
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("div", a, b, |x, y| x / y)?;
        self.push("div", t, Op::Div(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v * c);
        self.push("scale", t, Op::Scale(x, c), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v + c);
        self.push("add_scalar", t, Op::AddScalar(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(f64::exp);
        self.push("exp", t, Op::Exp(x), &[x])
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(f64::sin);
        self.push("sin", t, Op::Sin(x), &[x])
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(f64::cos);
        self.push("cos", t, Op::Cos(x), &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v < 0.0) {
            return Err(Error::NonFinite { op: "sqrt" });
        }
        let t = self.value(x).map(f64::sqrt);
        self.push("sqrt", t, Op::Sqrt(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v * v);
        self.push("square", t, Op::Square(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push("relu", t, Op::Relu(x), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(kernels::gelu);
        self.push("gelu", t, Op::Gelu(x), &[x])
    }

    /// Batched matrix product over the last two axes.
    ///
    /// `a` is `[.., n, k]`; `b` is either a shared `[k, m]` matrix or has
    /// exactly the batch axes of `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (n, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, m) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let shared = sb.len() == 2;
        if k != k2 || (!shared && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return Err(Error::shape("matmul", sa, sb));
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out = vec![0.0; batch * n * m];
        if shared {
            // one tall product covers every batch entry
            kernels::gemm(batch * n, k, m, ta.data(), k, 1, tb.data(), m, 1, &mut out, false);
        } else {
            for bi in 0..batch {
                kernels::gemm(
                    n,
                    k,
                    m,
                    &ta.data()[bi * n * k..],
                    k,
                    1,
                    &tb.data()[bi * k * m..],
                    m,
                    1,
                    &mut out[bi * n * m..(bi + 1) * n * m],
                    false,
                );
            }
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([n, m]);
        self.push("matmul", Tensor::from_parts(shape, out), Op::Matmul(a, b), &[a, b])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        check_axis("softmax", t.shape(), axis)?;
        let (o, l, i) = split_axis(t.shape(), axis);
        let data = kernels::softmax(t.data(), o, l, i);
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push("softmax", out, Op::Softmax { x, axis }, &[x])
    }

    /// Sum over `axis`, keeping it with length one.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        check_axis("sum", t.shape(), axis)?;
        let (o, l, i) = split_axis(t.shape(), axis);
        let data = kernels::sum_axis(t.data(), o, l, i);
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        self.push("sum", Tensor::from_parts(shape, data), Op::Sum { x, axis }, &[x])
    }

    /// Mean over `axis`, keeping it with length one.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        check_axis("mean", t.shape(), axis)?;
        let (o, l, i) = split_axis(t.shape(), axis);
        let data: Vec<f64> = kernels::sum_axis(t.data(), o, l, i)
            .into_iter()
            .map(|s| s / l as f64)
            .collect();
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        self.push("mean", Tensor::from_parts(shape, data), Op::Mean { x, axis }, &[x])
    }

    /// Population variance over `axis`, keeping it with length one.
    pub fn var_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let mean = self.mean_axis(x, axis)?;
        let centered = self.sub(x, mean)?;
        let sq = self.square(centered)?;
        self.mean_axis(sq, axis)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.sum() / t.len() as f64;
        self.push("mean_all", Tensor::scalar(s), Op::MeanAll(x), &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(ax, (a, b))| ax == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let op = Op::Concat {
            parts: parts.to_vec(),
            axis,
        };
        self.push("concat", Tensor::from_parts(shape, data), op, parts)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        check_axis("slice", t.shape(), axis)?;
        if len == 0 || start + len > t.shape()[axis] {
            return Err(Error::invalid(format!(
                "slice [{start}, {}) out of range for axis {axis} of {:?}",
                start + len,
                t.shape()
            )));
        }
        let (outer, full, inner) = split_axis(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            data.extend_from_slice(&t.data()[from..from + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        self.push(
            "slice",
            Tensor::from_parts(shape, data),
            Op::Slice { x, axis, start },
            &[x],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let mut seen = vec![false; t.ndim()];
        if perm.len() != t.ndim()
            || perm
                .iter()
                .any(|&p| p >= t.ndim() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::invalid(format!(
                "{perm:?} is not a permutation of the axes of {:?}",
                t.shape()
            )));
        }
        let (data, shape) = kernels::permute(t.data(), t.shape(), perm);
        let op = Op::Permute { x, perm: perm.to_vec() };
        self.push("permute", Tensor::from_parts(shape, data), op, &[x])
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::invalid("transpose needs at least two axes"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    /// Inverted dropout driven by a counter-based hash of `seed`.
    ///
    /// Identity when `train` is false or `rate` is zero.
    pub fn dropout(&mut self, x: Var, rate: f64, seed: u64, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(x);
        let mask: Vec<f64> = (0..t.len() as u64)
            .map(|i| {
                if kernels::hash_uniform(seed, i) < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push("dropout", out, Op::Dropout { x, mask }, &[x])
    }

    /// Rotates consecutive feature pairs `(x[2k], x[2k+1])` of a
    /// `[.., positions, features]` tensor by per-position angles.
    ///
    /// `angles` is `[positions, features / 2]` and is treated as a constant.
    pub fn rotate_pairs(&mut self, x: Var, angles: &Tensor) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() < 2 || !s[s.len() - 1].is_multiple_of(2) {
            return Err(Error::shape("rotate_pairs", s, angles.shape()));
        }
        let (p, d) = (s[s.len() - 2], s[s.len() - 1]);
        if angles.shape() != [p, d / 2] {
            return Err(Error::shape("rotate_pairs", s, angles.shape()));
        }
        let cos: Vec<f64> = angles.data().iter().map(|a| a.cos()).collect();
        let sin: Vec<f64> = angles.data().iter().map(|a| a.sin()).collect();
        let data = rotate(t.data(), &cos, &sin, p * d / 2, false);
        let out = Tensor::from_parts(s.to_vec(), data);
        let op = Op::RotatePairs {
            x,
            cos: Arc::new(cos),
            sin: Arc::new(sin),
        };
        self.push("rotate_pairs", out, op, &[x])
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rt = self.value(root);
        if rt.len() != 1 {
            return Err(Error::invalid(format!(
                "backward root must hold a single element, got shape {:?}",
                rt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        let mut done: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop(node, &g, &mut grads);
            done[idx] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
        }
        Ok(Gradients { grads: done })
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        let elementwise = |x: Var, f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<f64> {
            let xv = self.value(x).data();
            g.iter()
                .zip(xv)
                .zip(out.data())
                .map(|((&gi, &xi), &yi)| f(gi, xi, yi))
                .collect()
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                for (v, s) in [(*a, 1.0), (*b, sign)] {
                    if self.requires_grad(v) {
                        let mut r = kernels::reduce_to_shape(g, out.shape(), self.shape(v));
                        if s != 1.0 {
                            r.iter_mut().for_each(|x| *x *= s);
                        }
                        send(v, r);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if self.requires_grad(v) {
                        let o = self.value(other);
                        let ob = kernels::expand_to_shape(o.data(), o.shape(), out.shape());
                        let prod: Vec<f64> = g.iter().zip(&ob).map(|(x, y)| x * y).collect();
                        send(v, kernels::reduce_to_shape(&prod, out.shape(), self.shape(v)));
                    }
                }
            }
            Op::Div(a, b) => {
                let tb = self.value(*b);
                let bb = kernels::expand_to_shape(tb.data(), tb.shape(), out.shape());
                if self.requires_grad(*a) {
                    let q: Vec<f64> = g.iter().zip(&bb).map(|(x, y)| x / y).collect();
                    send(*a, kernels::reduce_to_shape(&q, out.shape(), self.shape(*a)));
                }
                if self.requires_grad(*b) {
                    let q: Vec<f64> = g
                        .iter()
                        .zip(&bb)
                        .zip(out.data())
                        .map(|((gi, bi), yi)| -gi * yi / bi)
                        .collect();
                    send(*b, kernels::reduce_to_shape(&q, out.shape(), tb.shape()));
                }
            }
            Op::Scale(x, c) => send(*x, g.iter().map(|v| v * c).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Exp(x) => send(*x, elementwise(*x, &|gi, _, yi| gi * yi)),
            Op::Sin(x) => send(*x, elementwise(*x, &|gi, xi, _| gi * xi.cos())),
            Op::Cos(x) => send(*x, elementwise(*x, &|gi, xi, _| -gi * xi.sin())),
            Op::Sqrt(x) => send(*x, elementwise(*x, &|gi, _, yi| gi * 0.5 / yi)),
            Op::Square(x) => send(*x, elementwise(*x, &|gi, xi, _| 2.0 * gi * xi)),
            Op::Relu(x) => send(*x, elementwise(*x, &|gi, xi, _| if xi > 0.0 { gi } else { 0.0 })),
            Op::Gelu(x) => send(*x, elementwise(*x, &|gi, xi, _| gi * kernels::gelu_grad(xi))),
            Op::Matmul(a, b) => self.matmul_backward(*a, *b, g, &mut send),
            Op::Softmax { x, axis } => {
                let (o, l, i) = split_axis(out.shape(), *axis);
                let y = out.data();
                let gy: Vec<f64> = g.iter().zip(y).map(|(a, b)| a * b).collect();
                let s = kernels::sum_axis(&gy, o, l, i);
                let sb = kernels::repeat_axis(&s, o, l, i);
                let dx = gy.iter().zip(y).zip(&sb).map(|((gyi, yi), si)| gyi - yi * si).collect();
                send(*x, dx);
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let (o, l, i) = split_axis(self.shape(*x), *axis);
                let mut dx = kernels::repeat_axis(g, o, l, i);
                if matches!(node.op, Op::Mean { .. }) {
                    dx.iter_mut().for_each(|v| *v /= l as f64);
                }
                send(*x, dx);
            }
            Op::SumAll(x) => send(*x, vec![g[0]; self.value(*x).len()]),
            Op::MeanAll(x) => {
                let n = self.value(*x).len();
                send(*x, vec![g[0] / n as f64; n]);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    if self.requires_grad(*p) {
                        let mut dp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            dp.extend_from_slice(&g[from..from + len * inner]);
                        }
                        send(*p, dp);
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, full, inner) = split_axis(self.shape(*x), *axis);
                let len = out.shape()[*axis];
                let mut dx = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let to = (o * full + start) * inner;
                    dx[to..to + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                send(*x, dx);
            }
            Op::Permute { x, perm } => {
                let inv = kernels::inverse_permutation(perm);
                let (dx, _) = kernels::permute(g, out.shape(), &inv);
                send(*x, dx);
            }
            Op::Dropout { x, mask } => send(*x, g.iter().zip(mask).map(|(a, m)| a * m).collect()),
            Op::RotatePairs { x, cos, sin } => {
                send(*x, rotate(g, cos, sin, cos.len(), true));
            }
        }
    }

    fn matmul_backward(&self, a: Var, b: Var, g: &[f64], send: &mut impl FnMut(Var, Vec<f64>)) {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        let (n, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let m = sb[sb.len() - 1];
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let shared = sb.len() == 2;
        if self.requires_grad(a) {
            // dA = G · Bᵀ
            let mut da = vec![0.0; ta.len()];
            if shared {
                kernels::gemm(batch * n, m, k, g, m, 1, tb.data(), 1, m, &mut da, false);
            } else {
                for bi in 0..batch {
                    kernels::gemm(
                        n,
                        m,
                        k,
                        &g[bi * n * m..],
                        m,
                        1,
                        &tb.data()[bi * k * m..],
                        1,
                        m,
                        &mut da[bi * n * k..(bi + 1) * n * k],
                        false,
                    );
                }
            }
            send(a, da);
        }
        if self.requires_grad(b) {
            // dB = Aᵀ · G
            let mut db = vec![0.0; tb.len()];
            if shared {
                kernels::gemm(k, batch * n, m, ta.data(), 1, k, g, m, 1, &mut db, false);
            } else {
                for bi in 0..batch {
                    kernels::gemm(
                        k,
                        n,
                        m,
                        &ta.data()[bi * n * k..],
                        1,
                        k,
                        &g[bi * n * m..],
                        m,
                        1,
                        &mut db[bi * k * m..(bi + 1) * k * m],
                        false,
                    );
                }
            }
            send(b, db);
        }
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::invalid(format!(
            "{op}: axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

/// Applies (or inverts) pairwise rotations; tables repeat every `period`
/// pairs.
fn rotate(x: &[f64], cos: &[f64], sin: &[f64], period: usize, inverse: bool) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let s = if inverse { -1.0 } else { 1.0 };
    for (pair, (src, dst)) in x.chunks_exact(2).zip(out.chunks_exact_mut(2)).enumerate() {
        let t = pair % period;
        let (c, sn) = (cos[t], s * sin[t]);
        dst[0] = src[0] * c - src[1] * sn;
        dst[1] = src[0] * sn + src[1] * c;
    }
    out
}
