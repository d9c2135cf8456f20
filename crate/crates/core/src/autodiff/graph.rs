//! Reverse-mode differentiation over a recorded computation graph.
//!
//! Every forward op appends a node whose value is computed eagerly. Nodes are
//! stored in creation order, so parents always precede children and a reverse
//! sweep over the node list is a reverse topological order.

use std::collections::{BTreeMap, HashMap};

use super::gemm::{gemm, Strides};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { src: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    Square(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Softmax(Var),
    GatherRows { src: Var, index: Vec<usize> },
    Reshape(Var),
    LayerNorm { src: Var, inv_std: Vec<f64> },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::AddRow(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Concat { parts, .. } => parts.clone(),
            Op::Affine(a, _)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Square(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::LeakyRelu(a, _)
            | Op::Softmax(a)
            | Op::Reshape(a)
            | Op::Slice { src: a, .. }
            | Op::GatherRows { src: a, .. }
            | Op::LayerNorm { src: a, .. } => vec![*a],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single forward/backward computation. Build one per training step.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bound: HashMap<String, Var>,
    frozen: Vec<String>,
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

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, true)
    }

    /// Leaf that is treated as a constant by `backward`.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, false)
    }

    fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.push_node(t, Op::Leaf, requires_grad))
    }

    /// Parameters whose name starts with `prefix` are bound as constants.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        self.frozen.push(prefix.to_string());
    }

    /// Binds the named parameter from `store`, once per graph.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?
            .clone();
        let trainable = !self.frozen.iter().any(|p| name.starts_with(p.as_str()));
        let v = self.leaf(t, trainable)?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Accumulated gradient of a leaf, if any flowed into it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Gradients of every trainable parameter bound via [`Graph::param`].
    /// Parameters unreachable from the loss get a zero gradient.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .filter(|(_, v)| self.nodes[v.0].requires_grad)
            .map(|(name, v)| {
                let g = self
                    .grad(*v)
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()));
                (name.clone(), g)
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_node(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, t, op)
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a rank-1 `bias` to every row (last axis) of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.len() != 1 || sa.last() != sb.first() {
            return Err(Error::shape("add_row", format!("{sa:?} + row {sb:?}")));
        }
        let c = sb[0];
        let b = self.value(bias).data().to_vec();
        let mut t = self.value(a).clone();
        for row in t.data_mut().chunks_mut(c) {
            for (x, y) in row.iter_mut().zip(&b) {
                *x += y;
            }
        }
        self.push("add_row", t, Op::AddRow(a, bias))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        self.map("affine", a, Op::Affine(a, scale), |x| scale * x + shift)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.affine(a, s, 0.0)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.affine(a, -1.0, 0.0)
    }

    /// `[p,q]·[q,r]`, or batched `[b,p,q]·[b,q,r]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, p, q, r) = match (sa.as_slice(), sb.as_slice()) {
            ([p, q], [q2, r]) if q == q2 => (1, *p, *q, *r),
            ([ba, p, q], [bb, q2, r]) if ba == bb && q == q2 => (*ba, *p, *q, *r),
            _ => return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}"))),
        };
        let mut out = vec![0.0; batch * p * r];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                gemm(
                    p,
                    q,
                    r,
                    &da[i * p * q..],
                    Strides::rows(q),
                    &db[i * q * r..],
                    Strides::rows(r),
                    &mut out[i * p * r..],
                    0.0,
                );
            }
        }
        let shape = if sa.len() == 2 { vec![p, r] } else { vec![batch, p, r] };
        self.push("matmul", Tensor::new(shape, out)?, Op::MatMul(a, b))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let (batch, p, q) = match s.as_slice() {
            [p, q] => (1, *p, *q),
            [b, p, q] => (*b, *p, *q),
            _ => return Err(Error::shape("transpose", format!("{s:?}"))),
        };
        let src = self.value(a).data();
        let out = transpose_blocks(src, batch, p, q);
        let shape = if s.len() == 2 { vec![q, p] } else { vec![batch, q, p] };
        self.push("transpose", Tensor::new(shape, out)?, Op::Transpose(a))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no operands"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} on {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().enumerate().all(|(i, d)| i == axis || *d == base[i]);
            if !compatible {
                return Err(Error::shape("concat", format!("{base:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = self.shape(*p)[axis] * inner;
                out.extend_from_slice(&self.value(*p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            "concat",
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::shape(
                "slice",
                format!("{s:?} axis {axis} range {start}..{}", start + len),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * s[axis] * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push("slice", Tensor::new(shape, out)?, Op::Slice { src: a, axis, start })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::shape("mean", "empty operand"));
        }
        let s: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map("square", a, Op::Square(a), |x| x * x)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map("exp", a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map("log", a, Op::Log(a), f64::ln)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn leaky_relu(&mut self, a: Var) -> Result<Var> {
        let k = LEAKY_SLOPE;
        self.map("leaky_relu", a, Op::LeakyRelu(a, k), move |x| if x > 0.0 { x } else { k * x })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let mut t = self.value(a).clone();
        let c = t.last_dim();
        for row in t.data_mut().chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.push("softmax", t, Op::Softmax(a))
    }

    /// Rows of `a` (indexing the first axis) in the order given by `index`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let rows = *s.first().ok_or_else(|| Error::shape("gather_rows", "rank-0 operand"))?;
        if let Some(bad) = index.iter().find(|i| **i >= rows) {
            return Err(Error::shape("gather_rows", format!("index {bad} out of {rows} rows")));
        }
        let width: usize = s[1..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(index.len() * width);
        for &i in index {
            out.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut shape = s;
        shape[0] = index.len();
        self.push(
            "gather_rows",
            Tensor::new(shape, out)?,
            Op::GatherRows {
                src: a,
                index: index.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        self.push("reshape", t, Op::Reshape(a))
    }

    /// Normalizes the last axis to zero mean, unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let mut t = self.value(a).clone();
        let c = t.last_dim();
        let mut inv_std = Vec::with_capacity(t.len() / c.max(1));
        for row in t.data_mut().chunks_mut(c) {
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mu) * is;
            }
            inv_std.push(is);
        }
        self.push("layer_norm", t, Op::LayerNorm { src: a, inv_std })
    }

    /// Accumulates d`loss`/d`leaf` into every reachable trainable leaf.
    ///
    /// Gradients add up across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let Graph { nodes, grads, .. } = self;
        if !nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut work: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        work[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = work[i].take() else { continue };
            if let Op::Leaf = node.op {
                let slot = grads[i].get_or_insert_with(|| vec![0.0; g.len()]);
                add_into(slot, &g);
                continue;
            }
            backprop_node(nodes, &mut work, node, &g);
        }
        if grads.iter().flatten().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        Ok(())
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

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn transpose_blocks(src: &[f64], batch: usize, p: usize, q: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for b in 0..batch {
        let o = b * p * q;
        for i in 0..p {
            for j in 0..q {
                out[o + j * p + i] = src[o + i * q + j];
            }
        }
    }
    out
}

/// Gradient buffer for `v`, or `None` when `v` needs no gradient.
fn slot<'a>(nodes: &[Node], work: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(work[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn backprop_node(nodes: &[Node], work: &mut [Option<Vec<f64>>], node: &Node, g: &[f64]) {
    let val = |v: Var| nodes[v.0].value.data();
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if let Some(s) = slot(nodes, work, *a) {
                add_into(s, g);
            }
            if let Some(s) = slot(nodes, work, *b) {
                add_into(s, g);
            }
        }
        Op::AddRow(a, bias) => {
            if let Some(s) = slot(nodes, work, *a) {
                add_into(s, g);
            }
            if let Some(s) = slot(nodes, work, *bias) {
                let c = s.len();
                for row in g.chunks(c) {
                    add_into(s, row);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(s) = slot(nodes, work, *a) {
                add_into(s, g);
            }
            if let Some(s) = slot(nodes, work, *b) {
                for (d, gi) in s.iter_mut().zip(g) {
                    *d -= gi;
                }
            }
        }
        Op::Mul(a, b) => {
            if let Some(s) = slot(nodes, work, *a) {
                for ((d, gi), bv) in s.iter_mut().zip(g).zip(val(*b)) {
                    *d += gi * bv;
                }
            }
            if let Some(s) = slot(nodes, work, *b) {
                for ((d, gi), av) in s.iter_mut().zip(g).zip(val(*a)) {
                    *d += gi * av;
                }
            }
        }
        Op::Affine(a, k) => {
            if let Some(s) = slot(nodes, work, *a) {
                for (d, gi) in s.iter_mut().zip(g) {
                    *d += k * gi;
                }
            }
        }
        Op::MatMul(a, b) => {
            let sa = nodes[a.0].value.shape();
            let sb = nodes[b.0].value.shape();
            let (batch, p, q) = match sa {
                [p, q] => (1, *p, *q),
                [bt, p, q] => (*bt, *p, *q),
                _ => unreachable!(),
            };
            let r = *sb.last().unwrap();
            if let Some(s) = slot(nodes, work, *a) {
                let bv = val(*b);
                for i in 0..batch {
                    // dA = dC · Bᵀ
                    gemm(
                        p,
                        r,
                        q,
                        &g[i * p * r..],
                        Strides::rows(r),
                        &bv[i * q * r..],
                        Strides::transposed(r),
                        &mut s[i * p * q..],
                        1.0,
                    );
                }
            }
            if let Some(s) = slot(nodes, work, *b) {
                let av = val(*a);
                for i in 0..batch {
                    // dB = Aᵀ · dC
                    gemm(
                        q,
                        p,
                        r,
                        &av[i * p * q..],
                        Strides::transposed(q),
                        &g[i * p * r..],
                        Strides::rows(r),
                        &mut s[i * q * r..],
                        1.0,
                    );
                }
            }
        }
        Op::Transpose(a) => {
            if let Some(s) = slot(nodes, work, *a) {
                let sy = node.value.shape();
                let (batch, q, p) = match sy {
                    [q, p] => (1, *q, *p),
                    [bt, q, p] => (*bt, *q, *p),
                    _ => unreachable!(),
                };
                add_into(s, &transpose_blocks(g, batch, q, p));
            }
        }
        Op::Concat { parts, axis } => {
            let shape = node.value.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis] * inner;
            let mut offset = 0;
            for p in parts {
                let chunk = nodes[p.0].value.shape()[*axis] * inner;
                if let Some(s) = slot(nodes, work, *p) {
                    for o in 0..outer {
                        let src = &g[o * total + offset..o * total + offset + chunk];
                        add_into(&mut s[o * chunk..(o + 1) * chunk], src);
                    }
                }
                offset += chunk;
            }
        }
        Op::Slice { src, axis, start } => {
            let ss = nodes[src.0].value.shape();
            let outer: usize = ss[..*axis].iter().product();
            let inner: usize = ss[axis + 1..].iter().product();
            let len = node.value.shape()[*axis];
            let dim = ss[*axis];
            if let Some(s) = slot(nodes, work, *src) {
                for o in 0..outer {
                    let base = o * dim * inner + start * inner;
                    let chunk = len * inner;
                    add_into(&mut s[base..base + chunk], &g[o * chunk..(o + 1) * chunk]);
                }
            }
        }
        Op::Sum(a) => {
            if let Some(s) = slot(nodes, work, *a) {
                for d in s.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::Mean(a) => {
            if let Some(s) = slot(nodes, work, *a) {
                let k = g[0] / s.len() as f64;
                for d in s.iter_mut() {
                    *d += k;
                }
            }
        }
        Op::Square(a) => {
            if let Some(s) = slot(nodes, work, *a) {
                for ((d, gi), x) in s.iter_mut().zip(g).zip(val(*a)) {
                    *d += 2.0 * x * gi;
                }
            }
        }
        Op::Exp(a) => {
            if let Some(s) = slot(nodes, work, *a) {
                for ((d, gi), yi) in s.iter_mut().zip(g).zip(y) {
                    *d += gi * yi;
                }
            }
        }
        Op::Log(a) => {
            if let Some(s) = slot(nodes, work, *a) {
                for ((d, gi), x) in s.iter_mut().zip(g).zip(val(*a)) {
                    *d += gi / x;
                }
            }
        }
        Op::Tanh(a) => {
            if let Some(s) = slot(nodes, work, *a) {
                for ((d, gi), yi) in s.iter_mut().zip(g).zip(y) {
                    *d += gi * (1.0 - yi * yi);
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(s) = slot(nodes, work, *a) {
                for ((d, gi), yi) in s.iter_mut().zip(g).zip(y) {
                    *d += gi * yi * (1.0 - yi);
                }
            }
        }
        Op::LeakyRelu(a, k) => {
            if let Some(s) = slot(nodes, work, *a) {
                for ((d, gi), x) in s.iter_mut().zip(g).zip(val(*a)) {
                    *d += if *x > 0.0 { *gi } else { k * gi };
                }
            }
        }
        Op::Softmax(a) => {
            if let Some(s) = slot(nodes, work, *a) {
                let c = node.value.last_dim();
                for ((drow, grow), yrow) in s.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += yi * (gi - dot);
                    }
                }
            }
        }
        Op::GatherRows { src, index } => {
            if let Some(s) = slot(nodes, work, *src) {
                let width = g.len() / index.len().max(1);
                for (k, &i) in index.iter().enumerate() {
                    add_into(&mut s[i * width..(i + 1) * width], &g[k * width..(k + 1) * width]);
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(s) = slot(nodes, work, *a) {
                add_into(s, g);
            }
        }
        Op::LayerNorm { src, inv_std } => {
            if let Some(s) = slot(nodes, work, *src) {
                let c = node.value.last_dim();
                let cf = c as f64;
                for (((drow, grow), yrow), is) in s
                    .chunks_mut(c)
                    .zip(g.chunks(c))
                    .zip(y.chunks(c))
                    .zip(inv_std)
                {
                    let gm = grow.iter().sum::<f64>() / cf;
                    let gy = grow.iter().zip(yrow).map(|(a, b)| a * b).sum::<f64>() / cf;
                    for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += is * (gi - gm - yi * gy);
                    }
                }
            }
        }
    }
}
