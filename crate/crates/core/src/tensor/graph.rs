//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every primitive applied to its [`Var`] handles in
//! creation order, which is already a topological order. [`Graph::backward`]
//! walks that record in reverse and adds gradients into each leaf that
//! requires them. Nothing is broadcast: every primitive checks its operand
//! shapes exactly.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Concat(Vec<usize>),
    Softmax(usize),
    LogSoftmax(usize),
    Log(usize),
    Exp(usize),
    Pow(usize, f64),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Clamp(usize, f64, f64),
    Affine(usize, usize, usize),
    SelectRows(usize, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Concat(_) => "concat",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::Pow(..) => "pow",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Clamp(..) => "clamp",
            Op::Affine(..) => "affine",
            Op::SelectRows(..) => "select_rows",
        }
    }

    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Pow(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumAxis(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Clamp(a, _, _)
            | Op::SelectRows(a, _) => vec![*a],
            Op::Concat(ids) => ids.clone(),
            Op::Affine(x, w, b) => vec![*x, *w, *b],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    finite: bool,
}

/// Names of the recorded primitives.
pub const OP_NAMES: &[&str] = &[
    "matmul",
    "transpose",
    "reshape",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "concat",
    "softmax",
    "log_softmax",
    "log",
    "exp",
    "pow",
    "sum",
    "mean",
    "sum_axis",
    "relu",
    "sigmoid",
    "clamp",
    "affine",
    "select_rows",
];

/// Computation record. Single-threaded; a `Graph` is not `Sync`.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    faulty: Option<&'static str>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose backward rule for the named primitive is deliberately
    /// wrong. Used to check that gradient checking catches broken rules.
    #[doc(hidden)]
    pub fn with_faulty_backward(op: &'static str) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            faulty: Some(op),
        }
    }

    /// Primitives recorded so far, leaves excluded.
    pub fn op_names(&self) -> std::collections::BTreeSet<&'static str> {
        self.nodes
            .borrow()
            .iter()
            .map(|n| n.op.name())
            .filter(|&n| n != "leaf")
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf; it receives gradients iff `tensor.requires_grad()`.
    pub fn leaf(&self, tensor: Tensor) -> Var<'_> {
        let finite = tensor.is_finite();
        let requires_grad = tensor.requires_grad();
        self.push_node(Node {
            value: tensor,
            op: Op::Leaf,
            requires_grad,
            finite,
        })
    }

    pub fn param(&self, tensor: Tensor) -> Var<'_> {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&self, tensor: Tensor) -> Var<'_> {
        self.leaf(tensor.with_requires_grad(false))
    }

    fn push_node(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn record(&self, value: Tensor, op: Op) -> Result<Var<'_>> {
        let parents = op.parents();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            for &p in &parents {
                if !nodes[p].finite {
                    return Err(Error::NumericFault(format!("non-finite input to {}", op.name())));
                }
            }
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        if !value.is_finite() {
            return Err(Error::NumericFault(format!("{} produced a non-finite value", op.name())));
        }
        Ok(self.push_node(Node {
            value,
            op,
            requires_grad,
            finite: true,
        }))
    }

    fn value_of(&self, id: usize) -> std::cell::Ref<'_, Tensor> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Propagates `d root` back to every leaf that requires a gradient.
    /// Repeated calls accumulate into the leaf buffers.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        if !nodes[root.id].value.is_scalar() {
            return Err(Error::invalid_shape(
                "backward",
                nodes[root.id].value.shape(),
                "root must be a scalar",
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
        adj[root.id] = Some(vec![1.0]);
        let mut leaf_grads: Vec<(usize, Vec<f64>)> = Vec::new();

        for id in (0..=root.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((id, g));
                continue;
            }
            let mut contributions = backward_rule(&nodes, node, &g)?;
            if self.faulty == Some(node.op.name()) {
                for (_, d) in &mut contributions {
                    d.iter_mut().for_each(|v| *v *= 1.5);
                }
            }
            for (parent, delta) in contributions {
                if !nodes[parent].requires_grad {
                    continue;
                }
                match &mut adj[parent] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        drop(nodes);

        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            nodes[id].value.accumulate_grad(&g);
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.value.zero_grad();
        }
    }

    /// Gradient accumulated on a leaf, if any was allocated.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[var.id];
        node.value
            .grad()
            .map(|g| Tensor::new(node.value.shape(), g.to_vec()).expect("grad shape"))
    }
}

// ---- raw kernels ----

/// `(batch, rows, cols)` for a 2-D or 3-D shape.
fn mat_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [r, c] => Ok((1, r, c)),
        [b, r, c] => Ok((b, r, c)),
        _ => Err(Error::invalid_shape(op, shape, "expected a 2-D or 3-D tensor")),
    }
}

/// C[m×n] += A[m×k]·B[k×n], with optional transposition of either operand
/// as stored.
#[allow(clippy::too_many_arguments)]
fn gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, ta: bool, tb: bool) {
    for i in 0..m {
        for p in 0..k {
            let av = if ta { a[p * m + i] } else { a[i * k + p] };
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            if tb {
                for (j, cv) in crow.iter_mut().enumerate() {
                    *cv += av * b[j * k + p];
                }
            } else {
                let brow = &b[p * n..(p + 1) * n];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
}

fn transpose_raw(data: &[f64], batch: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for b in 0..batch {
        let off = b * rows * cols;
        for i in 0..rows {
            for j in 0..cols {
                out[off + j * rows + i] = data[off + i * cols + j];
            }
        }
    }
    out
}

fn softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (row, orow) in data.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, &x) in orow.iter_mut().zip(row) {
            *o = (x - max).exp();
            total += *o;
        }
        orow.iter_mut().for_each(|o| *o /= total);
    }
    out
}

fn log_softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (row, orow) in data.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        for (o, &x) in orow.iter_mut().zip(row) {
            *o = x - lse;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// (outer, axis_len, inner) strides for reducing `axis` of `shape`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn backward_rule(nodes: &[Node], node: &Node, g: &[f64]) -> Result<Vec<(usize, Vec<f64>)>> {
    let out = &node.value;
    let val = |id: usize| &nodes[id].value;
    Ok(match &node.op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (batch, m, k) = mat_dims("matmul", av.shape())?;
            let (_, _, n) = mat_dims("matmul", bv.shape())?;
            let mut da = vec![0.0; av.numel()];
            let mut db = vec![0.0; bv.numel()];
            for bi in 0..batch {
                let gs = &g[bi * m * n..(bi + 1) * m * n];
                let a_s = &av.data()[bi * m * k..(bi + 1) * m * k];
                let b_s = &bv.data()[bi * k * n..(bi + 1) * k * n];
                gemm(gs, b_s, &mut da[bi * m * k..(bi + 1) * m * k], m, n, k, false, true);
                gemm(a_s, gs, &mut db[bi * k * n..(bi + 1) * k * n], k, m, n, true, false);
            }
            vec![(*a, da), (*b, db)]
        }
        Op::Transpose(a) => {
            let (batch, r, c) = mat_dims("transpose", out.shape())?;
            vec![(*a, transpose_raw(g, batch, r, c))]
        }
        Op::Reshape(a) => vec![(*a, g.to_vec())],
        Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
        Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            let da = g.iter().zip(bv).map(|(g, b)| g * b).collect();
            let db = g.iter().zip(av).map(|(g, a)| g * a).collect();
            vec![(*a, da), (*b, db)]
        }
        Op::Scale(a, s) => vec![(*a, g.iter().map(|v| v * s).collect())],
        Op::AddScalar(a) => vec![(*a, g.to_vec())],
        Op::Concat(ids) => {
            let total = out.last_dim();
            let rows = out.rows();
            let mut offset = 0;
            let mut result = Vec::with_capacity(ids.len());
            for &id in ids {
                let w = val(id).last_dim();
                let mut d = vec![0.0; rows * w];
                for r in 0..rows {
                    d[r * w..(r + 1) * w].copy_from_slice(&g[r * total + offset..r * total + offset + w]);
                }
                offset += w;
                result.push((id, d));
            }
            result
        }
        Op::Softmax(a) => {
            let cols = out.last_dim();
            let y = out.data();
            let mut d = vec![0.0; y.len()];
            for ((yr, gr), dr) in y.chunks(cols).zip(g.chunks(cols)).zip(d.chunks_mut(cols)) {
                let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                for ((dv, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *dv = yv * (gv - dot);
                }
            }
            vec![(*a, d)]
        }
        Op::LogSoftmax(a) => {
            let cols = out.last_dim();
            let y = out.data();
            let mut d = vec![0.0; y.len()];
            for ((yr, gr), dr) in y.chunks(cols).zip(g.chunks(cols)).zip(d.chunks_mut(cols)) {
                let gsum: f64 = gr.iter().sum();
                for ((dv, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *dv = gv - yv.exp() * gsum;
                }
            }
            vec![(*a, d)]
        }
        Op::Log(a) => {
            let x = val(*a).data();
            vec![(*a, g.iter().zip(x).map(|(g, x)| g / x).collect())]
        }
        Op::Exp(a) => vec![(*a, g.iter().zip(out.data()).map(|(g, y)| g * y).collect())],
        Op::Pow(a, p) => {
            let x = val(*a).data();
            let d = g
                .iter()
                .zip(x)
                .map(|(g, x)| if *p == 0.0 { 0.0 } else { g * p * x.powf(p - 1.0) })
                .collect();
            vec![(*a, d)]
        }
        Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).numel()])],
        Op::Mean(a) => {
            let n = val(*a).numel();
            vec![(*a, vec![g[0] / n as f64; n])]
        }
        Op::SumAxis(a, axis) => {
            let src = val(*a);
            let (outer, len, inner) = axis_split(src.shape(), *axis);
            let mut d = vec![0.0; src.numel()];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        d[(o * len + l) * inner + i] = g[o * inner + i];
                    }
                }
            }
            vec![(*a, d)]
        }
        Op::Relu(a) => {
            let x = val(*a).data();
            vec![(*a, g.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect())]
        }
        Op::Sigmoid(a) => {
            let y = out.data();
            vec![(*a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect())]
        }
        Op::Clamp(a, lo, hi) => {
            let x = val(*a).data();
            let d = g
                .iter()
                .zip(x)
                .map(|(g, x)| if x < lo || x > hi { 0.0 } else { *g })
                .collect();
            vec![(*a, d)]
        }
        Op::Affine(x, w, b) => {
            let (xv, wv) = (val(*x), val(*w));
            let rows = xv.rows();
            let in_dim = xv.last_dim();
            let out_dim = wv.shape()[0];
            let mut dx = vec![0.0; xv.numel()];
            let mut dw = vec![0.0; wv.numel()];
            gemm(g, wv.data(), &mut dx, rows, out_dim, in_dim, false, false);
            gemm(g, xv.data(), &mut dw, out_dim, rows, in_dim, true, false);
            let mut db = vec![0.0; out_dim];
            for r in g.chunks(out_dim) {
                db.iter_mut().zip(r).for_each(|(d, v)| *d += v);
            }
            vec![(*x, dx), (*w, dw), (*b, db)]
        }
        Op::SelectRows(a, idx) => {
            let src = val(*a);
            let w = src.numel() / src.shape()[0];
            let mut d = vec![0.0; src.numel()];
            for (r, &i) in idx.iter().enumerate() {
                for c in 0..w {
                    d[i * w + c] += g[r * w + c];
                }
            }
            vec![(*a, d)]
        }
    })
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.value_of(self.id).shape().to_vec()
    }

    pub fn value(&self) -> Tensor {
        let v = self.graph.value_of(self.id);
        Tensor::new(v.shape(), v.data().to_vec()).expect("valid shape")
    }

    pub fn item(&self) -> f64 {
        self.graph.value_of(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.graph.grad(*self)
    }

    pub fn backward(&self) -> Result<()> {
        self.graph.backward(*self)
    }

    fn unary(&self, op: Op, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Var<'g>> {
        let value = f(&self.graph.value_of(self.id))?;
        self.graph.record(value, op)
    }

    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'g>> {
        self.unary(op, |x| Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect()))
    }

    fn zip_same(&self, other: Var<'g>, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var<'g>> {
        let value = {
            let a = self.graph.value_of(self.id);
            let b = self.graph.value_of(other.id);
            if a.shape() != b.shape() {
                return Err(Error::shape(name, a.shape(), b.shape()));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape(), data)?
        };
        self.graph.record(value, op)
    }

    /// Matrix product of 2-D operands, or batched product of 3-D operands.
    pub fn matmul(&self, other: Var<'g>) -> Result<Var<'g>> {
        let value = {
            let a = self.graph.value_of(self.id);
            let b = self.graph.value_of(other.id);
            let (ba, m, k) = mat_dims("matmul", a.shape())?;
            let (bb, k2, n) = mat_dims("matmul", b.shape())?;
            if a.ndim() != b.ndim() || ba != bb || k != k2 {
                return Err(Error::shape("matmul", a.shape(), b.shape()));
            }
            let mut c = vec![0.0; ba * m * n];
            for bi in 0..ba {
                gemm(
                    &a.data()[bi * m * k..(bi + 1) * m * k],
                    &b.data()[bi * k * n..(bi + 1) * k * n],
                    &mut c[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                    false,
                    false,
                );
            }
            let shape = if a.ndim() == 2 { vec![m, n] } else { vec![ba, m, n] };
            Tensor::new(&shape, c)?
        };
        self.graph.record(value, Op::MatMul(self.id, other.id))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'g>> {
        self.unary(Op::Transpose(self.id), |x| {
            let (b, r, c) = mat_dims("transpose", x.shape())?;
            let shape = if x.ndim() == 2 { vec![c, r] } else { vec![b, c, r] };
            Tensor::new(&shape, transpose_raw(x.data(), b, r, c))
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g>> {
        self.unary(Op::Reshape(self.id), |x| x.reshape(shape))
    }

    pub fn add(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.zip_same(other, Op::Add(self.id, other.id), "add", |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.zip_same(other, Op::Sub(self.id, other.id), "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.zip_same(other, Op::Mul(self.id, other.id), "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Result<Var<'g>> {
        self.map(Op::Scale(self.id, s), |v| v * s)
    }

    pub fn add_scalar(&self, s: f64) -> Result<Var<'g>> {
        self.map(Op::AddScalar(self.id), |v| v + s)
    }

    /// Concatenates along the last axis; all other axes must agree.
    pub fn concat(parts: &[Var<'g>]) -> Result<Var<'g>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let graph = first.graph;
        let value = {
            let vals: Vec<_> = parts.iter().map(|p| graph.value_of(p.id)).collect();
            let lead = &vals[0].shape()[..vals[0].ndim() - 1];
            for v in &vals[1..] {
                if v.ndim() != vals[0].ndim() || &v.shape()[..v.ndim() - 1] != lead {
                    return Err(Error::shape("concat", vals[0].shape(), v.shape()));
                }
            }
            let rows = vals[0].rows();
            let total: usize = vals.iter().map(|v| v.last_dim()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for v in &vals {
                    data.extend_from_slice(v.row(r));
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            Tensor::new(&shape, data)?
        };
        graph.record(value, Op::Concat(parts.iter().map(|p| p.id).collect()))
    }

    /// Softmax over the last axis, max-shifted.
    pub fn softmax(&self) -> Result<Var<'g>> {
        self.unary(Op::Softmax(self.id), |x| {
            Tensor::new(x.shape(), softmax_rows(x.data(), x.last_dim()))
        })
    }

    /// Log-softmax over the last axis via log-sum-exp.
    pub fn log_softmax(&self) -> Result<Var<'g>> {
        self.unary(Op::LogSoftmax(self.id), |x| {
            Tensor::new(x.shape(), log_softmax_rows(x.data(), x.last_dim()))
        })
    }

    pub fn ln(&self) -> Result<Var<'g>> {
        self.map(Op::Log(self.id), f64::ln)
    }

    pub fn exp(&self) -> Result<Var<'g>> {
        self.map(Op::Exp(self.id), f64::exp)
    }

    pub fn powf(&self, p: f64) -> Result<Var<'g>> {
        self.map(Op::Pow(self.id, p), |v| v.powf(p))
    }

    pub fn sum(&self) -> Result<Var<'g>> {
        self.unary(Op::Sum(self.id), |x| Ok(Tensor::scalar(x.data().iter().sum())))
    }

    pub fn mean(&self) -> Result<Var<'g>> {
        self.unary(Op::Mean(self.id), |x| {
            Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64))
        })
    }

    /// Sums out `axis`. A 1-D input reduces to shape `[1]`.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'g>> {
        self.unary(Op::SumAxis(self.id, axis), |x| {
            if axis >= x.ndim() {
                return Err(Error::invalid_shape("sum_axis", x.shape(), format!("no axis {axis}")));
            }
            let (outer, len, inner) = axis_split(x.shape(), axis);
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        data[o * inner + i] += x.data()[(o * len + l) * inner + i];
                    }
                }
            }
            let mut shape: Vec<usize> = x.shape().to_vec();
            shape.remove(axis);
            if shape.is_empty() {
                shape.push(1);
            }
            Tensor::new(&shape, data)
        })
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'g>> {
        let n = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::invalid_shape("mean_axis", &self.shape(), format!("no axis {axis}")))?;
        self.sum_axis(axis)?.scale(1.0 / n as f64)
    }

    pub fn relu(&self) -> Result<Var<'g>> {
        self.map(Op::Relu(self.id), |v| v.max(0.0))
    }

    pub fn sigmoid(&self) -> Result<Var<'g>> {
        self.map(Op::Sigmoid(self.id), sigmoid)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'g>> {
        self.map(Op::Clamp(self.id, lo, hi), |v| v.clamp(lo, hi))
    }

    /// `self · weightᵀ + bias` for `self: [.., in]`, `weight: [out, in]`,
    /// `bias: [out]`.
    pub fn affine(&self, weight: Var<'g>, bias: Var<'g>) -> Result<Var<'g>> {
        let value = {
            let x = self.graph.value_of(self.id);
            let w = self.graph.value_of(weight.id);
            let b = self.graph.value_of(bias.id);
            if w.ndim() != 2 || w.shape()[1] != x.last_dim() {
                return Err(Error::shape("affine", x.shape(), w.shape()));
            }
            let out_dim = w.shape()[0];
            if b.shape() != [out_dim] {
                return Err(Error::shape("affine", w.shape(), b.shape()));
            }
            let rows = x.rows();
            let mut data: Vec<f64> = (0..rows).flat_map(|_| b.data().iter().copied()).collect();
            gemm(x.data(), w.data(), &mut data, rows, x.last_dim(), out_dim, false, true);
            let mut shape = x.shape().to_vec();
            *shape.last_mut().expect("non-empty") = out_dim;
            Tensor::new(&shape, data)?
        };
        self.graph.record(value, Op::Affine(self.id, weight.id, bias.id))
    }

    /// Gathers slices along the first axis; indices may repeat.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Var<'g>> {
        let idx = indices.to_vec();
        self.unary(Op::SelectRows(self.id, idx.clone()), |x| {
            let n = x.shape()[0];
            let w = x.numel() / n;
            if idx.is_empty() {
                return Err(Error::InvalidArgument("select_rows with no indices".into()));
            }
            let mut data = Vec::with_capacity(idx.len() * w);
            for &i in &idx {
                if i >= n {
                    return Err(Error::invalid_shape("select_rows", x.shape(), format!("row {i} out of range")));
                }
                data.extend_from_slice(&x.data()[i * w..(i + 1) * w]);
            }
            let mut shape = x.shape().to_vec();
            shape[0] = idx.len();
            Tensor::new(&shape, data)
        })
    }
}
