//! Recorded computation over a closed set of tensor operations, with
//! reverse-mode gradients.
//!
//! A [`Graph`] is built first (nodes are only recorded), then evaluated with
//! [`Graph::forward`], after which [`Graph::backward`] may be called any number
//! of times. Gradients for parameter nodes are *added* into the
//! [`ParamStore`]; repeated backward calls therefore accumulate.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Stack along the first axis (append rows).
    Rows,
    /// Join along the last axis (append columns).
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Input(String),
    Const(Tensor),
    Param(ParamId),
    MatMul { lhs: NodeId, rhs: NodeId, transpose_rhs: bool },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Concat { parts: Vec<NodeId>, axis: Axis },
    RowLookup { table: NodeId, row: usize },
    Sum(NodeId),
    Mean(NodeId),
    Log(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Const(_) => "const",
            Op::Param(_) => "param",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax(_) => "softmax",
            Op::Concat { .. } => "concat",
            Op::RowLookup { .. } => "row_lookup",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Log(_) => "log",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    ops: Vec<Op>,
    /// Computed values; `None` for constants and parameters, which are read in place.
    values: Option<Vec<Option<Tensor>>>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.values = None;
        self.ops.push(op);
        NodeId(self.ops.len() - 1)
    }

    /// A named placeholder bound at [`forward`](Self::forward) time.
    pub fn input(&mut self, name: &str) -> NodeId {
        self.push(Op::Input(name.to_string()))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const(value))
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(Op::Param(id))
    }

    pub fn matmul(&mut self, lhs: NodeId, rhs: NodeId) -> NodeId {
        self.push(Op::MatMul { lhs, rhs, transpose_rhs: false })
    }

    /// `lhs · rhsᵀ`.
    pub fn matmul_t(&mut self, lhs: NodeId, rhs: NodeId) -> NodeId {
        self.push(Op::MatMul { lhs, rhs, transpose_rhs: true })
    }

    /// Element-wise sum; a `1 × n` right operand is broadcast over the rows of the left.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    /// Element-wise product, with the same broadcasting rule as [`add`](Self::add).
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softmax(a))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: Axis) -> NodeId {
        self.push(Op::Concat { parts: parts.to_vec(), axis })
    }

    /// Row `row` of a matrix as a `1 × d` tensor (embedding lookup).
    pub fn row_lookup(&mut self, table: NodeId, row: usize) -> NodeId {
        self.push(Op::RowLookup { table, row })
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a))
    }

    /// Evaluates every node in recording order.
    pub fn forward(&mut self, params: &ParamStore, inputs: &[(&str, Tensor)]) -> Result<()> {
        let mut values: Vec<Option<Tensor>> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let v = eval(op, &self.ops, &values, params, inputs)?;
            values.push(v);
        }
        self.values = Some(values);
        self.grads.clear();
        Ok(())
    }

    /// Value of a node after [`forward`](Self::forward). Parameter nodes are
    /// not copied into the graph and report `None`; read them from the store.
    pub fn value(&self, node: NodeId) -> Option<&Tensor> {
        let values = self.values.as_ref()?;
        match (&self.ops[node.0], &values[node.0]) {
            (Op::Const(t), _) => Some(t),
            (_, v) => v.as_ref(),
        }
    }

    /// Clone of a computed node's value. Panics before forward.
    pub fn take_value(&self, node: NodeId) -> Tensor {
        self.value(node).expect("forward has run").clone()
    }

    /// Gradient of the last backward pass with respect to `node`, if it was reached.
    pub fn grad(&self, node: NodeId) -> Option<&Tensor> {
        self.grads.get(node.0).and_then(|g| g.as_ref())
    }

    /// Propagates `seed` (the gradient of some scalar objective with respect
    /// to `output`) back through the graph, accumulating into `params`.
    pub fn backward(&mut self, output: NodeId, seed: &Tensor, params: &mut ParamStore) -> Result<()> {
        let stored = self.values.as_ref().ok_or(Error::BackwardBeforeForward)?;
        let values = Values {
            ops: &self.ops,
            stored,
            params: &*params,
        };
        if !values[output.0].same_shape(seed) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: values[output.0].shape().to_vec(),
                rhs: seed.shape().to_vec(),
            });
        }
        let mut param_grads: Vec<(ParamId, Tensor)> = Vec::new();

        // Only nodes that lead to a parameter or input need a gradient.
        let mut needs = vec![false; self.ops.len()];
        for (i, op) in self.ops.iter().enumerate() {
            needs[i] = match op {
                Op::Input(_) | Op::Param(_) => true,
                Op::Const(_) => false,
                Op::MatMul { lhs, rhs, .. } => needs[lhs.0] || needs[rhs.0],
                Op::Add(a, b) | Op::Mul(a, b) => needs[a.0] || needs[b.0],
                Op::Tanh(a) | Op::Sigmoid(a) | Op::Softmax(a) | Op::Sum(a) | Op::Mean(a) | Op::Log(a) => {
                    needs[a.0]
                }
                Op::Concat { parts, .. } => parts.iter().any(|p| needs[p.0]),
                Op::RowLookup { table, .. } => needs[table.0],
            };
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.ops.len()];
        grads[output.0] = Some(seed.clone());

        for i in (0..=output.0).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let y = &values[i];
            match &self.ops[i] {
                Op::Input(_) | Op::Const(_) => {}
                Op::Param(id) => param_grads.push((*id, g.clone())),
                Op::MatMul { lhs, rhs, transpose_rhs } => {
                    let a = &values[lhs.0];
                    let b = &values[rhs.0];
                    let (m, k) = (a.rows(), a.cols());
                    let n = y.cols();
                    if needs[lhs.0] {
                        let mut da = vec![0.0; m * k];
                        if *transpose_rhs {
                            // y = a·bᵀ, b is n×k: da = g·b
                            matmul_into(g.data(), b.data(), &mut da, m, n, k);
                        } else {
                            // b is k×n: da = g·bᵀ
                            matmul_nt_into(g.data(), b.data(), &mut da, m, n, k);
                        }
                        accumulate(&mut grads, *lhs, a, da);
                    }
                    if needs[rhs.0] {
                        let mut db = vec![0.0; b.len()];
                        if *transpose_rhs {
                            // db (n×k) = gᵀ·a
                            matmul_tn_into(g.data(), a.data(), &mut db, m, n, k);
                        } else {
                            // db (k×n) = aᵀ·g
                            matmul_tn_into(a.data(), g.data(), &mut db, m, k, n);
                        }
                        accumulate(&mut grads, *rhs, b, db);
                    }
                }
                Op::Add(a, b) => {
                    if needs[a.0] {
                        accumulate(&mut grads, *a, &values[a.0], g.data().to_vec());
                    }
                    if needs[b.0] {
                        let bv = &values[b.0];
                        let db = reduce_broadcast(g.data(), bv, y);
                        accumulate(&mut grads, *b, bv, db);
                    }
                }
                Op::Mul(a, b) => {
                    let av = &values[a.0];
                    let bv = &values[b.0];
                    let cols = y.cols();
                    if needs[a.0] {
                        let da = g
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(j, gv)| gv * bv.data()[broadcast_index(j, bv, cols)])
                            .collect();
                        accumulate(&mut grads, *a, av, da);
                    }
                    if needs[b.0] {
                        let prod: Vec<f64> = g.data().iter().zip(av.data()).map(|(gv, x)| gv * x).collect();
                        let db = reduce_broadcast(&prod, bv, y);
                        accumulate(&mut grads, *b, bv, db);
                    }
                }
                Op::Tanh(a) => {
                    let da = g.data().iter().zip(y.data()).map(|(gv, t)| gv * (1.0 - t * t)).collect();
                    accumulate(&mut grads, *a, &values[a.0], da);
                }
                Op::Sigmoid(a) => {
                    let da = g.data().iter().zip(y.data()).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                    accumulate(&mut grads, *a, &values[a.0], da);
                }
                Op::Softmax(a) => {
                    let cols = y.cols();
                    let mut da = vec![0.0; y.len()];
                    for r in 0..y.rows() {
                        let ys = &y.data()[r * cols..(r + 1) * cols];
                        let gs = &g.data()[r * cols..(r + 1) * cols];
                        let dot: f64 = ys.iter().zip(gs).map(|(p, q)| p * q).sum();
                        for c in 0..cols {
                            da[r * cols + c] = ys[c] * (gs[c] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, &values[a.0], da);
                }
                Op::Concat { parts, axis } => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = &values[p.0];
                        let piece: Vec<f64> = match axis {
                            Axis::Rows => {
                                let n = pv.len();
                                let s = g.data()[offset..offset + n].to_vec();
                                offset += n;
                                s
                            }
                            Axis::Cols => {
                                let (rows, pc, total) = (pv.rows(), pv.cols(), y.cols());
                                let mut s = Vec::with_capacity(pv.len());
                                for r in 0..rows {
                                    s.extend_from_slice(&g.data()[r * total + offset..r * total + offset + pc]);
                                }
                                offset += pc;
                                s
                            }
                        };
                        if needs[p.0] {
                            accumulate(&mut grads, *p, pv, piece);
                        }
                    }
                }
                Op::RowLookup { table, row } => {
                    let tv = &values[table.0];
                    let cols = tv.cols();
                    let mut dt = vec![0.0; tv.len()];
                    dt[row * cols..(row + 1) * cols].copy_from_slice(g.data());
                    accumulate(&mut grads, *table, tv, dt);
                }
                Op::Sum(a) => {
                    let av = &values[a.0];
                    accumulate(&mut grads, *a, av, vec![g.item(); av.len()]);
                }
                Op::Mean(a) => {
                    let av = &values[a.0];
                    let n = av.len() as f64;
                    accumulate(&mut grads, *a, av, vec![g.item() / n; av.len()]);
                }
                Op::Log(a) => {
                    let av = &values[a.0];
                    let da = g.data().iter().zip(av.data()).map(|(gv, x)| gv / x).collect();
                    accumulate(&mut grads, *a, av, da);
                }
            }
            // Keep leaf gradients around for inspection.
            if matches!(self.ops[i], Op::Input(_) | Op::Param(_) | Op::Const(_)) {
                grads[i] = Some(g);
            }
        }
        for (id, g) in param_grads {
            params.grad_mut(id).add_assign(&g);
        }
        self.grads = grads;
        Ok(())
    }
}

/// Indexable view over node values that resolves constants and parameters in place.
struct Values<'a> {
    ops: &'a [Op],
    stored: &'a [Option<Tensor>],
    params: &'a ParamStore,
}

impl core::ops::Index<usize> for Values<'_> {
    type Output = Tensor;

    fn index(&self, i: usize) -> &Tensor {
        resolve(self.ops, self.stored, self.params, i)
    }
}

fn resolve<'a>(ops: &'a [Op], stored: &'a [Option<Tensor>], params: &'a ParamStore, i: usize) -> &'a Tensor {
    match &ops[i] {
        Op::Const(t) => t,
        Op::Param(id) => params.value(*id),
        _ => stored[i].as_ref().expect("value computed"),
    }
}

fn accumulate(grads: &mut [Option<Tensor>], node: NodeId, like: &Tensor, data: Vec<f64>) {
    match &mut grads[node.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(&data) {
                *e += d;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(like.shape().to_vec(), data).expect("gradient shape"));
        }
    }
}

/// Index into `b` for flat output index `j`, where `b` may be a broadcast row.
fn broadcast_index(j: usize, b: &Tensor, cols: usize) -> usize {
    if b.rows() == 1 {
        j % cols
    } else {
        j
    }
}

/// Sum a full-size gradient down to the shape of a (possibly broadcast) operand.
fn reduce_broadcast(g: &[f64], b: &Tensor, y: &Tensor) -> Vec<f64> {
    if b.len() == y.len() {
        return g.to_vec();
    }
    let cols = y.cols();
    let mut out = vec![0.0; cols];
    for (j, gv) in g.iter().enumerate() {
        out[j % cols] += gv;
    }
    out
}

fn check_binary(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    let ok = a.same_shape(b) || (b.rows() == 1 && b.cols() == a.cols() && b.len() == a.cols() && a.shape().len() <= 2);
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn eval(
    op: &Op,
    ops: &[Op],
    values: &[Option<Tensor>],
    params: &ParamStore,
    inputs: &[(&str, Tensor)],
) -> Result<Option<Tensor>> {
    let v = |n: &NodeId| resolve(ops, values, params, n.0);
    Ok(Some(match op {
        Op::Input(name) => inputs
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::UnboundInput(name.clone()))?,
        Op::Const(_) | Op::Param(_) => return Ok(None),
        Op::MatMul { lhs, rhs, transpose_rhs } => {
            let (a, b) = (v(lhs), v(rhs));
            let (m, k) = (a.rows(), a.cols());
            let (inner, n) = if *transpose_rhs { (b.cols(), b.rows()) } else { (b.rows(), b.cols()) };
            if k != inner || a.shape().len() > 2 || b.shape().len() > 2 {
                return Err(Error::ShapeMismatch {
                    op: op.name(),
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut out = vec![0.0; m * n];
            if *transpose_rhs {
                matmul_nt_into(a.data(), b.data(), &mut out, m, k, n);
            } else {
                matmul_into(a.data(), b.data(), &mut out, m, k, n);
            }
            Tensor::matrix(m, n, out)
        }
        Op::Add(a, b) | Op::Mul(a, b) => {
            let (x, y) = (v(a), v(b));
            check_binary(op.name(), x, y)?;
            let cols = x.cols();
            let add = matches!(op, Op::Add(..));
            let data = x
                .data()
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let q = y.data()[broadcast_index(j, y, cols)];
                    if add {
                        p + q
                    } else {
                        p * q
                    }
                })
                .collect();
            Tensor::new(x.shape().to_vec(), data)?
        }
        Op::Tanh(a) => v(a).map(libm::tanh),
        Op::Sigmoid(a) => v(a).map(sigmoid),
        Op::Softmax(a) => softmax_rows(v(a)),
        Op::Concat { parts, axis } => concat(op.name(), parts.iter().map(v).collect(), *axis)?,
        Op::RowLookup { table, row } => {
            let t = v(table);
            if t.shape().len() != 2 || *row >= t.rows() {
                return Err(Error::IndexOutOfRange {
                    op: op.name(),
                    index: *row,
                    len: t.rows(),
                });
            }
            Tensor::row(t.row_slice(*row).to_vec())
        }
        Op::Sum(a) => Tensor::scalar(v(a).sum()),
        Op::Mean(a) => {
            let t = v(a);
            Tensor::scalar(t.sum() / t.len() as f64)
        }
        Op::Log(a) => v(a).map(libm::log),
    }))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Numerically stable softmax over the last axis.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let cols = t.cols();
    let mut out = t.data().to_vec();
    for row in out.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = libm::exp(*x - max);
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("same shape")
}

fn concat(op: &'static str, parts: Vec<&Tensor>, axis: Axis) -> Result<Tensor> {
    let first = *parts.first().ok_or(Error::Empty("concat of no tensors"))?;
    let mismatch = |p: &Tensor| Error::ShapeMismatch {
        op,
        lhs: first.shape().to_vec(),
        rhs: p.shape().to_vec(),
    };
    match axis {
        Axis::Rows => {
            let cols = first.cols();
            let mut data = Vec::new();
            for p in &parts {
                if p.cols() != cols || p.shape().len() > 2 {
                    return Err(mismatch(p));
                }
                data.extend_from_slice(p.data());
            }
            let rows = data.len() / cols;
            Ok(Tensor::matrix(rows, cols, data))
        }
        Axis::Cols => {
            let rows = first.rows();
            for p in &parts {
                if p.rows() != rows || p.shape().len() > 2 {
                    return Err(mismatch(p));
                }
            }
            let total: usize = parts.iter().map(|p| p.cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in &parts {
                    data.extend_from_slice(p.row_slice(r));
                }
            }
            Ok(Tensor::matrix(rows, total, data))
        }
    }
}
