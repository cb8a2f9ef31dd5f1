//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as a node whose parents precede it, so
//! the record is acyclic by construction and a single reverse sweep visits
//! nodes in a valid topological order. Nodes that depend on no trainable leaf
//! are marked as not needing gradients and are skipped during the sweep.

use super::tensor::{gemm, GemmOperand, Tensor};
use crate::{Error, Result};

/// Handle to a node of a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Neg,
    Tanh,
    Sigmoid,
    Silu,
    Softplus,
    Exp,
    Ln,
    Square,
    Symlog,
    Symexp,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SumAll(Var),
    SumCols(Var),
    SumRows(Var),
    GroupLogSoftmax(Var, usize),
    GroupSoftmax(Var, usize),
    MaxScalar(Var, f64),
    StraightThrough(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation record. Rebuilt for every forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// Gradient from the last [`Tape::backward`] call, `None` when the node was
    /// unreachable from the root.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient, or zeros of the node's shape when unreachable.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        match self.grad(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shape(v);
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.grads.clear();
    }

    /// Copy of `v` cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, what: &str) -> Var {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let value = self.value(a).zip_map(self.value(b), f);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b), "div")
    }

    /// `a (r×c) + row (1×c)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row: bias shape mismatch");
        let mut value = self.value(a).clone();
        let bias = self.value(row).data().to_vec();
        for i in 0..r {
            for (x, b) in value.data_mut()[i * c..(i + 1) * c].iter_mut().zip(&bias) {
                *x += b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    /// `a (r×c) ⊙ col (r×1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(col), (r, 1), "mul_col: column shape mismatch");
        let mut value = self.value(a).clone();
        let w = self.value(col).data().to_vec();
        for i in 0..r {
            for x in value.data_mut()[i * c..(i + 1) * c].iter_mut() {
                *x *= w[i];
            }
        }
        let ng = self.needs(a) || self.needs(col);
        self.push(value, Op::MulCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| k * x);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x + k);
        let ng = self.needs(a);
        self.push(value, Op::AddScalar(a), ng)
    }

    fn unary(&mut self, a: Var, u: Unary) -> Var {
        let f: fn(f64) -> f64 = match u {
            Unary::Neg => |x| -x,
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => sigmoid,
            Unary::Silu => |x| x * sigmoid(x),
            Unary::Softplus => softplus,
            Unary::Exp => f64::exp,
            Unary::Ln => f64::ln,
            Unary::Square => |x| x * x,
            Unary::Symlog => crate::diff::symlog,
            Unary::Symexp => crate::diff::symexp,
        };
        let value = self.value(a).map(f);
        let ng = self.needs(a);
        self.push(value, Op::Unary(a, u), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Neg)
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }
    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Silu)
    }
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }
    pub fn symlog(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Symlog)
    }
    pub fn symexp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Symexp)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), rows, "concat_cols: row mismatch");
                data.extend_from_slice(t.row_slice(r));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::new(rows, cols, data), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.shape(a);
        assert!(start + len <= cols, "slice_cols out of range");
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src.row_slice(r)[start..start + len]);
        }
        let ng = self.needs(a);
        self.push(Tensor::new(rows, len, data), Op::SliceCols(a, start), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums, `r×c → r×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        let value = Tensor::new(t.rows(), 1, data);
        let ng = self.needs(a);
        self.push(value, Op::SumCols(a), ng)
    }

    /// Per-column sums, `r×c → 1×c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut data = vec![0.0; t.cols()];
        for r in 0..t.rows() {
            for (d, x) in data.iter_mut().zip(t.row_slice(r)) {
                *d += x;
            }
        }
        let value = Tensor::new(1, t.cols(), data);
        let ng = self.needs(a);
        self.push(value, Op::SumRows(a), ng)
    }

    /// Log-softmax over contiguous blocks of `classes` columns.
    pub fn group_log_softmax(&mut self, a: Var, classes: usize) -> Var {
        let t = self.value(a);
        assert!(classes > 0 && t.cols() % classes == 0, "group_log_softmax: bad class count");
        let mut out = t.clone();
        for block in out.data_mut().chunks_mut(classes) {
            let m = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + block.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for x in block.iter_mut() {
                *x -= lse;
            }
        }
        let ng = self.needs(a);
        self.push(out, Op::GroupLogSoftmax(a, classes), ng)
    }

    /// Softmax over contiguous blocks of `classes` columns.
    pub fn group_softmax(&mut self, a: Var, classes: usize) -> Var {
        let t = self.value(a);
        assert!(classes > 0 && t.cols() % classes == 0, "group_softmax: bad class count");
        let mut out = t.clone();
        for block in out.data_mut().chunks_mut(classes) {
            let m = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in block.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in block.iter_mut() {
                *x /= s;
            }
        }
        let ng = self.needs(a);
        self.push(out, Op::GroupSoftmax(a, classes), ng)
    }

    /// Elementwise `max(a, floor)`; the floor passes no gradient.
    pub fn max_scalar(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).map(|x| x.max(floor));
        let ng = self.needs(a);
        self.push(value, Op::MaxScalar(a, floor), ng)
    }

    /// Emits `forward` as the value while routing the incoming gradient to
    /// `surrogate` unchanged (straight-through estimator).
    pub fn straight_through(&mut self, forward: Tensor, surrogate: Var) -> Var {
        assert_eq!(forward.shape(), self.shape(surrogate), "straight_through shape mismatch");
        let ng = self.needs(surrogate);
        self.push(forward, Op::StraightThrough(surrogate), ng)
    }

    /// Reverse sweep from a scalar root. Every node reachable from `root`
    /// that depends on a trainable leaf receives `∂root/∂node`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.shape(root) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        self.grads.clear();
        self.grads.resize_with(root.0 + 1, || None);
        self.grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let (lower, upper) = self.grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            propagate(&self.nodes, i, g, lower);
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut Tensor> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let (r, c) = nodes[v.0].value.shape();
    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
}

fn accumulate_with(
    nodes: &[Node],
    grads: &mut [Option<Tensor>],
    v: Var,
    f: impl Fn(usize) -> f64,
) {
    if let Some(dst) = slot(nodes, grads, v) {
        for (k, d) in dst.data_mut().iter_mut().enumerate() {
            *d += f(k);
        }
    }
}

fn propagate(nodes: &[Node], i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let node = &nodes[i];
    let gd = g.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            if let Some(da) = slot(nodes, grads, *a) {
                gemm(1.0, GemmOperand::plain(g), GemmOperand::transposed(bv), 1.0, da);
            }
            if let Some(db) = slot(nodes, grads, *b) {
                gemm(1.0, GemmOperand::transposed(av), GemmOperand::plain(g), 1.0, db);
            }
        }
        Op::Add(a, b) => {
            accumulate_with(nodes, grads, *a, |k| gd[k]);
            accumulate_with(nodes, grads, *b, |k| gd[k]);
        }
        Op::Sub(a, b) => {
            accumulate_with(nodes, grads, *a, |k| gd[k]);
            accumulate_with(nodes, grads, *b, |k| -gd[k]);
        }
        Op::Mul(a, b) => {
            let av = nodes[a.0].value.data();
            let bv = nodes[b.0].value.data();
            accumulate_with(nodes, grads, *a, |k| gd[k] * bv[k]);
            accumulate_with(nodes, grads, *b, |k| gd[k] * av[k]);
        }
        Op::Div(a, b) => {
            let av = nodes[a.0].value.data();
            let bv = nodes[b.0].value.data();
            accumulate_with(nodes, grads, *a, |k| gd[k] / bv[k]);
            accumulate_with(nodes, grads, *b, |k| -gd[k] * av[k] / (bv[k] * bv[k]));
        }
        Op::AddRow(a, row) => {
            accumulate_with(nodes, grads, *a, |k| gd[k]);
            let c = g.cols();
            if let Some(dr) = slot(nodes, grads, *row) {
                for r in 0..g.rows() {
                    for (d, x) in dr.data_mut().iter_mut().zip(&gd[r * c..(r + 1) * c]) {
                        *d += x;
                    }
                }
            }
        }
        Op::MulCol(a, col) => {
            let c = g.cols();
            let w = nodes[col.0].value.data();
            accumulate_with(nodes, grads, *a, |k| gd[k] * w[k / c]);
            let av = nodes[a.0].value.data();
            if let Some(dc) = slot(nodes, grads, *col) {
                for (r, d) in dc.data_mut().iter_mut().enumerate() {
                    *d += (0..c).map(|j| gd[r * c + j] * av[r * c + j]).sum::<f64>();
                }
            }
        }
        Op::Scale(a, k) => accumulate_with(nodes, grads, *a, |j| k * gd[j]),
        Op::AddScalar(a) => accumulate_with(nodes, grads, *a, |j| gd[j]),
        Op::Unary(a, u) => {
            let x = nodes[a.0].value.data();
            let y = node.value.data();
            let u = *u;
            accumulate_with(nodes, grads, *a, |k| {
                let d = match u {
                    Unary::Neg => -1.0,
                    Unary::Tanh => 1.0 - y[k] * y[k],
                    Unary::Sigmoid => y[k] * (1.0 - y[k]),
                    Unary::Silu => {
                        let s = sigmoid(x[k]);
                        s * (1.0 + x[k] * (1.0 - s))
                    }
                    Unary::Softplus => sigmoid(x[k]),
                    Unary::Exp => y[k],
                    Unary::Ln => 1.0 / x[k],
                    Unary::Square => 2.0 * x[k],
                    Unary::Symlog => 1.0 / (1.0 + x[k].abs()),
                    Unary::Symexp => x[k].abs().exp(),
                };
                gd[k] * d
            });
        }
        Op::ConcatCols(parts) => {
            let total = g.cols();
            let mut offset = 0;
            for p in parts {
                let pc = nodes[p.0].value.cols();
                let off = offset;
                accumulate_with(nodes, grads, *p, |k| {
                    let (r, j) = (k / pc, k % pc);
                    gd[r * total + off + j]
                });
                offset += pc;
            }
        }
        Op::SliceCols(a, start) => {
            let ac = nodes[a.0].value.cols();
            let len = g.cols();
            let start = *start;
            accumulate_with(nodes, grads, *a, |k| {
                let (r, j) = (k / ac, k % ac);
                if j >= start && j < start + len {
                    gd[r * len + j - start]
                } else {
                    0.0
                }
            });
        }
        Op::SumAll(a) => accumulate_with(nodes, grads, *a, |_| gd[0]),
        Op::SumCols(a) => {
            let ac = nodes[a.0].value.cols();
            accumulate_with(nodes, grads, *a, |k| gd[k / ac]);
        }
        Op::SumRows(a) => {
            let ac = nodes[a.0].value.cols();
            accumulate_with(nodes, grads, *a, |k| gd[k % ac]);
        }
        Op::GroupLogSoftmax(a, classes) => {
            let y = node.value.data();
            let n = *classes;
            let sums: Vec<f64> = gd.chunks(n).map(|b| b.iter().sum()).collect();
            accumulate_with(nodes, grads, *a, |k| gd[k] - y[k].exp() * sums[k / n]);
        }
        Op::GroupSoftmax(a, classes) => {
            let y = node.value.data();
            let n = *classes;
            let dots: Vec<f64> = gd
                .chunks(n)
                .zip(y.chunks(n))
                .map(|(gb, yb)| gb.iter().zip(yb).map(|(p, q)| p * q).sum())
                .collect();
            accumulate_with(nodes, grads, *a, |k| y[k] * (gd[k] - dots[k / n]));
        }
        Op::MaxScalar(a, floor) => {
            let x = nodes[a.0].value.data();
            let f = *floor;
            accumulate_with(nodes, grads, *a, |k| if x[k] > f { gd[k] } else { 0.0 });
        }
        Op::StraightThrough(s) => accumulate_with(nodes, grads, *s, |k| gd[k]),
    }
}
