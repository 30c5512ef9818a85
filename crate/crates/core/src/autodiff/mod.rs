//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive operation of one forward pass in
//! topological order. [`Tape::backward`] walks the record in reverse and
//! accumulates vector-Jacobian products into every leaf that was created
//! with `requires_grad`. One tape serves one training step; parameters live
//! outside the tape as plain [`Tensor`]s and are staged as leaves each step.
//!
//! The op set is exactly what the model needs — no broadcasting beyond
//! scalar [`Tape::scale`] and the row-broadcast add used for bias terms.
//! Every op output is checked for NaN/Inf so numerical blowups surface at
//! the op that produced them instead of as a garbage loss.

mod gradcheck;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};

use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs_rows}x{lhs_cols} vs {rhs_rows}x{rhs_cols}")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("{op}: row index {index} out of range for {len} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("non-finite values in output of {op}")]
    NonFinite { op: &'static str },
    #[error("{op} requires at least one row")]
    EmptyInput { op: &'static str },
    #[error("backward already ran on this tape")]
    BackwardTwice,
    #[error("backward requires a 1x1 loss, got {0}x{1}")]
    LossNotScalar(usize, usize),
    #[error("gradient-check builder is not deterministic: two forward passes gave {0} and {1}")]
    NonDeterministicBuilder(f64, f64),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(ValueId, ValueId),
    Add(ValueId, ValueId),
    /// `lhs + row` where `row` is 1×n, added to every row of `lhs`.
    AddRow(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Hadamard(ValueId, ValueId),
    Scale(ValueId, f64),
    Relu(ValueId),
    Sigmoid(ValueId),
    SoftmaxRows(ValueId),
    Ln(ValueId),
    Clamp { x: ValueId, lo: f64, hi: f64 },
    MeanRows(ValueId),
    SumAll(ValueId),
    GatherRows { table: ValueId, indices: Vec<usize> },
    ScatterAddRows { rows: ValueId, indices: Vec<usize> },
}

/// One recorded value: the tensor, its gradient (after backward), and the
/// op that produced it.
#[derive(Debug)]
pub struct Value {
    tensor: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Records one forward pass and replays it backwards for gradients.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Value>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a recorded node.
    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    /// Gradient of a node, populated by [`Tape::backward`]. Leaves that do
    /// not influence the loss hold an all-zero gradient.
    pub fn grad(&self, id: ValueId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push(&mut self, op_name: &'static str, tensor: Tensor, requires_grad: bool, op: Op) -> Result<ValueId> {
        if !tensor.all_finite() {
            return Err(AutodiffError::NonFinite { op: op_name });
        }
        self.nodes.push(Value {
            tensor,
            grad: None,
            requires_grad,
            op,
        });
        Ok(ValueId(self.nodes.len() - 1))
    }

    fn needs_grad(&self, ids: &[ValueId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn check_same_shape(&self, op: &'static str, a: ValueId, b: ValueId) -> Result<()> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if (ar, ac) != (br, bc) {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs_rows: ar,
                lhs_cols: ac,
                rhs_rows: br,
                rhs_cols: bc,
            });
        }
        Ok(())
    }

    /// Trainable leaf; receives a gradient in [`Tape::backward`].
    pub fn leaf(&mut self, tensor: Tensor) -> Result<ValueId> {
        self.push("leaf", tensor, true, Op::Leaf)
    }

    /// Non-trainable input (data, masks, fixed encodings).
    pub fn constant(&mut self, tensor: Tensor) -> Result<ValueId> {
        self.push("constant", tensor, false, Op::Leaf)
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (m, k) = self.value(a).shape();
        let (k2, n) = self.value(b).shape();
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs_rows: m,
                lhs_cols: k,
                rhs_rows: k2,
                rhs_cols: n,
            });
        }
        let out = matmul_tensors(self.value(a), self.value(b));
        let rg = self.needs_grad(&[a, b]);
        self.push("matmul", out, rg, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape("add", a, b)?;
        let out = zip_tensors(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.needs_grad(&[a, b]);
        self.push("add", out, rg, Op::Add(a, b))
    }

    /// Adds a 1×n row vector to every row of an m×n matrix.
    pub fn add_row(&mut self, a: ValueId, row: ValueId) -> Result<ValueId> {
        let (m, n) = self.value(a).shape();
        let (rr, rc) = self.value(row).shape();
        if rr != 1 || rc != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                lhs_rows: m,
                lhs_cols: n,
                rhs_rows: rr,
                rhs_cols: rc,
            });
        }
        let mut out = self.value(a).clone();
        let rvals: Vec<f64> = self.value(row).as_slice().to_vec();
        for r in 0..m {
            for (c, rv) in rvals.iter().enumerate() {
                let v = out.at(r, c) + rv;
                out.set(r, c, v);
            }
        }
        let rg = self.needs_grad(&[a, row]);
        self.push("add_row", out, rg, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape("sub", a, b)?;
        let out = zip_tensors(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.needs_grad(&[a, b]);
        self.push("sub", out, rg, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape("hadamard", a, b)?;
        let out = zip_tensors(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.needs_grad(&[a, b]);
        self.push("hadamard", out, rg, Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, a: ValueId, s: f64) -> Result<ValueId> {
        let out = map_tensor(self.value(a), |x| x * s);
        let rg = self.nodes[a.0].requires_grad;
        self.push("scale", out, rg, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: ValueId) -> Result<ValueId> {
        let out = map_tensor(self.value(a), |x| if x > 0.0 { x } else { 0.0 });
        let rg = self.nodes[a.0].requires_grad;
        self.push("relu", out, rg, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: ValueId) -> Result<ValueId> {
        let out = map_tensor(self.value(a), sigmoid_scalar);
        let rg = self.nodes[a.0].requires_grad;
        self.push("sigmoid", out, rg, Op::Sigmoid(a))
    }

    /// Row-wise softmax with the usual max-shift for stability.
    pub fn softmax_rows(&mut self, a: ValueId) -> Result<ValueId> {
        let x = self.value(a);
        let (m, n) = x.shape();
        if n == 0 {
            return Err(AutodiffError::EmptyInput { op: "softmax_rows" });
        }
        let mut out = Tensor::zeros(m, n);
        for r in 0..m {
            let row = x.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (c, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                out.set(r, c, e);
                denom += e;
            }
            for c in 0..n {
                let v = out.at(r, c) / denom;
                out.set(r, c, v);
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push("softmax_rows", out, rg, Op::SoftmaxRows(a))
    }

    /// Elementwise natural log. Callers clamp first; a non-positive entry
    /// surfaces as a non-finite output error.
    pub fn ln(&mut self, a: ValueId) -> Result<ValueId> {
        let out = map_tensor(self.value(a), f64::ln);
        let rg = self.nodes[a.0].requires_grad;
        self.push("ln", out, rg, Op::Ln(a))
    }

    /// Elementwise clamp into `[lo, hi]`. Gradient passes through strictly
    /// inside the interval and is zero outside.
    pub fn clamp(&mut self, a: ValueId, lo: f64, hi: f64) -> Result<ValueId> {
        let out = map_tensor(self.value(a), |x| x.clamp(lo, hi));
        let rg = self.nodes[a.0].requires_grad;
        self.push("clamp", out, rg, Op::Clamp { x: a, lo, hi })
    }

    /// Column means as a 1×n row.
    ///
    /// Rows are pooled in a content-canonical order (identical rows grouped,
    /// distinct rows sorted by bit pattern), so the result is bit-identical
    /// under any permutation or duplication of the input rows.
    pub fn mean_rows(&mut self, a: ValueId) -> Result<ValueId> {
        let x = self.value(a);
        let (m, _) = x.shape();
        if m == 0 {
            return Err(AutodiffError::EmptyInput { op: "mean_rows" });
        }
        let out = mean_rows_tensor(x);
        let rg = self.nodes[a.0].requires_grad;
        self.push("mean_rows", out, rg, Op::MeanRows(a))
    }

    /// Sum of all entries as a 1×1 tensor.
    pub fn sum_all(&mut self, a: ValueId) -> Result<ValueId> {
        let s: f64 = self.value(a).as_slice().iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push("sum_all", Tensor::scalar(s), rg, Op::SumAll(a))
    }

    /// Stacks `table` rows selected by `indices` (duplicates allowed).
    pub fn gather_rows(&mut self, table: ValueId, indices: &[usize]) -> Result<ValueId> {
        let t = self.value(table);
        let (rows, cols) = t.shape();
        let mut out = Tensor::zeros(indices.len(), cols);
        for (r, &idx) in indices.iter().enumerate() {
            if idx >= rows {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "gather_rows",
                    index: idx,
                    len: rows,
                });
            }
            out.row_mut(r).copy_from_slice(t.row(idx));
        }
        let rg = self.nodes[table.0].requires_grad;
        self.push(
            "gather_rows",
            out,
            rg,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    /// Adds each source row into the target row named by `indices`, starting
    /// from zeros. The adjoint of [`Tape::gather_rows`].
    pub fn scatter_add_rows(&mut self, target_rows: usize, indices: &[usize], rows: ValueId) -> Result<ValueId> {
        let src = self.value(rows);
        let (m, cols) = src.shape();
        if indices.len() != m {
            return Err(AutodiffError::ShapeMismatch {
                op: "scatter_add_rows",
                lhs_rows: indices.len(),
                lhs_cols: 1,
                rhs_rows: m,
                rhs_cols: cols,
            });
        }
        let mut out = Tensor::zeros(target_rows, cols);
        for (r, &idx) in indices.iter().enumerate() {
            if idx >= target_rows {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "scatter_add_rows",
                    index: idx,
                    len: target_rows,
                });
            }
            let srow = src.row(r);
            let orow = out.row_mut(idx);
            for c in 0..cols {
                orow[c] += srow[c];
            }
        }
        let rg = self.nodes[rows.0].requires_grad;
        self.push(
            "scatter_add_rows",
            out,
            rg,
            Op::ScatterAddRows {
                rows,
                indices: indices.to_vec(),
            },
        )
    }

    /// Reverse pass from a scalar loss. Populates gradients on every
    /// `requires_grad` leaf; leaves with no path to the loss get zeros.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        let (r, c) = self.value(loss).shape();
        if (r, c) != (1, 1) {
            return Err(AutodiffError::LossNotScalar(r, c));
        }
        self.backward_done = true;
        for node in &mut self.nodes {
            if node.requires_grad {
                let (nr, nc) = node.tensor.shape();
                node.grad = Some(Tensor::zeros(nr, nc));
            }
        }
        if let Some(g) = self.nodes[loss.0].grad.as_mut() {
            g.set(0, 0, 1.0);
        }
        for i in (0..=loss.0).rev() {
            self.propagate(i);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize) {
        if !self.nodes[i].requires_grad {
            return;
        }
        let (before, rest) = self.nodes.split_at_mut(i);
        let node = &rest[0];
        let g = node.grad.as_ref().expect("requires_grad node has a grad buffer");
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, n) = g.shape();
                let k = before[a.0].tensor.cols();
                if before[a.0].requires_grad {
                    // dA = g . B^T
                    let mut da = Tensor::zeros(m, k);
                    for r in 0..m {
                        let grow = g.row(r);
                        let darow = da.row_mut(r);
                        for (l, d) in darow.iter_mut().enumerate() {
                            let brow = before[b.0].tensor.row(l);
                            let mut acc = 0.0;
                            for c in 0..n {
                                acc += grow[c] * brow[c];
                            }
                            *d = acc;
                        }
                    }
                    accumulate(&mut before[a.0], &da);
                }
                if before[b.0].requires_grad {
                    // dB = A^T . g
                    let mut db = Tensor::zeros(k, n);
                    for r in 0..m {
                        let arow = before[a.0].tensor.row(r);
                        let grow = g.row(r);
                        for (l, &av) in arow.iter().enumerate() {
                            if av != 0.0 {
                                let dbrow = db.row_mut(l);
                                for c in 0..n {
                                    dbrow[c] += av * grow[c];
                                }
                            }
                        }
                    }
                    accumulate(&mut before[b.0], &db);
                }
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                let g = g.clone();
                if before[a.0].requires_grad {
                    accumulate(&mut before[a.0], &g);
                }
                if before[b.0].requires_grad {
                    accumulate(&mut before[b.0], &g);
                }
            }
            Op::AddRow(a, row) => {
                let (a, row) = (*a, *row);
                let g = g.clone();
                if before[a.0].requires_grad {
                    accumulate(&mut before[a.0], &g);
                }
                if before[row.0].requires_grad {
                    let (m, n) = g.shape();
                    let mut dr = Tensor::zeros(1, n);
                    for r in 0..m {
                        let grow = g.row(r);
                        let drow = dr.row_mut(0);
                        for c in 0..n {
                            drow[c] += grow[c];
                        }
                    }
                    accumulate(&mut before[row.0], &dr);
                }
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                let g = g.clone();
                if before[a.0].requires_grad {
                    accumulate(&mut before[a.0], &g);
                }
                if before[b.0].requires_grad {
                    let neg = map_tensor(&g, |x| -x);
                    accumulate(&mut before[b.0], &neg);
                }
            }
            Op::Hadamard(a, b) => {
                let (a, b) = (*a, *b);
                if before[a.0].requires_grad {
                    let da = zip_tensors(g, &before[b.0].tensor, |gv, bv| gv * bv);
                    accumulate(&mut before[a.0], &da);
                }
                if before[b.0].requires_grad {
                    let db = zip_tensors(g, &before[a.0].tensor, |gv, av| gv * av);
                    accumulate(&mut before[b.0], &db);
                }
            }
            Op::Scale(a, s) => {
                let (a, s) = (*a, *s);
                if before[a.0].requires_grad {
                    let da = map_tensor(g, |x| x * s);
                    accumulate(&mut before[a.0], &da);
                }
            }
            Op::Relu(a) => {
                let a = *a;
                if before[a.0].requires_grad {
                    let da = zip_tensors(g, &before[a.0].tensor, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    accumulate(&mut before[a.0], &da);
                }
            }
            Op::Sigmoid(a) => {
                let a = *a;
                if before[a.0].requires_grad {
                    let da = zip_tensors(g, &node.tensor, |gv, yv| gv * yv * (1.0 - yv));
                    accumulate(&mut before[a.0], &da);
                }
            }
            Op::SoftmaxRows(a) => {
                let a = *a;
                if before[a.0].requires_grad {
                    let y = &node.tensor;
                    let (m, n) = y.shape();
                    let mut da = Tensor::zeros(m, n);
                    for r in 0..m {
                        let yrow = y.row(r);
                        let grow = g.row(r);
                        let dot: f64 = yrow.iter().zip(grow).map(|(yv, gv)| yv * gv).sum();
                        let darow = da.row_mut(r);
                        for c in 0..n {
                            darow[c] = yrow[c] * (grow[c] - dot);
                        }
                    }
                    accumulate(&mut before[a.0], &da);
                }
            }
            Op::Ln(a) => {
                let a = *a;
                if before[a.0].requires_grad {
                    let da = zip_tensors(g, &before[a.0].tensor, |gv, xv| gv / xv);
                    accumulate(&mut before[a.0], &da);
                }
            }
            Op::Clamp { x, lo, hi } => {
                let (x, lo, hi) = (*x, *lo, *hi);
                if before[x.0].requires_grad {
                    let da = zip_tensors(g, &before[x.0].tensor, |gv, xv| {
                        if xv > lo && xv < hi {
                            gv
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut before[x.0], &da);
                }
            }
            Op::MeanRows(a) => {
                let a = *a;
                if before[a.0].requires_grad {
                    let (m, n) = before[a.0].tensor.shape();
                    let mut da = Tensor::zeros(m, n);
                    let grow: Vec<f64> = g.row(0).to_vec();
                    let inv = 1.0 / m as f64;
                    for r in 0..m {
                        let darow = da.row_mut(r);
                        for c in 0..n {
                            darow[c] = grow[c] * inv;
                        }
                    }
                    accumulate(&mut before[a.0], &da);
                }
            }
            Op::SumAll(a) => {
                let a = *a;
                if before[a.0].requires_grad {
                    let gv = g.at(0, 0);
                    let (m, n) = before[a.0].tensor.shape();
                    let da = Tensor::from_fn(m, n, |_, _| gv);
                    accumulate(&mut before[a.0], &da);
                }
            }
            Op::GatherRows { table, indices } => {
                let table = *table;
                if before[table.0].requires_grad {
                    let (rows, cols) = before[table.0].tensor.shape();
                    let mut dt = Tensor::zeros(rows, cols);
                    for (r, &idx) in indices.iter().enumerate() {
                        let grow = g.row(r);
                        let drow = dt.row_mut(idx);
                        for c in 0..cols {
                            drow[c] += grow[c];
                        }
                    }
                    accumulate(&mut before[table.0], &dt);
                }
            }
            Op::ScatterAddRows { rows, indices } => {
                let rows = *rows;
                if before[rows.0].requires_grad {
                    let (m, cols) = before[rows.0].tensor.shape();
                    let mut dr = Tensor::zeros(m, cols);
                    for (r, &idx) in indices.iter().enumerate() {
                        dr.row_mut(r).copy_from_slice(g.row(idx));
                    }
                    accumulate(&mut before[rows.0], &dr);
                }
            }
        }
    }
}

fn accumulate(node: &mut Value, delta: &Tensor) {
    let g = node.grad.as_mut().expect("requires_grad node has a grad buffer");
    let gs = g.as_mut_slice();
    for (gv, dv) in gs.iter_mut().zip(delta.as_slice()) {
        *gv += dv;
    }
}

fn map_tensor(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let (m, n) = x.shape();
    Tensor::from_vec(m, n, x.as_slice().iter().map(|&v| f(v)).collect())
}

fn zip_tensors(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (m, n) = a.shape();
    Tensor::from_vec(
        m,
        n,
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn matmul_tensors(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.shape();
    let n = b.cols();
    let mut out = Tensor::zeros(m, n);
    for r in 0..m {
        let arow = a.row(r);
        let orow = out.row_mut(r);
        for (l, &av) in arow.iter().enumerate().take(k) {
            if av != 0.0 {
                let brow = b.row(l);
                for c in 0..n {
                    orow[c] += av * brow[c];
                }
            }
        }
    }
    out
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Column means, pooling rows in a content-canonical order so the result is
/// invariant (bit-for-bit) to row permutation and duplication.
fn mean_rows_tensor(x: &Tensor) -> Tensor {
    let (m, n) = x.shape();
    let mut order: Vec<usize> = (0..m).collect();
    let row_key = |r: usize| x.row(r).iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    order.sort_by_key(|&r| row_key(r));

    let mut out = Tensor::zeros(1, n);
    let mut i = 0;
    while i < m {
        let mut j = i + 1;
        while j < m && x.row(order[j]) == x.row(order[i]) {
            j += 1;
        }
        let w = (j - i) as f64 / m as f64;
        let srow = x.row(order[i]);
        let orow = out.row_mut(0);
        for c in 0..n {
            orow[c] += srow[c] * w;
        }
        i = j;
    }
    out
}
