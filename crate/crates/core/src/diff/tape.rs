//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations are
//! appended in execution order, so the tape index order is a valid
//! topological order and [`Tape::backward`] simply walks it in reverse.
//! Variables are lightweight [`Var`] handles into the tape.

use std::sync::Arc;

use rand::Rng;

use super::special::{digamma_unchecked, lgamma_unchecked, trigamma_unchecked};
use super::tensor::Tensor;
use crate::error::{GpnError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A fixed linear map `R^{n x d} -> R^{n x d}` that knows its own adjoint.
///
/// Used for graph propagation, where the operator is data rather than a
/// learnable parameter.
pub trait LinearMap: Send + Sync + std::fmt::Debug {
    fn apply(&self, x: &Tensor) -> Result<Tensor>;
    fn apply_transpose(&self, g: &Tensor) -> Result<Tensor>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnaryKind {
    Relu,
    Exp,
    Log,
    Softplus,
    Lgamma,
    Digamma,
    Recip,
    Square,
    Neg,
}

/// How the right operand of a binary op maps onto the left operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    /// `b` has one entry per column of `a`.
    Row(usize),
    /// `b` has one entry per row of `a`; the value is the column count of `a`.
    Col(usize),
}

impl Broadcast {
    fn resolve(a: &Tensor, b: &Tensor) -> Result<Self> {
        if a.shape() == b.shape() {
            return Ok(Broadcast::Same);
        }
        if b.len() == 1 {
            return Ok(Broadcast::Scalar);
        }
        if a.is_matrix() {
            let (n, m) = (a.shape()[0], a.shape()[1]);
            let bs = b.shape();
            if bs == [m] || bs == [1, m] {
                return Ok(Broadcast::Row(m));
            }
            if bs == [n, 1] || (bs == [n] && a.shape()[1] == 1) {
                return Ok(Broadcast::Col(m));
            }
        }
        Err(GpnError::shape(format!(
            "cannot broadcast {:?} onto {:?}",
            b.shape(),
            a.shape()
        )))
    }

    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Scalar => 0,
            Broadcast::Row(m) => i % m,
            Broadcast::Col(m) => i / m,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    Unary(UnaryKind, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Dropout(Var, Vec<f64>),
    Sum(Var),
    SumCols(Var),
    RowNorm(Var),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Linear(Var, Arc<dyn LinearMap>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Ordered record of executed differentiable operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Records a leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Records a leaf that is treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let bcast = Broadcast::resolve(ta, tb)?;
        let bd = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bd[bcast.index(i)];
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                }
            })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Binary { kind, a, b, bcast }, rg))
    }

    /// Elementwise `a + b`; `b` may be a scalar, a row vector or a column vector.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    /// `x[n x m] + bias[m]`, broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if !tx.is_matrix() || tb.len() != tx.cols() {
            return Err(GpnError::shape(format!(
                "bias {:?} does not match {:?}",
                tb.shape(),
                tx.shape()
            )));
        }
        self.binary(BinaryKind::Add, x, bias)
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let domain_positive = matches!(kind, UnaryKind::Log | UnaryKind::Lgamma | UnaryKind::Digamma);
        if domain_positive {
            if let Some(bad) = tx.data().iter().find(|v| !(**v > 0.0)) {
                return Err(GpnError::Domain(format!("{kind:?} of non-positive value {bad}")));
            }
        }
        let value = tx.map(|v| match kind {
            UnaryKind::Relu => v.max(0.0),
            UnaryKind::Exp => v.exp(),
            UnaryKind::Log => v.ln(),
            UnaryKind::Softplus => softplus(v),
            UnaryKind::Lgamma => lgamma_unchecked(v),
            UnaryKind::Digamma => digamma_unchecked(v),
            UnaryKind::Recip => 1.0 / v,
            UnaryKind::Square => v * v,
            UnaryKind::Neg => -v,
        });
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Unary(kind, x), rg))
    }

    /// Elementwise `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Softplus, x)
    }

    pub fn lgamma(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Lgamma, x)
    }

    pub fn digamma(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Digamma, x)
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Recip, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Square, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        let rg = self.rg(&[x]);
        self.push(value, Op::AddScalar(x), rg)
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(GpnError::Parameter(format!("dropout probability {p} not in [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let tx = self.value(x);
        let mask: Vec<f64> = (0..tx.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Dropout(x, mask), rg))
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Row sums of an `n x m` matrix, shape `[n, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.rows();
        let data = (0..n).map(|i| tx.row(i).iter().sum()).collect();
        let value = Tensor::new(vec![n, 1], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SumCols(x), rg))
    }

    /// Euclidean norm of each row, shape `[n, 1]`. The subgradient at 0 is 0.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.rows();
        let data = (0..n)
            .map(|i| tx.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let value = Tensor::new(vec![n, 1], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::RowNorm(x), rg))
    }

    /// Selects rows `idx` (repetition allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.rows();
        if let Some(bad) = idx.iter().find(|&&i| i >= n) {
            return Err(GpnError::shape(format!("row index {bad} out of range for {n} rows")));
        }
        let c = tx.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(tx.row(i));
        }
        let mut shape = tx.shape().to_vec();
        shape[0] = idx.len();
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::GatherRows(x, idx.to_vec()), rg))
    }

    /// Picks entry `x[i, cols[i]]` for every row, shape `[n, 1]`.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if !tx.is_matrix() || cols.len() != tx.rows() {
            return Err(GpnError::shape(format!(
                "pick: {} column indices for shape {:?}",
                cols.len(),
                tx.shape()
            )));
        }
        let m = tx.cols();
        if let Some(bad) = cols.iter().find(|&&c| c >= m) {
            return Err(GpnError::shape(format!("column index {bad} out of range for {m} columns")));
        }
        let data = cols.iter().enumerate().map(|(i, &c)| tx.get(i, c)).collect();
        let value = Tensor::new(vec![cols.len(), 1], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Pick(x, cols.to_vec()), rg))
    }

    /// Horizontal concatenation of `[n, k_i]` blocks.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| GpnError::shape("concat of zero tensors"))?;
        let n = self.value(*first).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        if parts.iter().any(|&p| self.value(p).rows() != n) {
            return Err(GpnError::shape("concat_cols: row counts differ"));
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(vec![n, total], data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Applies a fixed linear map; gradients flow through its adjoint.
    pub fn linear_map(&mut self, x: Var, map: Arc<dyn LinearMap>) -> Result<Var> {
        let value = map.apply(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Linear(x, map), rg))
    }

    /// Back-propagates from a scalar `loss`, accumulating into existing grads.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(GpnError::shape("loss is not on this tape"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(GpnError::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate_node(idx, &g, &mut grads)?;
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => {
                    for (a, v) in acc.data_mut().iter_mut().zip(&g) {
                        *a += v;
                    }
                }
                None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }

    fn propagate_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
                if self.requires_grad(*a) {
                    let ga = gt.matmul(&tb.transpose()?)?;
                    self.accumulate(grads, *a, ga.data());
                }
                if self.requires_grad(*b) {
                    let gb = ta.transpose()?.matmul(&gt)?;
                    self.accumulate(grads, *b, gb.data());
                }
            }
            Op::Binary { kind, a, b, bcast } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = self.requires_grad(*a).then(|| vec![0.0; ad.len()]);
                let mut gb = self.requires_grad(*b).then(|| vec![0.0; bd.len()]);
                for (i, &gi) in g.iter().enumerate() {
                    let j = bcast.index(i);
                    let (da, db) = match kind {
                        BinaryKind::Add => (1.0, 1.0),
                        BinaryKind::Sub => (1.0, -1.0),
                        BinaryKind::Mul => (bd[j], ad[i]),
                        BinaryKind::Div => (1.0 / bd[j], -ad[i] / (bd[j] * bd[j])),
                    };
                    if let Some(ga) = ga.as_mut() {
                        ga[i] += gi * da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[j] += gi * db;
                    }
                }
                if let Some(ga) = ga {
                    self.accumulate(grads, *a, &ga);
                }
                if let Some(gb) = gb {
                    self.accumulate(grads, *b, &gb);
                }
            }
            Op::Unary(kind, x) => {
                let xd = self.value(*x).data();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(xd.iter().zip(y))
                    .map(|(&gi, (&xi, &yi))| {
                        gi * match kind {
                            UnaryKind::Relu => {
                                if xi > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Exp => yi,
                            UnaryKind::Log => 1.0 / xi,
                            UnaryKind::Softplus => sigmoid(xi),
                            UnaryKind::Lgamma => digamma_unchecked(xi),
                            UnaryKind::Digamma => trigamma_unchecked(xi),
                            UnaryKind::Recip => -yi * yi,
                            UnaryKind::Square => 2.0 * xi,
                            UnaryKind::Neg => -1.0,
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::Scale(x, c) => {
                let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g),
            Op::Dropout(x, mask) => {
                let gx: Vec<f64> = g.iter().zip(mask).map(|(a, m)| a * m).collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::Sum(x) => {
                let gx = vec![g[0]; self.value(*x).len()];
                self.accumulate(grads, *x, &gx);
            }
            Op::SumCols(x) => {
                let tx = self.value(*x);
                let m = tx.cols();
                let gx: Vec<f64> = (0..tx.len()).map(|i| g[i / m]).collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::RowNorm(x) => {
                let tx = self.value(*x);
                let m = tx.cols();
                let gx: Vec<f64> = tx
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let r = y[i / m];
                        if r > 0.0 {
                            g[i / m] * v / r
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::GatherRows(x, idx) => {
                let tx = self.value(*x);
                let c = tx.cols();
                let mut gx = vec![0.0; tx.len()];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        gx[i * c + j] += g[k * c + j];
                    }
                }
                self.accumulate(grads, *x, &gx);
            }
            Op::Pick(x, cols) => {
                let tx = self.value(*x);
                let m = tx.cols();
                let mut gx = vec![0.0; tx.len()];
                for (i, &c) in cols.iter().enumerate() {
                    gx[i * m + c] += g[i];
                }
                self.accumulate(grads, *x, &gx);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let n = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut gp = Vec::with_capacity(n * w);
                        for i in 0..n {
                            gp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        self.accumulate(grads, p, &gp);
                    }
                    offset += w;
                }
            }
            Op::Linear(x, map) => {
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
                let gx = map.apply_transpose(&gt)?;
                self.accumulate(grads, *x, gx.data());
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g.to_vec()),
        }
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
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
