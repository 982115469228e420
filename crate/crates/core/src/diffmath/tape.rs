//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Operations on [`Var`] handles are recorded on a [`Tape`] in execution
//! order; [`Tape::backward`] walks that record in reverse and accumulates
//! vector-Jacobian products. Leaves created with [`Tape::param`] receive
//! gradients, leaves created with [`Tape::constant`] do not, and neither does
//! anything computed purely from constants.

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// right operand is `[1, cols]`
    Row,
    /// right operand is `[rows, 1]`
    Col,
    /// right operand has one element
    Scalar,
}

impl Bcast {
    fn resolve(a: &[usize], rows: usize, cols: usize, b: &Tensor<impl Scalar>) -> Option<Self> {
        if b.shape() == a {
            Some(Bcast::Same)
        } else if b.numel() == 1 {
            Some(Bcast::Scalar)
        } else if b.rows() == 1 && b.cols() == cols {
            Some(Bcast::Row)
        } else if b.cols() == 1 && b.rows() == rows {
            Some(Bcast::Col)
        } else {
            None
        }
    }

    #[inline]
    fn index(self, i: usize, j: usize, cols: usize) -> usize {
        match self {
            Bcast::Same => i * cols + j,
            Bcast::Row => j,
            Bcast::Col => i,
            Bcast::Scalar => 0,
        }
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize, Bcast),
    Mul(usize, usize, Bcast),
    Scale(usize, T),
    AddScalar(usize),
    Relu(usize),
    Softmax(usize, T),
    Log(usize),
    Sum(usize),
    Mean(usize),
    L2Normalize(usize),
    /// `log softmax(x / t)` at one column per row
    /// Input, temperature, picked column per row, softmax kept from the forward pass.
    LogSoftmaxPick(usize, T, Vec<usize>, Tensor<T>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a differentiable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, mut value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        value.clear_grad();
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Gradients of a scalar `loss` with respect to every node on the tape.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let y = &node.value;
            match node.op {
                Op::LogSoftmaxPick(a, t, ref picks, ref probs) => {
                    let cols = probs.cols();
                    let mut da = probs.data().to_vec();
                    for (i, (row, &gi)) in da.chunks_mut(cols).zip(&g).enumerate() {
                        for v in row.iter_mut() {
                            *v = -gi * *v / t;
                        }
                        row[picks[i]] += gi / t;
                    }
                    accumulate(&mut grads[a], &da);
                }
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a].value, &nodes[b].value);
                    let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                    if nodes[a].requires_grad {
                        let mut da = vec![T::zero(); m * k];
                        T::gemm_bt(m, n, k, &g, vb.data(), &mut da);
                        accumulate(&mut grads[a], &da);
                    }
                    if nodes[b].requires_grad {
                        let mut db = vec![T::zero(); k * n];
                        T::gemm_at(k, m, n, va.data(), &g, &mut db);
                        accumulate(&mut grads[b], &db);
                    }
                }
                Op::Add(a, b, bc) => {
                    if nodes[a].requires_grad {
                        accumulate(&mut grads[a], &g);
                    }
                    if nodes[b].requires_grad {
                        let (rows, cols) = (y.rows(), y.cols());
                        let mut db = vec![T::zero(); nodes[b].value.numel()];
                        for i in 0..rows {
                            for j in 0..cols {
                                db[bc.index(i, j, cols)] += g[i * cols + j];
                            }
                        }
                        accumulate(&mut grads[b], &db);
                    }
                }
                Op::Mul(a, b, bc) => {
                    let (va, vb) = (&nodes[a].value, &nodes[b].value);
                    let (rows, cols) = (y.rows(), y.cols());
                    if nodes[a].requires_grad {
                        let mut da = vec![T::zero(); va.numel()];
                        for i in 0..rows {
                            for j in 0..cols {
                                let k = i * cols + j;
                                da[k] = g[k] * vb.data()[bc.index(i, j, cols)];
                            }
                        }
                        accumulate(&mut grads[a], &da);
                    }
                    if nodes[b].requires_grad {
                        let mut db = vec![T::zero(); vb.numel()];
                        for i in 0..rows {
                            for j in 0..cols {
                                let k = i * cols + j;
                                db[bc.index(i, j, cols)] += g[k] * va.data()[k];
                            }
                        }
                        accumulate(&mut grads[b], &db);
                    }
                }
                Op::Scale(a, c) => {
                    let da: Vec<T> = g.iter().map(|&v| v * c).collect();
                    accumulate(&mut grads[a], &da);
                }
                Op::AddScalar(a) => accumulate(&mut grads[a], &g),
                Op::Relu(a) => {
                    let x = nodes[a].value.data();
                    let da: Vec<T> =
                        g.iter().zip(x).map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() }).collect();
                    accumulate(&mut grads[a], &da);
                }
                Op::Softmax(a, t) => {
                    let cols = y.cols();
                    let mut da = vec![T::zero(); y.numel()];
                    for ((dr, yr), gr) in da.chunks_mut(cols).zip(y.data().chunks(cols)).zip(g.chunks(cols)) {
                        let dot: T = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - dot) / t;
                        }
                    }
                    accumulate(&mut grads[a], &da);
                }
                Op::Log(a) => {
                    let floor = T::lit(T::LOG_FLOOR);
                    let x = nodes[a].value.data();
                    let da: Vec<T> =
                        g.iter().zip(x).map(|(&gv, &xv)| if xv > floor { gv / xv } else { T::zero() }).collect();
                    accumulate(&mut grads[a], &da);
                }
                Op::Sum(a) => {
                    let da = vec![g[0]; nodes[a].value.numel()];
                    accumulate(&mut grads[a], &da);
                }
                Op::Mean(a) => {
                    let n = nodes[a].value.numel();
                    let da = vec![g[0] / T::from_usize_lossy(n); n];
                    accumulate(&mut grads[a], &da);
                }
                Op::L2Normalize(a) => {
                    let x = &nodes[a].value;
                    let cols = x.cols();
                    let mut da = vec![T::zero(); x.numel()];
                    for (((dr, xr), yr), gr) in da
                        .chunks_mut(cols)
                        .zip(x.data().chunks(cols))
                        .zip(y.data().chunks(cols))
                        .zip(g.chunks(cols))
                    {
                        let norm = xr.iter().map(|&v| v * v).sum::<T>().sqrt();
                        if norm <= T::zero() {
                            continue;
                        }
                        let dot: T = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = (gv - yv * dot) / norm;
                        }
                    }
                    accumulate(&mut grads[a], &da);
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) if node.requires_grad => {
                    Some(Tensor::new(node.value.shape().to_vec(), g).expect("gradient shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(acc) => {
            for (a, &v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}

/// Gradients of a loss with respect to the parameter leaves of a tape.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a parameter leaf; `None` for constants and interior nodes.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Scalar value of a single-element node.
    pub fn item(&self) -> T {
        self.value().item()
    }

    fn unary(self, value: Tensor<T>, op: Op<T>) -> Self {
        let rg = self.tape.requires(self.id);
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Self, value: Tensor<T>, op: Op<T>) -> Self {
        let rg = self.tape.requires(self.id) || self.tape.requires(other.id);
        self.tape.push(value, op, rg)
    }

    pub fn matmul(self, other: Self) -> Result<Self> {
        let value = self.value().matmul(&other.value())?;
        Ok(self.binary(other, value, Op::MatMul(self.id, other.id)))
    }

    fn broadcast_apply(self, other: Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<(Bcast, Tensor<T>)> {
        let a = self.value();
        let b = other.value();
        let (rows, cols) = (a.rows(), a.cols());
        let bc = Bcast::resolve(a.shape(), rows, cols, &b)
            .ok_or_else(|| Error::shape(op, format!("{:?} with {:?}", a.shape(), b.shape())))?;
        let mut out = a.clone();
        let bd = b.data();
        for (i, row) in out.data_mut().chunks_mut(cols.max(1)).enumerate().take(rows) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = f(*v, bd[bc.index(i, j, cols)]);
            }
        }
        Ok((bc, out))
    }

    /// Elementwise sum. `other` may match, or broadcast as a row, column or scalar.
    pub fn add(self, other: Self) -> Result<Self> {
        let (bc, value) = self.broadcast_apply(other, "add", |x, y| x + y)?;
        Ok(self.binary(other, value, Op::Add(self.id, other.id, bc)))
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.add(other.scale(-T::one()))
    }

    /// Elementwise product with the same broadcasting rules as [`Var::add`].
    pub fn mul(self, other: Self) -> Result<Self> {
        let (bc, value) = self.broadcast_apply(other, "mul", |x, y| x * y)?;
        Ok(self.binary(other, value, Op::Mul(self.id, other.id, bc)))
    }

    pub fn scale(self, c: T) -> Self {
        let value = self.value().map(|v| v * c);
        self.unary(value, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: T) -> Self {
        let value = self.value().map(|v| v + c);
        self.unary(value, Op::AddScalar(self.id))
    }

    pub fn relu(self) -> Self {
        let value = self.value().relu();
        self.unary(value, Op::Relu(self.id))
    }

    /// Row-wise softmax of `self / temperature`.
    pub fn softmax(self, temperature: T) -> Result<Self> {
        if !(temperature > T::zero()) {
            return Err(Error::arg("temperature", format!("must be positive, got {temperature}")));
        }
        let value = self.value().softmax_rows(temperature);
        Ok(self.unary(value, Op::Softmax(self.id, temperature)))
    }

    /// Natural log with inputs floored at the crate-wide log floor.
    pub fn log(self) -> Self {
        let floor = T::lit(T::LOG_FLOOR);
        let value = self.value().map(|v| v.max(floor).ln());
        self.unary(value, Op::Log(self.id))
    }

    pub fn sum(self) -> Self {
        let value = Tensor::scalar(self.value().data().iter().copied().sum());
        self.unary(value, Op::Sum(self.id))
    }

    pub fn mean(self) -> Self {
        let v = self.value();
        let n = T::from_usize_lossy(v.numel().max(1));
        let value = Tensor::scalar(v.data().iter().copied().sum::<T>() / n);
        drop(v);
        self.unary(value, Op::Mean(self.id))
    }

    /// `[rows, 1]` column of `log softmax(self / temperature)[i, picks[i]]`,
    /// computed through log-sum-exp so it never hits the log floor.
    pub fn log_softmax_pick(self, temperature: T, picks: &[usize]) -> Result<Self> {
        if !(temperature > T::zero()) {
            return Err(Error::arg("temperature", format!("must be positive, got {temperature}")));
        }
        let x = self.value();
        let (rows, cols) = (x.rows(), x.cols());
        if picks.len() != rows || picks.iter().any(|&j| j >= cols) {
            return Err(Error::shape("log_softmax_pick", format!("{} picks for {:?}", picks.len(), x.shape())));
        }
        let mut probs = x.clone();
        drop(x);
        probs.clear_grad();
        let mut out = Vec::with_capacity(rows);
        for (row, &j) in probs.data_mut().chunks_mut(cols).zip(picks) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let shifted = (row[j] - max) / temperature;
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = ((*v - max) / temperature).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
            out.push(shifted - total.ln());
        }
        let value = Tensor::matrix(rows, 1, out)?;
        Ok(self.unary(value, Op::LogSoftmaxPick(self.id, temperature, picks.to_vec(), probs)))
    }

    pub fn l2_normalize_rows(self) -> Self {
        let value = self.value().l2_normalize_rows();
        self.unary(value, Op::L2Normalize(self.id))
    }
}
