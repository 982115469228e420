use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor.
///
/// Most operations in this crate treat tensors as matrices `[rows, cols]`;
/// a rank-0 tensor (shape `[]`) holds a single scalar. `grad` is populated
/// only on parameters after a backward pass has been applied to them.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel], grad: None }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: Vec::new(), data: vec![value], grad: None }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equal-length rows into a `[rows.len(), cols]` matrix.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Tensor::from_rows",
                    format!("row {i} has length {}, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(
                "Tensor::set_grad",
                format!("gradient has {} values, tensor has {}", grad.len(), self.data.len()),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect(), grad: None }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { shape: self.shape.clone(), data, grad: None })
    }

    /// `[m, k] · [k, n] → [m, n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if self.shape.len() != 2 || other.shape.len() != 2 || k != k2 {
            return Err(Error::shape("matmul", format!("{:?} · {:?}", self.shape, other.shape)));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, &self.data, &other.data, &mut out);
        Self::matrix(m, n, out)
    }

    /// `[m, k] · [n, k]ᵀ → [m, n]`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        let (m, k) = (self.rows(), self.cols());
        let (n, k2) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::shape("matmul_t", format!("{:?} · {:?}ᵀ", self.shape, other.shape)));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm_bt(m, k, n, &self.data, &other.data, &mut out);
        Self::matrix(m, n, out)
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self { shape: vec![c, r], data: out, grad: None }
    }

    /// Adds a `[1, cols]` row vector to every row.
    pub fn add_row(&self, bias: &Self) -> Result<Self> {
        let c = self.cols();
        if bias.numel() != c {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", self.shape, bias.shape)));
        }
        let mut out = self.clone();
        out.grad = None;
        for row in out.data.chunks_mut(c) {
            for (v, &b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    /// Row-wise softmax of `self / temperature`.
    pub fn softmax_rows(&self, temperature: T) -> Self {
        let c = self.cols();
        let mut out = self.clone();
        out.grad = None;
        for row in out.data.chunks_mut(c) {
            softmax_in_place(row, temperature);
        }
        out
    }

    /// Row-wise L2 normalization; zero rows stay zero.
    pub fn l2_normalize_rows(&self) -> Self {
        let c = self.cols();
        let mut out = self.clone();
        out.grad = None;
        for row in out.data.chunks_mut(c) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm > T::zero() {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
        out
    }

    /// Index of the largest entry of each row (lowest index on ties).
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.data.chunks(self.cols()).map(argmax).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            grad: None,
        }
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T], temperature: T) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v / temperature));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v / temperature - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmin<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v < xs[best] {
            best = i;
        }
    }
    best
}
