//! Dense f64 tensor with reverse-mode autodiff and an Adam optimizer.
//!
//! `Tensor` is a plain value type (row-major flat storage). Differentiable
//! computation goes through [`graph::Graph`], a tape that is rebuilt every
//! step so dynamically sampled adapter ranks can change the topology freely.
//! Gradient correctness is checked against central finite differences via
//! [`gradcheck::grad_check`].

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod io;

use crate::error::{Error, Result};
use rand::Rng;

/// Dense n-dimensional array of 64-bit floats with an optional gradient slot.
///
/// Invariants: `product(shape) == data.len()`, `grad` (when present) has the
/// same length as `data`, and all stored values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {numel} elements, data has {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value {bad} in tensor")));
        }
        Ok(Self { shape, data, grad: None, requires_grad: false })
    }

    /// Internal constructor for values produced by ops that preserve finiteness.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data, grad: None, requires_grad: false }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; numel])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; numel])
    }

    /// Gaussian init, mean 0, given standard deviation. Consumes two uniform
    /// draws per element (Box-Muller), keeping the seed stream platform-stable.
    pub fn randn<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| standard_normal(rng) * std).collect();
        Self::from_parts(shape.to_vec(), data)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// (rows, cols) of a 2-d tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            other => Err(Error::Shape(format!("expected matrix, got shape {other:?}"))),
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        let (_, n) = (self.shape[0], self.shape[1]);
        self.data[i * n + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions disagree: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let data = matmul_raw(&self.data, &other.data, m, k, n);
        Ok(Tensor::from_parts(vec![m, n], data))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor::from_parts(vec![n, m], out))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "add shapes disagree: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|v| v * c).collect())
    }

    /// First `len` columns of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        if start + len > n {
            return Err(Error::Contract(format!(
                "column slice {start}..{} out of range for {n} columns",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&self.data[i * n + start..i * n + start + len]);
        }
        Ok(Tensor::from_parts(vec![m, len], out))
    }

    /// First `len` rows of a matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        if start + len > m {
            return Err(Error::Contract(format!(
                "row slice {start}..{} out of range for {m} rows",
                start + len
            )));
        }
        let out = self.data[start * n..(start + len) * n].to_vec();
        Ok(Tensor::from_parts(vec![len, n], out))
    }

    pub fn ensure_grad(&mut self) -> &mut Vec<f64> {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        let g = self.ensure_grad();
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// One standard-normal draw via Box-Muller; consumes exactly two uniforms.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Row-major `a[m x k] * b[k x n]`, ikj order for cache-friendly inner loops.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj += a_ip * bj;
            }
        }
    }
    c
}
