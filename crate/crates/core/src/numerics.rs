//! Dense 64-bit primitives with explicit forward and backward passes.
//!
//! Everything here is a pure function of its inputs. Backward passes take
//! whatever the forward pass needs (the input for linear and ReLU, the cached
//! output for sigmoid) so callers can keep their own activation caches.

use crate::error::{Error, Result};

/// Smallest value [`sigmoid`] will return.
pub const SIGMOID_FLOOR: f64 = f64::MIN_POSITIVE;
/// Largest value [`sigmoid`] will return: the greatest `f64` below 1.
pub const SIGMOID_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "matrix shape {rows}x{cols} has an empty side"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::dim("matrix data", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; handy in tests and hand-set models.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dim("matrix row", cols, bad.len()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Gradients of a linear layer for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub input: Vec<f64>,
}

/// Fully connected layer `y = W x + b` with `W` stored as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    weight: Matrix,
    bias: Vec<f64>,
}

impl LinearLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::dim("linear bias", weight.rows(), bias.len()));
        }
        if bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear bias"));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.weight.as_mut_slice(), &mut self.bias)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::dim("linear input", self.in_dim(), x.len()));
        }
        Ok((0..self.out_dim())
            .map(|i| dot(self.weight.row(i), x) + self.bias[i])
            .collect())
    }

    pub fn backward(&self, x: &[f64], grad_out: &[f64]) -> Result<LinearGrads> {
        let mut weight = Matrix::zeros(self.out_dim(), self.in_dim());
        let mut bias = vec![0.0; self.out_dim()];
        let input = self.accumulate_backward(x, grad_out, weight.as_mut_slice(), &mut bias)?;
        Ok(LinearGrads {
            weight,
            bias,
            input,
        })
    }

    /// Adds this input's weight and bias gradients into the given buffers and
    /// returns the gradient with respect to `x`.
    pub(crate) fn accumulate_backward(
        &self,
        x: &[f64],
        grad_out: &[f64],
        grad_weight: &mut [f64],
        grad_bias: &mut [f64],
    ) -> Result<Vec<f64>> {
        let (rows, cols) = (self.out_dim(), self.in_dim());
        if x.len() != cols {
            return Err(Error::dim("linear backward input", cols, x.len()));
        }
        if grad_out.len() != rows {
            return Err(Error::dim("linear backward grad_out", rows, grad_out.len()));
        }
        debug_assert_eq!(grad_weight.len(), rows * cols);
        debug_assert_eq!(grad_bias.len(), rows);

        let mut grad_x = vec![0.0; cols];
        for (i, &g) in grad_out.iter().enumerate() {
            grad_bias[i] += g;
            if g == 0.0 {
                continue;
            }
            let w_row = self.weight.row(i);
            let gw_row = &mut grad_weight[i * cols..(i + 1) * cols];
            for j in 0..cols {
                gw_row[j] += g * x[j];
                grad_x[j] += w_row[j] * g;
            }
        }
        Ok(grad_x)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Passes `grad_out` through where `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward(x: &[f64], grad_out: &[f64]) -> Result<Vec<f64>> {
    if x.len() != grad_out.len() {
        return Err(Error::dim("relu backward", x.len(), grad_out.len()));
    }
    Ok(x.iter()
        .zip(grad_out)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect())
}

/// Logistic function. The exponent is always non-positive so nothing
/// overflows; the result is clamped into the open interval (0, 1).
pub fn sigmoid_scalar(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(SIGMOID_FLOOR, SIGMOID_CEIL)
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

/// Backward pass from the cached forward output `y`.
pub fn sigmoid_backward(y: &[f64], grad_out: &[f64]) -> Result<Vec<f64>> {
    if y.len() != grad_out.len() {
        return Err(Error::dim("sigmoid backward", y.len(), grad_out.len()));
    }
    Ok(y.iter()
        .zip(grad_out)
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect())
}
