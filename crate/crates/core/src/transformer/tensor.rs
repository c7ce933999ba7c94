//! Minimal row-major matrix type backing the forecaster. Everything is f64:
//! the gradient checks compare against central finite differences at 1e-4
//! relative, which single precision cannot support.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `self * other`; blocked i-k-j loops, sequential and deterministic.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Tensor::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^T * other`.
    pub fn matmul_at_b(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.rows, other.rows, "matmul_at_b shape mismatch");
        let mut out = Tensor::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`.
    pub fn matmul_a_bt(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.cols, "matmul_a_bt shape mismatch");
        let mut out = Tensor::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for (a, b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                *out.at_mut(i, j) = acc;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Adds a (1, cols) bias row to every row.
    pub fn add_bias(&mut self, bias: &Tensor) {
        assert_eq!(bias.rows, 1);
        assert_eq!(bias.cols, self.cols);
        for i in 0..self.rows {
            for (v, b) in self.row_mut(i).iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
    }

    /// Column slice `[start, start+width)` as a new tensor.
    pub fn col_slice(&self, start: usize, width: usize) -> Tensor {
        assert!(start + width <= self.cols);
        let mut out = Tensor::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    /// Adds `other` into the column slice starting at `start`.
    pub fn col_slice_add(&mut self, start: usize, other: &Tensor) {
        assert_eq!(self.rows, other.rows);
        assert!(start + other.cols <= self.cols);
        for i in 0..self.rows {
            let dst = &mut self.data[i * self.cols + start..i * self.cols + start + other.cols];
            for (d, s) in dst.iter_mut().zip(other.row(i)) {
                *d += s;
            }
        }
    }

    /// Guard used by the training loop: every value finite.
    pub fn assert_finite(&self, ctx: &str) -> Result<()> {
        match self.data.iter().find(|v| !v.is_finite()) {
            None => Ok(()),
            Some(v) => Err(Error::Diverged(format!("non-finite value {v} in {ctx}"))),
        }
    }
}
