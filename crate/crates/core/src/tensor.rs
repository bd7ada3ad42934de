//! Dense vector/matrix primitives with 64-bit floats.
//!
//! Row-major storage throughout. Constructors reject non-finite entries so
//! every value that enters the pipeline is a real number; divergence checks
//! downstream only have to look at freshly computed quantities.

use crate::error::{Error, Result};

/// Dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor1 {
    data: Vec<f64>,
}

impl Tensor1 {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "vector contains a non-finite entry".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Tensor1) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum()
    }
}

impl std::ops::Index<usize> for Tensor1 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Tensor1 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Dense matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "matrix contains a non-finite entry".into(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix (square).
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    /// `y = A x`, dimensions checked by the caller.
    pub fn matvec(&self, x: &Tensor1) -> Tensor1 {
        debug_assert_eq!(self.cols, x.len());
        let mut out = Tensor1::zeros(self.rows);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xv) in row.iter().zip(x.as_slice()) {
                acc += w * xv;
            }
            out[r] = acc;
        }
        out
    }

    /// `y = A^T x`.
    pub fn matvec_transposed(&self, x: &Tensor1) -> Tensor1 {
        debug_assert_eq!(self.rows, x.len());
        let mut out = Tensor1::zeros(self.cols);
        for r in 0..self.rows {
            let xv = x[r];
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, w) in out.as_mut_slice().iter_mut().zip(row) {
                *o += w * xv;
            }
        }
        out
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(Tensor1::new(vec![1.0, f64::NAN]).is_err());
        assert!(Tensor2::new(1, 2, vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn rejects_bad_shape() {
        assert!(Tensor2::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn matvec_identity() {
        let m = Tensor2::identity(3);
        let x = Tensor1::new(vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(m.matvec(&x).as_slice(), x.as_slice());
        assert_eq!(m.matvec_transposed(&x).as_slice(), x.as_slice());
    }

    #[test]
    fn matvec_transposed_matches_manual() {
        let m = Tensor2::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = Tensor1::new(vec![1.0, -1.0]).unwrap();
        let y = m.matvec_transposed(&x);
        assert_eq!(y.as_slice(), &[-3.0, -3.0, -3.0]);
    }
}
