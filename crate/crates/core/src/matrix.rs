//! Dense row-major matrix of `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return shape_err(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            ));
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return shape_err(format!("row {i} has {} values, expected {cols}", row.len()));
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn row_vector(values: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            values,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            values,
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// `self · other`.
    pub fn matmul(&self, other: &RealMatrix) -> Result<RealMatrix> {
        if self.cols != other.rows {
            return shape_err(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = RealMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.values[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.values[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.values[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_transposed(&self, other: &RealMatrix) -> Result<RealMatrix> {
        if self.cols != other.cols {
            return shape_err(format!(
                "matmul {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = RealMatrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                let b = other.row(j);
                out.values[i * other.rows + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn transposed_matmul(&self, other: &RealMatrix) -> Result<RealMatrix> {
        if self.rows != other.rows {
            return shape_err(format!(
                "matmul ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = RealMatrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let out_row = &mut out.values[i * other.cols..(i + 1) * other.cols];
                for (o, &bj) in out_row.iter_mut().zip(b) {
                    *o += ai * bj;
                }
            }
        }
        Ok(out)
    }

    /// Column sums as a `1 x cols` matrix.
    pub fn column_sums(&self) -> RealMatrix {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        RealMatrix::row_vector(out)
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hconcat(&self, other: &RealMatrix) -> Result<RealMatrix> {
        if self.rows != other.rows {
            return shape_err(format!(
                "hconcat of {} rows with {} rows",
                self.rows, other.rows
            ));
        }
        let cols = self.cols + other.cols;
        let mut values = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            values.extend_from_slice(self.row(r));
            values.extend_from_slice(other.row(r));
        }
        Ok(RealMatrix {
            rows: self.rows,
            cols,
            values,
        })
    }

    /// Splits columns at `at` into `(left, right)`.
    pub fn hsplit(&self, at: usize) -> (RealMatrix, RealMatrix) {
        let mut left = RealMatrix::zeros(self.rows, at);
        let mut right = RealMatrix::zeros(self.rows, self.cols - at);
        for r in 0..self.rows {
            let row = self.row(r);
            left.row_mut(r).copy_from_slice(&row[..at]);
            right.row_mut(r).copy_from_slice(&row[at..]);
        }
        (left, right)
    }

    pub fn add_assign(&mut self, other: &RealMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return shape_err(format!("add {:?} and {:?}", self.shape(), other.shape()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.values {
            *v *= k;
        }
    }

    pub fn squared_distance(&self, other: &RealMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(RealMatrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(RealMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn matmul_variants_agree() {
        let a = RealMatrix::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = RealMatrix::from_vec(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.values(), &[58., 64., 139., 154.]);

        let bt = RealMatrix::from_vec(2, 3, vec![7., 9., 11., 8., 10., 12.]).unwrap();
        assert_eq!(a.matmul_transposed(&bt).unwrap(), ab);

        let at = RealMatrix::from_vec(3, 2, vec![1., 4., 2., 5., 3., 6.]).unwrap();
        assert_eq!(at.transposed_matmul(&b).unwrap(), ab);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn concat_then_split() {
        let a = RealMatrix::from_vec(2, 1, vec![1., 2.]).unwrap();
        let b = RealMatrix::from_vec(2, 2, vec![3., 4., 5., 6.]).unwrap();
        let c = a.hconcat(&b).unwrap();
        assert_eq!(c.row(1), &[2., 5., 6.]);
        let (l, r) = c.hsplit(1);
        assert_eq!(l, a);
        assert_eq!(r, b);
    }
}
