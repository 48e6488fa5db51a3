//! Dense row-major `f64` tensors.
//!
//! Almost everything in the model is a matrix of shape `[rows, cols]`, where
//! rows index patients (or cut points) in a minibatch. Vectors are stored as
//! `[1, n]` or `[n, 1]` and scalars as `[1, 1]`.

use serde::{Deserialize, Serialize};

use super::AutodiffError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, AutodiffError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(AutodiffError::Shape {
                op: "tensor",
                detail: format!("shape {:?} needs {} values, got {}", shape, expected, values.len()),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            values: vec![value],
        }
    }

    /// Builds a `[rows, cols]` matrix from row-major values.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(vec![rows, cols], values)
    }

    /// A `[n, 1]` column.
    pub fn column(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len(), 1],
            values,
        }
    }

    /// A `[1, n]` row.
    pub fn row(values: Vec<f64>) -> Self {
        Self {
            shape: vec![1, values.len()],
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows of a 2-D tensor (1-D tensors count as one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let cols = self.cols();
        self.values[row * cols + col] = value;
    }

    pub fn row_slice(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.values[row * c..(row + 1) * c]
    }

    /// The single value of a `[1, 1]` (or any one-element) tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.values.len(), 1);
        self.values[0]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.values.len(), other.values.len());
        Tensor {
            shape: self.shape.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.values[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            values: out,
        }
    }

    /// Plain matrix product `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(AutodiffError::Shape {
                op: "matmul",
                detail: format!("{:?} x {:?}", self.shape, other.shape),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.values, &other.values, &mut out, m, k, n);
        Ok(Tensor {
            shape: vec![m, n],
            values: out,
        })
    }

    /// Stacks 2-D tensors with equal column counts.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor, AutodiffError> {
        let cols = parts.first().map_or(0, Tensor::cols);
        let mut values = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != cols {
                return Err(AutodiffError::Shape {
                    op: "concat_rows",
                    detail: format!("{} vs {} columns", p.cols(), cols),
                });
            }
            rows += p.rows();
            values.extend_from_slice(&p.values);
        }
        Tensor::matrix(rows, cols, values)
    }

    /// Copies the listed rows, in order, into a new tensor.
    pub fn select_rows(&self, rows: &[usize]) -> Tensor {
        let c = self.cols();
        let mut values = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            values.extend_from_slice(self.row_slice(r));
        }
        Tensor {
            shape: vec![rows.len(), c],
            values,
        }
    }
}

/// `out += a[m,k] * b[k,n]`, i-k-j order.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a^T[m,k] * b[k,n]` where `a` is stored as `[k, m]`.
pub(crate) fn matmul_at_b_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a[m,k] * b^T[k,n]` where `b` is stored as `[n, k]`.
pub(crate) fn matmul_a_bt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul_is_noop() {
        let m = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = Tensor::identity(3).matmul(&m).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        assert!(err.to_string().contains("matmul"));
        assert!(Tensor::new(vec![2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn transposed_products_agree() {
        let a = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.5]).unwrap();
        let b = Tensor::matrix(2, 4, (0..8).map(|v| v as f64 * 0.3).collect()).unwrap();
        let mut out = vec![0.0; 12];
        matmul_at_b_into(a.values(), b.values(), &mut out, 3, 2, 4);
        let expected = a.transpose().matmul(&b).unwrap();
        assert_eq!(out, expected.values());

        let c = Tensor::matrix(4, 3, (0..12).map(|v| v as f64 - 5.0).collect()).unwrap();
        let mut out2 = vec![0.0; 8];
        matmul_a_bt_into(a.values(), c.values(), &mut out2, 2, 3, 4);
        assert_eq!(out2, a.matmul(&c.transpose()).unwrap().values());
    }
}
