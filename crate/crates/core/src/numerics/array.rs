use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// Rank-1 arrays behave as a single row wherever a matrix is expected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Array {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Contract(alloc::format!(
                "array extents must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::dim("array", &shape, &[values.len()]));
        }
        Ok(Array { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, 1.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "array extents must be positive"
        );
        let n = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            values: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Array {
            shape: vec![1],
            values: vec![value],
        }
    }

    /// A `1 × n` row.
    pub fn row(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "row must be non-empty");
        Array {
            shape: vec![1, values.len()],
            values,
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "vector must be non-empty");
        Array {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut values = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::dim("from_rows", &[c], &[row.len()]));
            }
            values.extend_from_slice(row);
        }
        Self::new(vec![r, c], values)
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zeros(&[n, n]);
        for i in 0..n {
            a.values[i * n + i] = 1.0;
        }
        a
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
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

    /// Row count when viewed as a matrix.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Column count when viewed as a matrix (trailing extents flattened).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    pub fn row_slice(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.values[row * c..(row + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Array> {
        Array::new(shape, self.values.clone())
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Array {
        debug_assert_eq!(values.len(), self.values.len());
        Array {
            shape: self.shape.clone(),
            values,
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Array) -> Result<Array> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.values, &other.values, &mut out, m, k, n);
        Ok(Array {
            shape: vec![m, n],
            values: out,
        })
    }

    pub fn transpose(&self) -> Array {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.values[i * c + j];
            }
        }
        Array {
            shape: vec![c, r],
            values: out,
        }
    }
}

/// `out += a[m×k] · b[k×n]`, i-k-j order so the inner loop is contiguous.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (l, &a_il) in a_row.iter().enumerate() {
            if a_il == 0.0 {
                continue;
            }
            let b_row = &b[l * n..(l + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_il * bv;
            }
        }
    }
}

/// `out += aᵀ · b` with `a: k×m`, `b: k×n`, `out: m×n`.
pub(crate) fn matmul_tn_into(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    for l in 0..k {
        let a_row = &a[l * m..(l + 1) * m];
        let b_row = &b[l * n..(l + 1) * n];
        for (i, &a_li) in a_row.iter().enumerate() {
            if a_li == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_li * bv;
            }
        }
    }
}

/// `out += a · bᵀ` with `a: m×n`, `b: k×n`, `out: m×k`.
pub(crate) fn matmul_nt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let b_row = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * k + j] += acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple_loop(a: &Array, b: &Array) -> Array {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    out[i * n + j] += a.get(i, l) * b.get(l, j);
                }
            }
        }
        Array::matrix(m, n, out).unwrap()
    }

    #[test]
    fn matmul_identity_left() {
        let b = Array::from_rows(&[&[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        assert_eq!(Array::identity(2).matmul(&b).unwrap(), b);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let b = Array::from_rows(&[&[3.0, -4.0], &[5.5, 6.0]]).unwrap();
        let z = Array::zeros(&[2, 2]);
        assert_eq!(z.matmul(&b).unwrap(), Array::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = Array::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Array::from_rows(&[&[5.0], &[6.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c, triple_loop(&a, &b));
        assert_eq!(c.values(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_right_identity_is_exact() {
        let a = Array::from_rows(&[&[0.1, -2.5, 3.75], &[1e-9, 7.0, -0.3]]).unwrap();
        assert_eq!(a.matmul(&Array::identity(3)).unwrap(), a);
    }

    #[test]
    fn matmul_shape_mismatch_names_both() {
        let a = Array::zeros(&[2, 3]);
        let b = Array::zeros(&[2, 3]);
        match a.matmul(&b) {
            Err(Error::Dimension { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(Array::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Array::new(vec![0, 2], vec![]).is_err());
        assert!(Array::new(vec![], vec![]).is_err());
    }

    #[test]
    fn transposed_kernels_agree_with_explicit_transpose() {
        let a = Array::from_rows(&[&[1.0, -2.0, 0.5], &[3.0, 0.25, -1.0]]).unwrap();
        let b = Array::from_rows(&[&[2.0, 1.0], &[-1.0, 4.0]]).unwrap();
        let mut tn = vec![0.0; 6];
        matmul_tn_into(a.values(), b.values(), &mut tn, 2, 3, 2);
        assert_eq!(tn, a.transpose().matmul(&b).unwrap().into_values());
        let c = Array::from_rows(&[&[1.0, 2.0, 3.0], &[0.0, -1.0, 2.0], &[4.0, 4.0, 4.0]]).unwrap();
        let mut nt = vec![0.0; 6];
        matmul_nt_into(a.values(), c.values(), &mut nt, 2, 3, 3);
        assert_eq!(nt, a.matmul(&c.transpose()).unwrap().into_values());
    }
}
