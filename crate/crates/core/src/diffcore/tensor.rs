use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of f64. Vectors are 1 x n rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "tensor",
                format!("{} values for shape [{rows}, {cols}]", data.len()),
            ));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn row(values: &[f64]) -> Self {
        Tensor {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Value of a 1 x 1 tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(
                "item",
                format!("tensor of shape {:?} is not scalar", self.shape()),
            ));
        }
        Ok(self.data[0])
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.same_shape(other, op)?;
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        gemm(self, false, other, false, &mut out, 0.0);
        Ok(out)
    }

    /// Elementwise sum; `other` may also be a single row broadcast over rows.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if other.rows == 1 && self.rows != 1 && other.cols == self.cols {
            let mut out = self.clone();
            for row in out.data.chunks_mut(self.cols) {
                for (v, b) in row.iter_mut().zip(&other.data) {
                    *v += b;
                }
            }
            return Ok(out);
        }
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Column sums as a single row.
    pub fn sum_rows(&self) -> Tensor {
        let mut out = Tensor::zeros(1, self.cols);
        for row in self.data.chunks(self.cols) {
            for (o, v) in out.data.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn transpose(&self) -> Tensor {
        Tensor::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let rows = parts.first().map_or(0, |t| t.rows);
        if parts.iter().any(|t| t.rows != rows) {
            let shapes: Vec<_> = parts.iter().map(|t| t.shape()).collect();
            return Err(Error::shape(
                "concat",
                format!("row counts differ: {shapes:?}"),
            ));
        }
        let cols: usize = parts.iter().map(|t| t.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for t in parts {
                data.extend_from_slice(t.row_slice(r));
            }
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        if start > end || end > self.cols {
            return Err(Error::shape(
                "slice",
                format!("columns {start}..{end} of {:?}", self.shape()),
            ));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(self.rows * w);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row_slice(r)[start..end]);
        }
        Ok(Tensor {
            rows: self.rows,
            cols: w,
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.same_shape(other, "accumulate")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

/// out = beta * out + op(a) * op(b), where op transposes when requested.
pub(crate) fn gemm(a: &Tensor, ta: bool, b: &Tensor, tb: bool, out: &mut Tensor, beta: f64) {
    let (m, k) = if ta {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let n = if tb { b.rows } else { b.cols };
    debug_assert_eq!(out.shape(), [m, n]);
    let (rsa, csa) = if ta {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: strides and extents describe exactly the backing buffers of
    // `a`, `b` and `out`, whose sizes were checked by the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            out.cols as isize,
            1,
        );
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

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        Tensor::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    #[test]
    fn matmul_identity_and_oracle() {
        let a = Tensor::new(3, 2, vec![1.0, -2.0, 3.5, 0.25, -1.0, 4.0]).unwrap();
        assert_eq!(Tensor::identity(3).matmul(&a).unwrap(), a);

        let a = Tensor::new(2, 3, vec![0.5, -1.0, 2.0, 3.0, 0.0, -0.75]).unwrap();
        let b = Tensor::new(3, 2, vec![1.0, 2.0, -3.0, 0.5, 4.0, -1.5]).unwrap();
        let got = a.matmul(&b).unwrap();
        let want = naive_matmul(&a, &b);
        for (x, y) in got.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(matches!(
            a.matmul(&a),
            Err(Error::Shape { op: "matmul", .. })
        ));
    }

    #[test]
    fn transposed_gemm() {
        let a = Tensor::from_fn(4, 3, |r, c| (r * 3 + c) as f64 * 0.1 - 0.4);
        let b = Tensor::from_fn(4, 5, |r, c| (r as f64 - c as f64) * 0.3);
        let mut out = Tensor::zeros(3, 5);
        gemm(&a, true, &b, false, &mut out, 0.0);
        let want = naive_matmul(&a.transpose(), &b);
        for (x, y) in out.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let mut out = Tensor::zeros(4, 4);
        gemm(&b, false, &b, true, &mut out, 0.0);
        let want = naive_matmul(&b, &b.transpose());
        for (x, y) in out.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn broadcast_and_shapes() {
        let m = Tensor::filled(3, 2, 1.0);
        let r = Tensor::row(&[1.0, 2.0]);
        assert_eq!(m.add(&r).unwrap().data(), &[2.0, 3.0, 2.0, 3.0, 2.0, 3.0]);
        assert!(m.add(&Tensor::row(&[1.0, 2.0, 3.0])).is_err());
        let c = Tensor::concat_cols(&[&m, &Tensor::zeros(3, 1)]).unwrap();
        assert_eq!(c.shape(), [3, 3]);
        assert_eq!(c.slice_cols(0, 2).unwrap(), m);
        assert!(c.slice_cols(2, 4).is_err());
        assert!(Tensor::concat_cols(&[&m, &Tensor::zeros(2, 1)]).is_err());
    }

    #[test]
    fn sigmoid_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
