//! Dense row-major f64 matrices and a thin GEMM wrapper.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix from {} values",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn scalar(v: f64) -> Self {
        Mat {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn add_assign(&mut self, o: &Mat) {
        debug_assert_eq!(self.shape(), o.shape());
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, o: &Mat) -> Mat {
        debug_assert_eq!(self.shape(), o.shape());
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, o: &Mat) -> Mat {
        assert_eq!(self.cols, o.rows, "matmul inner dimensions");
        let mut out = Mat::zeros(self.rows, o.cols);
        gemm(
            self.rows,
            self.cols,
            o.cols,
            View::row_major(&self.data, self.cols),
            View::row_major(&o.data, o.cols),
            &mut out.data,
            o.cols,
            0.0,
        );
        out
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Strided read-only view used as a GEMM operand.
#[derive(Clone, Copy)]
pub struct View<'a> {
    pub data: &'a [f64],
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> View<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        View {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        View {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }

    pub fn offset(self, start: usize) -> Self {
        View {
            data: &self.data[start..],
            ..self
        }
    }
}

/// `c = a * b + beta * c` for an `m x k` by `k x n` product; `c` is row-major
/// with row stride `ldc`.
pub fn gemm(m: usize, k: usize, n: usize, a: View, b: View, c: &mut [f64], ldc: usize, beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    // bounds: the furthest element each operand touches
    let last = |v: &View, r: usize, cc: usize| -> usize {
        if r == 0 || cc == 0 {
            return 0;
        }
        ((r - 1) as isize * v.row_stride + (cc - 1) as isize * v.col_stride) as usize
    };
    assert!(k == 0 || last(&a, m, k) < a.data.len());
    assert!(k == 0 || last(&b, k, n) < b.data.len());
    assert!((m - 1) * ldc + n <= c.len());
    // SAFETY: the asserts above bound every index touched through the
    // pointers; `c` does not alias `a` or `b` because it is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                out.data[i * b.cols + j] = (0..a.cols)
                    .map(|k| a.data[i * a.cols + k] * b.data[k * b.cols + j])
                    .sum();
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive() {
        let a = Mat::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let b = Mat::from_vec(4, 5, (0..20).map(|i| (i as f64 * 0.3).cos()).collect()).unwrap();
        let got = a.matmul(&b);
        let want = naive(&a, &b);
        for (x, y) in got.data.iter().zip(&want.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_view() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        // aᵀ a
        let mut c = vec![0.0; 9];
        gemm(
            3,
            2,
            3,
            View::transposed(&a.data, 3),
            View::row_major(&a.data, 3),
            &mut c,
            3,
            0.0,
        );
        let want = naive(&a.transpose(), &a);
        assert_eq!(c, want.data);
    }
}
