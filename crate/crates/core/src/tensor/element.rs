use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Row/column strides of a matrix operand, in elements.
#[derive(Clone, Copy, Debug)]
pub struct MatLayout {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl MatLayout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        MatLayout {
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `rows × cols` matrix, viewed in place.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        MatLayout {
            rows: cols,
            cols: rows,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        ((self.rows - 1) as isize * self.row_stride + (self.cols - 1) as isize * self.col_stride) as usize + 1
    }
}

pub trait Element:
    Float + Default + Debug + Display + AddAssign + SubAssign + MulAssign + Sum + Send + Sync + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// `c = a·b + (accumulate ? c : 0)` on strided matrices.
    fn gemm_raw(a: &[Self], la: MatLayout, b: &[Self], lb: MatLayout, c: &mut [Self], lc: MatLayout, accumulate: bool);
}

fn check_gemm(la: MatLayout, lb: MatLayout, lc: MatLayout, a: usize, b: usize, c: usize) {
    assert_eq!(la.cols, lb.rows, "gemm inner dimension");
    assert_eq!((la.rows, lb.cols), (lc.rows, lc.cols), "gemm output dimension");
    assert!(
        la.span() <= a && lb.span() <= b && lc.span() <= c,
        "gemm operand out of bounds"
    );
    assert!(lc.row_stride >= 0 && lc.col_stride >= 0);
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    fn of(v: f64) -> Self {
        v as f32
    }

    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    fn gemm_raw(a: &[Self], la: MatLayout, b: &[Self], lb: MatLayout, c: &mut [Self], lc: MatLayout, accumulate: bool) {
        check_gemm(la, lb, lc, a.len(), b.len(), c.len());
        if la.rows == 0 || lb.cols == 0 {
            return;
        }
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: check_gemm verified every addressed element lies inside the slices.
        unsafe {
            matrixmultiply::sgemm(
                la.rows,
                la.cols,
                lb.cols,
                1.0,
                a.as_ptr(),
                la.row_stride,
                la.col_stride,
                b.as_ptr(),
                lb.row_stride,
                lb.col_stride,
                beta,
                c.as_mut_ptr(),
                lc.row_stride,
                lc.col_stride,
            );
        }
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    fn of(v: f64) -> Self {
        v
    }

    fn to_f64_lossy(self) -> f64 {
        self
    }

    fn gemm_raw(a: &[Self], la: MatLayout, b: &[Self], lb: MatLayout, c: &mut [Self], lc: MatLayout, accumulate: bool) {
        check_gemm(la, lb, lc, a.len(), b.len(), c.len());
        if la.rows == 0 || lb.cols == 0 {
            return;
        }
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: check_gemm verified every addressed element lies inside the slices.
        unsafe {
            matrixmultiply::dgemm(
                la.rows,
                la.cols,
                lb.cols,
                1.0,
                a.as_ptr(),
                la.row_stride,
                la.col_stride,
                b.as_ptr(),
                lb.row_stride,
                lb.col_stride,
                beta,
                c.as_mut_ptr(),
                lc.row_stride,
                lc.col_stride,
            );
        }
    }
}
