//! Raw slice kernels shared by the tape's forward and backward passes.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, ShapeBuilder};

use super::Real;

/// `c = alpha * op(a) * op(b) + beta * c` where `op` optionally transposes.
/// `a` is stored `m x k` (or `k x m` when `trans_a`), `b` is `k x n`
/// (or `n x k` when `trans_b`), `c` is `m x n`. All row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], trans_a: bool, b: &[T], trans_b: bool, beta: T, c: &mut [T]) {
    let av = if trans_a {
        ArrayView2::from_shape((m, k).strides((1, m)), a).expect("gemm a")
    } else {
        ArrayView2::from_shape((m, k), a).expect("gemm a")
    };
    let bv = if trans_b {
        ArrayView2::from_shape((k, n).strides((1, k)), b).expect("gemm b")
    } else {
        ArrayView2::from_shape((k, n), b).expect("gemm b")
    };
    let mut cv = ArrayViewMut2::from_shape((m, n), c).expect("gemm c");
    general_mat_mul(T::one(), &av, &bv, beta, &mut cv);
}

/// Unfolds one `[c_in, len]` signal into a `[c_in * kernel, out_len]`
/// column matrix with implicit zero padding.
pub(crate) fn im2col<T: Real>(
    x: &[T],
    c_in: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_len: usize,
    cols: &mut [T],
) {
    for ci in 0..c_in {
        let row_x = &x[ci * len..(ci + 1) * len];
        for k in 0..kernel {
            let row = &mut cols[(ci * kernel + k) * out_len..(ci * kernel + k + 1) * out_len];
            for (m, slot) in row.iter_mut().enumerate() {
                let pos = (m * stride + k) as isize - padding as isize;
                *slot = if pos >= 0 && (pos as usize) < len { row_x[pos as usize] } else { T::zero() };
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the signal.
pub(crate) fn col2im<T: Real>(
    cols: &[T],
    c_in: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_len: usize,
    dx: &mut [T],
) {
    for ci in 0..c_in {
        let row_dx = &mut dx[ci * len..(ci + 1) * len];
        for k in 0..kernel {
            let row = &cols[(ci * kernel + k) * out_len..(ci * kernel + k + 1) * out_len];
            for (m, &g) in row.iter().enumerate() {
                let pos = (m * stride + k) as isize - padding as isize;
                if pos >= 0 && (pos as usize) < len {
                    row_dx[pos as usize] += g;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_len: usize,
}

pub(crate) fn conv_forward<T: Real>(g: ConvGeom, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let ck = g.c_in * g.kernel;
    let mut out = vec![T::zero(); g.batch * g.c_out * g.out_len];
    let mut cols = vec![T::zero(); ck * g.out_len];
    for bi in 0..g.batch {
        let xb = &x[bi * g.c_in * g.len..(bi + 1) * g.c_in * g.len];
        im2col(xb, g.c_in, g.len, g.kernel, g.stride, g.padding, g.out_len, &mut cols);
        let ob = &mut out[bi * g.c_out * g.out_len..(bi + 1) * g.c_out * g.out_len];
        for (co, row) in ob.chunks_mut(g.out_len).enumerate() {
            row.fill(b[co]);
        }
        gemm(g.c_out, ck, g.out_len, w, false, &cols, false, T::one(), ob);
    }
    out
}

/// Accumulates gradients of a convolution into `dx`, `dw` and `db`
/// (each optional so frozen inputs cost nothing).
pub(crate) fn conv_backward<T: Real>(
    g: ConvGeom,
    x: &[T],
    w: &[T],
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let ck = g.c_in * g.kernel;
    let mut cols = vec![T::zero(); ck * g.out_len];
    let mut dcols = vec![T::zero(); ck * g.out_len];
    let mut db_acc = vec![0.0f64; g.c_out];
    for bi in 0..g.batch {
        let db_b = &dout[bi * g.c_out * g.out_len..(bi + 1) * g.c_out * g.out_len];
        if let Some(dw) = dw.as_deref_mut() {
            let xb = &x[bi * g.c_in * g.len..(bi + 1) * g.c_in * g.len];
            im2col(xb, g.c_in, g.len, g.kernel, g.stride, g.padding, g.out_len, &mut cols);
            // dW += dOut_b * cols^T
            gemm(g.c_out, g.out_len, ck, db_b, false, &cols, true, T::one(), dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dCols = W^T * dOut_b
            gemm(ck, g.c_out, g.out_len, w, true, db_b, false, T::zero(), &mut dcols);
            let dxb = &mut dx[bi * g.c_in * g.len..(bi + 1) * g.c_in * g.len];
            col2im(&dcols, g.c_in, g.len, g.kernel, g.stride, g.padding, g.out_len, dxb);
        }
        if db.is_some() {
            for (co, row) in db_b.chunks(g.out_len).enumerate() {
                db_acc[co] += row.iter().map(|v| v.as_f64()).sum::<f64>();
            }
        }
    }
    if let Some(db) = db.as_deref_mut() {
        for (d, a) in db.iter_mut().zip(db_acc) {
            *d += T::from_f64(a);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_handles_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let x: Vec<f64> = (0..10).map(|v| v as f64 * 0.5 - 1.0).collect();
        let (c_in, len, kernel, stride, padding) = (2, 5, 3, 2, 1);
        let out_len = (len + 2 * padding - kernel) / stride + 1;
        let mut cols = vec![0.0; c_in * kernel * out_len];
        im2col(&x, c_in, len, kernel, stride, padding, out_len, &mut cols);
        let y: Vec<f64> = (0..cols.len()).map(|v| (v as f64).sin()).collect();
        let mut back = vec![0.0; x.len()];
        col2im(&y, c_in, len, kernel, stride, padding, out_len, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
