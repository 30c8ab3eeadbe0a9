//! Dense numeric kernels shared by the forward and backward passes. All
//! matrices are row-major slices.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the model. Training and checkpoints use
/// `f32`; gradient checking runs the same code in `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Sum + Send + Sync + 'static
{
    /// Raw gemm: C <- alpha * A * B + beta * C.
    ///
    /// # Safety
    /// Pointers and strides must address valid, non-aliasing memory for the
    /// given shapes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A strided read-only matrix view over a slice.
#[derive(Clone, Copy)]
pub struct View<'a, F> {
    pub data: &'a [F],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, F> View<'a, F> {
    /// Row-major `rows x cols` matrix.
    pub fn rm(data: &'a [F], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// Transpose without copying.
    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    /// Column block `[start, start + width)` of the view.
    pub fn cols(self, start: usize, width: usize) -> Self {
        assert!(start + width <= self.cols);
        Self {
            data: &self.data[start * self.cs..],
            rows: self.rows,
            cols: width,
            rs: self.rs,
            cs: self.cs,
        }
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// C = A * B (or C += A * B when `accumulate`), where C is written with the
/// given row stride and unit column stride starting at `c[0]`.
pub fn gemm<F: Real>(a: View<'_, F>, b: View<'_, F>, c: &mut [F], rsc: usize, accumulate: bool) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.data.len() > a.last_index() || k == 0);
    assert!(b.data.len() > b.last_index() || k == 0);
    assert!(c.len() > (m - 1) * rsc + (n - 1));
    assert!(rsc >= n);
    let beta = if accumulate { F::one() } else { F::zero() };
    // SAFETY: bounds of every operand were checked above and `c` is a unique
    // borrow with non-overlapping rows (rsc >= n).
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            F::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        )
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm. Writes normalized rows to `xhat`, reciprocal standard
/// deviations to `rstd` and the affine output to `out`.
pub fn layer_norm<F: Real>(
    x: &[F],
    gain: &[F],
    bias: &[F],
    width: usize,
    xhat: &mut [F],
    rstd: &mut [F],
    out: &mut [F],
) {
    let inv_w = F::one() / F::of(width as f64);
    let eps = F::of(LN_EPS);
    for (r, row) in x.chunks_exact(width).enumerate() {
        let mean = row.iter().copied().sum::<F>() * inv_w;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_w;
        let rs = F::one() / (var + eps).sqrt();
        rstd[r] = rs;
        let base = r * width;
        for j in 0..width {
            let h = (row[j] - mean) * rs;
            xhat[base + j] = h;
            out[base + j] = h * gain[j] + bias[j];
        }
    }
}

/// Backward of [`layer_norm`]; accumulates into `dx`, `dgain`, `dbias`.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<F: Real>(
    dout: &[F],
    xhat: &[F],
    rstd: &[F],
    gain: &[F],
    width: usize,
    dx: &mut [F],
    dgain: &mut [F],
    dbias: &mut [F],
) {
    let inv_w = F::one() / F::of(width as f64);
    for (r, drow) in dout.chunks_exact(width).enumerate() {
        let base = r * width;
        let hrow = &xhat[base..base + width];
        let mut mean_dy = F::zero();
        let mut mean_dy_h = F::zero();
        for j in 0..width {
            let dy = drow[j] * gain[j];
            mean_dy = mean_dy + dy;
            mean_dy_h = mean_dy_h + dy * hrow[j];
            dgain[j] = dgain[j] + drow[j] * hrow[j];
            dbias[j] = dbias[j] + drow[j];
        }
        mean_dy = mean_dy * inv_w;
        mean_dy_h = mean_dy_h * inv_w;
        for j in 0..width {
            let dy = drow[j] * gain[j];
            dx[base + j] = dx[base + j] + rstd[r] * (dy - mean_dy - hrow[j] * mean_dy_h);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<F: Real>(x: F) -> F {
    let half = F::of(0.5);
    let u = F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x);
    half * x * (F::one() + u.tanh())
}

pub fn gelu_grad<F: Real>(x: F) -> F {
    let half = F::of(0.5);
    let u = F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x);
    let th = u.tanh();
    let du = F::of(GELU_C) * (F::one() + F::of(3.0 * GELU_A) * x * x);
    half * (F::one() + th) + half * x * (F::one() - th * th) * du
}

/// In-place softmax over the first `len` entries of `row`; entries past
/// `len` are set to zero.
pub fn softmax_prefix<F: Real>(row: &mut [F], len: usize) {
    let max = row[..len]
        .iter()
        .copied()
        .fold(F::neg_infinity(), |m, v| if v > m { v } else { m });
    let mut sum = F::zero();
    for v in &mut row[..len] {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = F::one() / sum;
    for v in &mut row[..len] {
        *v = *v * inv;
    }
    for v in &mut row[len..] {
        *v = F::zero();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5 - 1.0).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(View::rm(&a, 2, 3), View::rm(&b, 3, 4), &mut c, 4, false);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], want);
            }
        }
        // (A^T)^T B == A B through the transposed view
        let at: Vec<f64> = vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0];
        let mut c2 = vec![0.0; 8];
        gemm(
            View::rm(&at, 3, 2).t(),
            View::rm(&b, 3, 4),
            &mut c2,
            4,
            false,
        );
        assert_eq!(c, c2);
        gemm(
            View::rm(&at, 3, 2).t(),
            View::rm(&b, 3, 4),
            &mut c2,
            4,
            true,
        );
        assert!(c.iter().zip(&c2).all(|(x, y)| 2.0 * x == *y));
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_prefix_masks_tail() {
        let mut row = vec![1.0f64, 2.0, 3.0, 100.0];
        softmax_prefix(&mut row, 3);
        assert!((row[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(row[3], 0.0);
        assert!(row[2] > row[1] && row[1] > row[0]);
    }
}
