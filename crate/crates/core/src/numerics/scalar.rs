use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the engine. Training runs in `f32`; `f64`
/// exists for tight gradient checks.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static {
    /// Machine epsilon scaled finite-difference step for a coordinate of magnitude `x`.
    fn fd_step(x: Self) -> Self;

    /// `c = a · b + beta · c` for row-major `a: m×k`, `b: k×n` with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

impl Scalar for f32 {
    fn fd_step(x: f32) -> f32 {
        1e-3 * x.abs().max(1.0)
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[f32], rsa: isize, csa: isize, b: &[f32], rsb: isize, csb: isize, beta: f32, c: &mut [f32]) {
        if m == 0 || n == 0 {
            return;
        }
        assert!(c.len() >= m * n);
        // SAFETY: the caller's strides describe buffers of at least the
        // indexed extent; every call site derives them from checked shapes.
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

impl Scalar for f64 {
    fn fd_step(_x: f64) -> f64 {
        1e-6
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, beta: f64, c: &mut [f64]) {
        if m == 0 || n == 0 {
            return;
        }
        assert!(c.len() >= m * n);
        // SAFETY: see the f32 implementation.
        unsafe {
            matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
        }
    }
}
