//! Scalar abstraction shared by every numeric module.
//!
//! All math in this crate is written against [`Scalar`]; training runs use
//! `f64` (see the aliases at the crate root), `f32` is supported for
//! inference and experimentation.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Tolerance used when validating that a distribution sums to one.
    const PROB_TOLERANCE: f64;

    /// Floor applied inside logarithms.
    const LOG_FLOOR: f64;

    /// Row-major `c = a · b` for `a: [m, k]`, `b: [k, n]`.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]);

    /// Row-major `c = a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    fn gemm_bt(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]);

    /// Row-major `c = aᵀ · b` for `a: [k, m]`, `b: [k, n]`.
    fn gemm_at(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]);

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path, $tol:expr, $floor:expr) => {
        impl Scalar for $t {
            const PROB_TOLERANCE: f64 = $tol;
            const LOG_FLOOR: f64 = $floor;

            fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
                debug_assert_eq!(a.len(), m * k);
                debug_assert_eq!(b.len(), k * n);
                debug_assert_eq!(c.len(), m * n);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: slice lengths checked above; strides describe dense row-major storage.
                unsafe {
                    $kernel(
                        m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0,
                        c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }

            fn gemm_bt(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
                debug_assert_eq!(a.len(), m * k);
                debug_assert_eq!(b.len(), n * k);
                debug_assert_eq!(c.len(), m * n);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: b is [n, k] row-major, read as a [k, n] view with swapped strides.
                unsafe {
                    $kernel(
                        m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), 1, k as isize, 0.0,
                        c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }

            fn gemm_at(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
                debug_assert_eq!(a.len(), k * m);
                debug_assert_eq!(b.len(), k * n);
                debug_assert_eq!(c.len(), m * n);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: a is [k, m] row-major, read as a [m, k] view with swapped strides.
                unsafe {
                    $kernel(
                        m, k, n, 1.0, a.as_ptr(), 1, m as isize, b.as_ptr(), n as isize, 1, 0.0,
                        c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f64, matrixmultiply::dgemm, 1e-9, 1e-12);
impl_scalar!(f32, matrixmultiply::sgemm, 1e-5, 1e-12);
