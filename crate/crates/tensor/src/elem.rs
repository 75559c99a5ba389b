use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};

/// Floating point element type usable in an [`Array`](crate::Array).
///
/// Implemented for `f32` (training) and `f64` (gradient checking).
pub trait Elem:
    Float + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Short dtype name used in checkpoints.
    const DTYPE: &'static str;

    fn of(v: f64) -> Self;

    fn to_f64(self) -> f64;

    /// `C = alpha * A * B + beta * C` with arbitrary strides.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs.unsigned_abs() + (cols - 1) * cs.unsigned_abs() + 1
}

macro_rules! impl_elem {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Elem for $t {
            const DTYPE: &'static str = $name;

            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                assert!(a.len() >= span(m, k, rsa, csa), "gemm: lhs buffer too small");
                assert!(b.len() >= span(k, n, rsb, csb), "gemm: rhs buffer too small");
                assert!(c.len() >= span(m, n, rsc, csc), "gemm: output buffer too small");
                // SAFETY: the asserts above bound every index the kernel touches.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_elem!(f32, "F32", matrixmultiply::sgemm);
impl_elem!(f64, "F64", matrixmultiply::dgemm);
