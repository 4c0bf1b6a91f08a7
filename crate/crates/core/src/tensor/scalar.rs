//! Element types the tensor stack is generic over.
//!
//! Training runs in `f32`; gradient certification runs the identical code in
//! `f64`, where central finite differences are quiet enough to resolve 1e-4
//! relative error.

use std::cell::RefCell;
use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use super::tape::Tape;

pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;

    /// Row-major C(m,n) = alpha * A(m,k) * B(k,n) + beta * C, with explicit
    /// strides so transposed views cost nothing.
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

    /// Access to this thread's recording tape for this element type.
    /// Thread-locals cannot be generic, so each scalar carries its own.
    fn with_tape<R>(f: impl FnOnce(&mut Option<Tape<Self>>) -> R) -> R;
}

thread_local! {
    static TAPE_F32: RefCell<Option<Tape<f32>>> = const { RefCell::new(None) };
    static TAPE_F64: RefCell<Option<Tape<f64>>> = const { RefCell::new(None) };
}

macro_rules! impl_scalar {
    ($ty:ty, $gemm:path, $tls:ident) => {
        impl Scalar for $ty {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $ty
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline]
            fn maximum(self, other: Self) -> Self {
                self.max(other)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$ty>::is_finite(self)
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
                if m == 0 || k == 0 || n == 0 {
                    return;
                }
                // SAFETY: callers pass buffers sized for the given strides;
                // debug builds double-check the extents.
                debug_assert!(gemm_extent(m, k, rsa, csa) <= a.len());
                debug_assert!(gemm_extent(k, n, rsb, csb) <= b.len());
                debug_assert!(gemm_extent(m, n, rsc, csc) <= c.len());
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

            fn with_tape<R>(f: impl FnOnce(&mut Option<Tape<Self>>) -> R) -> R {
                $tls.with(|cell| f(&mut cell.borrow_mut()))
            }
        }
    };
}

fn gemm_extent(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    last as usize + 1
}

impl_scalar!(f32, matrixmultiply::sgemm, TAPE_F32);
impl_scalar!(f64, matrixmultiply::dgemm, TAPE_F64);
