//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Real scalar the simulator is generic over (`f32` and `f64`).
///
/// `GEOM_TOL` is the relative tolerance used for geometric predicates
/// (strip boundaries, column membership, recursion cut-offs).
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssign + Default + Debug + Display + Send + Sync + 'static
{
    const GEOM_TOL: f64;

    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 converts to every Real")
    }

    fn of_usize(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize converts to every Real")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    fn geom_tol() -> Self {
        Self::of(Self::GEOM_TOL)
    }
}

impl Real for f32 {
    const GEOM_TOL: f64 = 1e-5;
}

impl Real for f64 {
    const GEOM_TOL: f64 = 1e-9;
}

/// Hashable identity of a float (exact bit pattern up to the sign of zero).
pub(crate) fn float_key<T: Real>(x: T) -> (u64, i16, i8) {
    if x == T::zero() {
        return (0, 0, 0);
    }
    x.integer_decode()
}
