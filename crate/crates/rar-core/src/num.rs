//! Scalar abstraction for the whole crate.
//!
//! All linear algebra is generic over [`Real`], which is `nalgebra`'s
//! `RealField` plus conversion from `f64` literals and a few
//! precision-dependent constants. The crate root exports concrete `f64`
//! aliases; `f32` works too but with the looser validation tolerances
//! returned by its trait impl.

use nalgebra::RealField;
use num_traits::FromPrimitive;

/// Floating-point scalar usable for manifold and model arithmetic.
pub trait Real: RealField + FromPrimitive + Copy + Default {
    /// Machine epsilon of the concrete type.
    fn mach_eps() -> Self;

    /// Tolerance for the orthonormality residual `‖XᵀX − I‖_F` of a point.
    fn point_tol() -> Self;

    /// Tolerance factor for the tangency residual of a tangent vector.
    fn tangent_tol() -> Self;

    /// Exact bit pattern, widened to `u64`; memoization keys.
    fn to_bits_u64(self) -> u64;
}

impl Real for f64 {
    fn mach_eps() -> Self {
        f64::EPSILON
    }
    fn point_tol() -> Self {
        1e-10
    }
    fn tangent_tol() -> Self {
        1e-8
    }
    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }
}

impl Real for f32 {
    fn mach_eps() -> Self {
        f32::EPSILON
    }
    fn point_tol() -> Self {
        1e-4
    }
    fn tangent_tol() -> Self {
        1e-3
    }
    fn to_bits_u64(self) -> u64 {
        self.to_bits() as u64
    }
}

/// Converts an `f64` constant to the working scalar type.
#[inline]
pub fn real<S: Real>(x: f64) -> S {
    S::from_f64(x).expect("constant not representable in scalar type")
}

/// `max` that avoids the `RealField`/`Ord` ambiguity for generic scalars.
#[inline]
pub fn smax<S: Real>(a: S, b: S) -> S {
    if a > b {
        a
    } else {
        b
    }
}

#[inline]
pub fn smin<S: Real>(a: S, b: S) -> S {
    if a < b {
        a
    } else {
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversion_round_trips() {
        assert_eq!(real::<f64>(0.25), 0.25);
        assert_eq!(real::<f32>(0.25), 0.25f32);
    }

    #[test]
    fn max_min() {
        assert_eq!(smax(1.0, 2.0), 2.0);
        assert_eq!(smin(1.0, 2.0), 1.0);
    }
}
