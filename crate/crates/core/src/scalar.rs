//! Scalar abstraction for the floating-point reference math.
//!
//! All kernels are generic over [`Scalar`] so the same code runs at f32
//! (the reference precision, see the crate-root aliases) and f64. The trait
//! adds the few operations `num_traits::Float` lacks: ties-to-even rounding,
//! a ulp probe, and cheap f64 widening for accumulators.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Round to nearest, ties to even.
    fn round_ties_even(self) -> Self;

    /// Distance to the next representable value above `|self|`.
    fn ulp(self) -> Self;

    fn widen(self) -> f64;

    /// Narrowing conversion from f64 (rounds to nearest).
    fn narrow(v: f64) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn round_ties_even(self) -> Self {
                <$t>::round_ties_even(self)
            }

            fn ulp(self) -> Self {
                let a = self.abs();
                if a == <$t>::INFINITY {
                    return <$t>::INFINITY;
                }
                <$t>::from_bits(a.to_bits() + 1) - a
            }

            fn widen(self) -> f64 {
                self as f64
            }

            fn narrow(v: f64) -> Self {
                v as $t
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_round_to_even() {
        assert_eq!(Scalar::round_ties_even(0.5f32), 0.0);
        assert_eq!(Scalar::round_ties_even(1.5f32), 2.0);
        assert_eq!(Scalar::round_ties_even(2.5f32), 2.0);
        assert_eq!(Scalar::round_ties_even(-7.5f32), -8.0);
        assert_eq!(Scalar::round_ties_even(-8.5f64), -8.0);
    }

    #[test]
    fn ulp_is_positive_and_tight() {
        let x = 1.0f32;
        assert_eq!(x.ulp(), f32::EPSILON);
        assert!(0.0f32.ulp() > 0.0);
        let y = 3.7e8f64;
        assert!(y + y.ulp() > y);
    }
}
