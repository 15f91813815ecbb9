//! Scalar abstraction: the numeric element type of every tensor in the crate.
//!
//! All core math is generic over [`Scalar`] so the same code runs at `f32`
//! or `f64` precision. The bounds cover what the samplers need: gamma,
//! normal and uniform variates of the scalar type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use rand::distr::uniform::SampleUniform;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Floating-point scalar: `f32` or `f64`.
///
/// Bundles the draw primitives the samplers need so generic code does not
/// have to thread `Distribution<Self>` bounds everywhere.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + Sum
    + SampleUniform
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// One standard-normal draw.
    fn draw_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One Gamma(shape, 1) draw. Exact rejection sampling (with the usual
    /// boost for shape < 1) via `rand_distr`.
    fn draw_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self;

    /// Convert an `f64` literal, panicking only on values a float cannot
    /// represent at all (never the case for the constants used here).
    #[inline]
    fn real(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable as scalar")
    }

    #[inline]
    fn half() -> Self {
        Self::real(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::real(2.0)
    }

    #[inline]
    fn four() -> Self {
        Self::real(4.0)
    }

    #[inline]
    fn pi() -> Self {
        Self::real(std::f64::consts::PI)
    }

    #[inline]
    fn ln_2() -> Self {
        Self::real(std::f64::consts::LN_2)
    }

    /// Logistic sigmoid σ(x) = 1/(1+e^{−x}).
    #[inline]
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }

    /// Numerically stable softplus ln(1+e^x), the bridge to
    /// log σ(x) = −softplus(−x).
    #[inline]
    fn softplus(self) -> Self {
        if self > Self::zero() {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    /// log σ(x), stable for large |x|.
    #[inline]
    fn log_sigmoid(self) -> Self {
        -(-self).softplus()
    }
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn draw_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            #[inline]
            fn draw_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self {
                Gamma::<$t>::new(shape, 1.0).expect("positive gamma shape").sample(rng)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);
