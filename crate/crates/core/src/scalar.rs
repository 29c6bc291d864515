//! Scalar abstraction for the numeric core.
//!
//! Everything downstream is generic over [`Real`], which extends
//! `num_traits::Float` with the special functions and sampling hooks the
//! estimators need. `f32` and `f64` are the supported instantiations; the
//! aliases at the crate root fix `f64` as the default compute type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Natural log of the gamma function (positive arguments only here).
    fn lgamma(self) -> Self;

    /// One standard-normal draw.
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One draw from Gamma(shape, scale).
    fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: Self, scale: Self) -> Self;

    /// One unit-mean exponential draw.
    fn exp_draw<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossless-enough conversion for literals and counts. Panics only when
    /// the constant cannot be represented at all, which is a programming
    /// error at the call site.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable in scalar type")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Real for f64 {
    #[inline]
    fn lgamma(self) -> Self {
        libm::lgamma(self)
    }

    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: Self, scale: Self) -> Self {
        Gamma::new(shape, scale)
            .expect("gamma parameters must be positive and finite")
            .sample(rng)
    }

    fn exp_draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Exp1.sample(rng)
    }
}

impl Real for f32 {
    #[inline]
    fn lgamma(self) -> Self {
        libm::lgammaf(self)
    }

    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: Self, scale: Self) -> Self {
        Gamma::new(shape, scale)
            .expect("gamma parameters must be positive and finite")
            .sample(rng)
    }

    fn exp_draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Exp1.sample(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lgamma_matches_factorials() {
        // Γ(n) = (n-1)!
        let mut fact = 1.0f64;
        for n in 1..10 {
            let lg = (n as f64).lgamma();
            assert!((lg - fact.ln()).abs() < 1e-12, "n={n}");
            fact *= n as f64;
        }
        // Γ(1/2) = √π
        assert!((0.5f64.lgamma() - f64::PI().sqrt().ln()).abs() < 1e-12);
        assert!((0.5f32.lgamma() - (f32::PI().sqrt().ln())).abs() < 1e-5);
    }

    #[test]
    fn sampling_hooks_have_stated_moments() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let mut sum = 0.0f64;
        let mut sum_sq = 0.0f64;
        for _ in 0..n {
            let x = f64::std_normal(&mut rng);
            sum += x;
            sum_sq += x * x;
        }
        assert!((sum / n as f64).abs() < 0.01);
        assert!((sum_sq / n as f64 - 1.0).abs() < 0.02);

        let mut sum_g = 0.0f64;
        for _ in 0..n {
            sum_g += f64::gamma_draw(&mut rng, 2.5, 0.4); // mean = shape * scale = 1
        }
        assert!((sum_g / n as f64 - 1.0).abs() < 0.02);

        let mut sum_e = 0.0f64;
        for _ in 0..n {
            sum_e += f64::exp_draw(&mut rng);
        }
        assert!((sum_e / n as f64 - 1.0).abs() < 0.02);
    }
}
