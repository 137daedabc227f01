//! Scalar abstraction for the analytic core.
//!
//! The closed-form pieces (rate function, fluid paths, Euler-Lagrange
//! minimizer) are written once against [`Real`] and instantiated for `f32`
//! and `f64`. The simulator and the discretized oracle are `f64` only.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the literal is unrepresentable,
    /// which cannot happen for the finite constants used in this crate.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn two() -> Self {
        Self::one() + Self::one()
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    /// `x - 1 + e^{-x}`, accurate for small `x`.
    fn x_minus_one_plus_exp_neg(self) -> Self {
        if self.abs() < Self::lit(0.1) {
            // x^2/2 - x^3/6 + x^4/24 - ...
            let mut term = self * self * Self::half();
            let mut sum = term;
            for k in 3..20 {
                term = -term * self / Self::lit(k as f64);
                sum = sum + term;
                if term.abs() <= Self::epsilon() * sum.abs() {
                    break;
                }
            }
            sum
        } else {
            self - Self::one() + (-self).exp()
        }
    }

    /// `l - (e^l - 1)`, i.e. `log z - z + 1` written in terms of `l = log z`.
    fn log_minus_expm1(self) -> Self {
        if self.abs() < Self::lit(0.1) {
            // -(l^2/2 + l^3/6 + ...)
            let mut term = self * self * Self::half();
            let mut sum = term;
            for k in 3..20 {
                term = term * self / Self::lit(k as f64);
                sum = sum + term;
                if term.abs() <= Self::epsilon() * sum.abs() {
                    break;
                }
            }
            -sum
        } else {
            self - self.exp_m1()
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_branches_match_direct_formulas() {
        for &x in &[0.099_f64, 0.05, 1e-3, -0.05] {
            let direct = x - 1.0 + (-x).exp();
            assert!((x.x_minus_one_plus_exp_neg() - direct).abs() < 1e-15);
            let direct = x - x.exp_m1();
            assert!((x.log_minus_expm1() - direct).abs() < 1e-15);
        }
        assert_eq!(0.0_f64.x_minus_one_plus_exp_neg(), 0.0);
        assert_eq!(0.0_f64.log_minus_expm1(), 0.0);
        let tiny = 1e-9_f64;
        assert!((tiny.x_minus_one_plus_exp_neg() / (tiny * tiny / 2.0) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn f32_instantiation() {
        let x = 0.01_f32;
        assert!((x.x_minus_one_plus_exp_neg() - 4.983_375e-5).abs() < 1e-9);
    }
}
