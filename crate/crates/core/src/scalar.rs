//! Scalar abstraction shared by every numeric routine in the crate.

use nalgebra as na;
use num_traits as nt;

/// Floating point type the models are generic over (`f32` or `f64`).
///
/// Bridges `nalgebra::RealField`, which supplies the decompositions, with the
/// `num-traits` conversion traits used to move between the model scalar and
/// the `f64` reporting type.
pub trait Real:
    na::RealField + na::Scalar + Copy + nt::FloatConst + nt::FromPrimitive + nt::ToPrimitive + Send + Sync
{
    /// Converts an `f64` literal, rounding when `Self` is narrower.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as nt::FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn count(n: usize) -> Self {
        Self::lit(n as f64)
    }

    #[inline]
    fn from_spin(s: i8) -> Self {
        if s >= 0 {
            Self::one()
        } else {
            -Self::one()
        }
    }

    #[inline]
    fn as_f64(self) -> f64 {
        nt::ToPrimitive::to_f64(&self).expect("finite scalar converts to f64")
    }

    /// Relative tolerance that is meaningful for this precision.
    fn default_epsilon_scale() -> Self;
}

impl Real for f32 {
    fn default_epsilon_scale() -> Self {
        1e-5
    }
}

impl Real for f64 {
    fn default_epsilon_scale() -> Self {
        1e-12
    }
}

/// Sign with the tie at zero resolved to `+1`.
#[inline]
pub fn sgn_plus<T: Real>(x: T) -> i8 {
    if x >= T::zero() {
        1
    } else {
        -1
    }
}

/// `ln cosh(x)` without overflow for large `|x|`.
#[inline]
pub fn ln_cosh<T: Real>(x: T) -> T {
    let a = x.abs();
    let two = T::lit(2.0);
    a + (-two * a).exp().ln_1p() - T::ln_2()
}

/// `ln Σ exp(x_i)` with max subtraction. Returns `-inf` for an empty slice.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let Some(&first) = xs.first() else {
        return T::lit(f64::NEG_INFINITY);
    };
    let max = xs.iter().copied().fold(first, |m, x| if x > m { x } else { m });
    if max == T::lit(f64::NEG_INFINITY) || max == T::lit(f64::INFINITY) {
        return max;
    }
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp());
    max + sum.ln()
}

/// Numerically stable `ln(e^a + e^b)`.
#[inline]
pub fn log_add_exp<T: Real>(a: T, b: T) -> T {
    let ninf = T::lit(f64::NEG_INFINITY);
    if a == ninf {
        return b;
    }
    if b == ninf {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_cosh_matches_direct_formula() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.25, 1.0, 7.5] {
            assert!((ln_cosh(x) - x.cosh().ln()).abs() < 1e-14);
        }
        // cosh overflows here; the stable form does not
        assert!((ln_cosh(1000.0f64) - (1000.0 - std::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(ln_cosh(0.0f32), 0.0);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        let v = [1000.0f64, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
        assert!((log_add_exp(0.0f64, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 3.0), 3.0);
    }

    #[test]
    fn sign_tie_goes_positive() {
        assert_eq!(sgn_plus(0.0f64), 1);
        assert_eq!(sgn_plus(-0.0f64), 1);
        assert_eq!(sgn_plus(-1e-300f64), -1);
    }
}
