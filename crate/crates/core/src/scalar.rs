use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar used by the numerical core: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable `log(sum(exp(x)))`; `-inf` entries are ignored.
pub fn log_sum_exp<T: Scalar>(xs: impl IntoIterator<Item = T> + Clone) -> T {
    let max = xs
        .clone()
        .into_iter()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = xs.into_iter().map(|x| (x - max).exp()).sum();
    max + s.ln()
}

/// `p * ln(x)` with the convention `0 * ln(0) = 0`.
#[inline]
pub(crate) fn xlogy<T: Scalar>(p: T, x: T) -> T {
    if p == T::zero() {
        T::zero()
    } else {
        p * x.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_neg_infinity() {
        let v = [f64::NEG_INFINITY, 0.0, 0.0];
        assert!((log_sum_exp(v.iter().copied()) - 2f64.ln()).abs() < 1e-15);
        let all = [f64::NEG_INFINITY; 2];
        assert_eq!(log_sum_exp(all.iter().copied()), f64::NEG_INFINITY);
    }

    #[test]
    fn log_sum_exp_large_inputs() {
        let v = [1000.0f64, 1000.0];
        assert!((log_sum_exp(v.iter().copied()) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
