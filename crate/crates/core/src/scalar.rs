use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point type the numerical code is generic over.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal. Never fails for `f32`/`f64`.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    fn half() -> Self {
        Self::lit(0.5)
    }

    /// Fraction `num / den`; `den` must be non-zero.
    fn ratio(num: usize, den: usize) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Log-odds `ln(p / (1 - p))`; infinite at the endpoints.
pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// Sum with compensated (Neumaier) accumulation.
pub fn stable_sum<T: Scalar, I: IntoIterator<Item = T>>(values: I) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp = comp + ((sum - t) + v);
        } else {
            comp = comp + ((v - t) + sum);
        }
        sum = t;
    }
    sum + comp
}
