//! Floating-point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use ndarray::NdFloat;
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the estimators and tests are generic over.
///
/// Implemented for `f32` and `f64`. The solver's default stopping tolerance
/// depends on the precision, so each type carries its own value.
pub trait Scalar:
    NdFloat + Float + FromPrimitive + ToPrimitive + Sum + FromStr + Debug + Display + Default
{
    /// Relative Frank-Wolfe duality-gap tolerance used by default.
    fn default_gap_tol() -> Self;

    /// Lossy conversion from `f64`; used for literal constants.
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite literal")
    }

    /// Conversion from a count.
    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count fits in float")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn default_gap_tol() -> Self {
        1e-10
    }
}

impl Scalar for f32 {
    fn default_gap_tol() -> Self {
        1e-4
    }
}
