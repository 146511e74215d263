use num_traits::{Float, FromPrimitive, Num, Signed};
use std::fmt::Debug;
use std::iter::Sum;

/// Floating-point scalar for the linear-algebra and quadrature kernels.
pub trait Scalar: Float + FromPrimitive + Sum + Send + Sync + Debug + 'static {
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Ordered field used for exact forward evaluation of polynomial and
/// piecewise-linear maps (e.g. `Ratio<i128>`).
pub trait Field: Num + Signed + PartialOrd + Clone + FromPrimitive + Debug {}

impl<T> Field for T where T: Num + Signed + PartialOrd + Clone + FromPrimitive + Debug {}
