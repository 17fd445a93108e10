use std::fmt::{Debug, Display};

/// Floating-point scalar the whole crate is generic over: `f32` or `f64`.
///
/// `Display` must print a shortest round-trip representation (both primitive
/// floats do), which the canonical expression printer relies on.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Shorthand for lifting an `f64` literal into the scalar type.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
