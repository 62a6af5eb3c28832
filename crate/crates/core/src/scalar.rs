//! Scalar abstraction shared by poses, times, distances and scores.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real number type the engine is generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Short name used in serialized headers.
    const NAME: &'static str;

    /// Lossy conversion from `f64`; always succeeds for IEEE floats.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every IEEE float type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("IEEE float converts to f64")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}
