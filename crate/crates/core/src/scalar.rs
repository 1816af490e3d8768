use std::fmt::{Debug, Display};

use num_traits::{Float, NumAssignOps};

/// Floating-point element type for tensors, gradients and optimizer state.
///
/// f32 is the working precision for training; f64 is used where rounding
/// would eat a tolerance (strict gradient checks, optimizer trajectory
/// verification).
pub trait Scalar: Float + NumAssignOps + Debug + Display + Send + Sync + 'static {
    /// Central-difference step for gradient checks.
    fn fd_step() -> Self;
    /// Acceptable relative error for gradient checks at this precision.
    fn fd_tolerance() -> Self;

    fn from_f64(x: f64) -> Self;
    fn from_usize(x: usize) -> Self {
        Self::from_f64(x as f64)
    }
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn fd_step() -> Self {
        1e-3
    }
    fn fd_tolerance() -> Self {
        1e-3
    }
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn fd_step() -> Self {
        1e-5
    }
    fn fd_tolerance() -> Self {
        1e-6
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}
