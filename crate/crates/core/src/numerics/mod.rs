//! Deterministic dense numerics: matrices, activations, losses, Adam,
//! transformer blocks, a seeded PRNG and a finite-difference gradient
//! checker. Everything is generic over [`Scalar`].

pub mod adam;
pub mod attention;
pub mod gradcheck;
pub mod kernels;
pub mod matrix;
pub mod prng;

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};

pub use adam::{adam_step, AdamState};
pub use attention::{attention_block_forward, BlockSpec, BlockWeights};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use matrix::Matrix2D;
pub use prng::{Prng, Stream};

/// Floating-point element type of the numeric kernels.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Default + Debug + Display + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
