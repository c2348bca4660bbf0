//! A small dense neural network stack written from scratch: affine layers,
//! batch normalization, pre-activation residual blocks with a dueling head,
//! the AdaBelief optimizer and a step-down learning-rate schedule.
//!
//! Networks are generic over the float type so that gradient checks can run
//! in `f64` while training and inference use `f32`.

mod adabelief;
mod layers;
mod resnet;
mod schedule;

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use adabelief::{adabelief_update, AdaBelief};
pub use layers::{BatchNorm, Linear};
pub use resnet::{DenseResNet, NetConfig, NetOutput};
pub use schedule::LrSchedule;

/// Float types the networks can run on.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Minibatch statistics in batch normalization; running averages updated.
    Train,
    /// Running statistics in batch normalization.
    Eval,
}
