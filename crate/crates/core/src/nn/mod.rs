//! Minimal dense feed-forward network substrate shared by encoders, critics
//! and downstream classifiers.
//!
//! Layouts follow the usual row-major conventions:
//!
//! - batches are `N x d` matrices, one sample per row;
//! - layer weights are `(out_dim, in_dim)` so a layer computes `x W^T + b`.
//!
//! Shapes are validated at every public entry point and mismatches are
//! reported as [`Error::Shape`](crate::Error::Shape); nothing is broadcast
//! implicitly.

mod adam;
mod checkpoint;
mod gradcheck;
mod mlp;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, AnyMlp, Checkpoint};
pub use gradcheck::{gradient_check, gradient_check_with, min_relu_margin, probes, GradCheckReport};
pub use mlp::{Dense, ForwardCache, LayerGrads, Mlp, ParamGrads};

/// Floating-point width used for parameters and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Precision {
    #[default]
    #[serde(rename = "32")]
    Single,
    #[serde(rename = "64")]
    Double,
}

impl Precision {
    pub fn bits(self) -> u8 {
        match self {
            Precision::Single => 32,
            Precision::Double => 64,
        }
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        match bits {
            32 => Some(Precision::Single),
            64 => Some(Precision::Double),
            _ => None,
        }
    }
}

/// Element type of every network in the crate (`f32` or `f64`).
pub trait Scalar:
    Float
    + LinalgScalar
    + ScalarOperand
    + Default
    + Debug
    + Display
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    const PRECISION: Precision;
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// `bytes.len()` must equal `Self::BYTES`.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;
    const BYTES: usize = 4;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;
    const BYTES: usize = 8;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Per-layer activation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Linear => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// Convenience plan: ReLU on every hidden layer, `output` on the last one.
pub fn activation_plan(weight_layers: usize, output: Activation) -> Vec<Activation> {
    let mut plan = vec![Activation::Relu; weight_layers];
    if let Some(last) = plan.last_mut() {
        *last = output;
    }
    plan
}
