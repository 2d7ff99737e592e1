//! Dense tensors with reverse-mode differentiation.
//!
//! The engine is a classic eager tape: every operation appends a record
//! (inputs, output, saved data) to a [`Tape`], and [`Var::backward`] walks the
//! records in reverse to populate gradients. Models are small enough that no
//! graph compilation or fusion is warranted.
//!
//! Precision is a type parameter: training runs in `f32`, gradient checking
//! in `f64`. Reductions accumulate in a fixed order, and element-parallel ops
//! produce results independent of the number of threads, so runs are
//! reproducible at a fixed seed.

mod checkpoint;
mod conv;
pub mod gradcheck;
mod params;
mod tape;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointData};
pub use conv::conv3d_output_shape;
pub use params::{BoundParams, ParamId, ParamStore};
pub use tape::{Activation, Tape, Var};

use ndarray::LinalgScalar;
use num_traits::{Float, FromPrimitive, NumAssign};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Scalar types the engine runs on.
pub trait Scalar:
    LinalgScalar
    + Float
    + NumAssign
    + FromPrimitive
    + std::iter::Sum
    + std::fmt::Display
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;
    fn cast(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn cast(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn cast(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[cfg(test)]
mod tests;
