//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! walks the record in reverse and returns gradients for every named leaf.
//! All reductions run sequentially in a fixed order, so replaying the same
//! computation gives bitwise-identical gradients.

mod check;
mod dd;
mod kernels;
mod tape;

pub use check::{
    central_differences, finite_diff_check, finite_diff_errors, finite_diff_pairs, relative_error, tape_gradients,
};
pub use dd::DoubleDouble;
pub use tape::{Gradients, Tape, Var};

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("buffer of length {len} does not fit shape {shape:?}")]
    Buffer { len: usize, shape: Vec<usize> },
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("target id {id} out of range for {classes} classes")]
    Target { id: usize, classes: usize },
    #[error("no supervised positions")]
    NoSupervisedPositions,
    #[error("loss is not a scalar (shape {0:?})")]
    NotScalar(Vec<usize>),
    #[error("variable belongs to a different tape")]
    ForeignVar,
    #[error("index {index} out of range for {rows} rows")]
    Index { index: usize, rows: usize },
    #[error("function is not deterministic: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    /// Double-double (`hi`, `lo`) pair, used for high-precision reference runs.
    F64x2,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::F64x2 => 16,
        }
    }
}

/// Floating-point element type usable on a tape.
pub trait Scalar: Float + FromPrimitive + Default + Debug + Send + Sync + 'static {
    const DTYPE: DType;

    fn from_f64_lossy(v: f64) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

impl Scalar for DoubleDouble {
    const DTYPE: DType = DType::F64x2;

    fn from_f64_lossy(v: f64) -> Self {
        DoubleDouble::from_f64(v)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.hi().to_le_bytes());
        out.extend_from_slice(&self.lo().to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        let hi = f64::from_le_bytes(bytes[..8].try_into().expect("16 bytes"));
        let lo = f64::from_le_bytes(bytes[8..16].try_into().expect("16 bytes"));
        DoubleDouble::new(hi, lo)
    }
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::Buffer { len: data.len(), shape });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Converts element type through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
