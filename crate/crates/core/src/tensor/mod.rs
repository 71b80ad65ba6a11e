//! Dense tensor values and a reverse-mode differentiation graph.
//!
//! The engine is deliberately small: row-major buffers, an explicit
//! [`Graph`] that records every operation in topological order, and a
//! finite-difference checker for validating the analytic gradients.
//! Training runs in `f32`; gradient checks run the same code in `f64`.

mod graph;
pub mod gradcheck;

pub use graph::{Graph, Var};

use std::fmt;
use std::sync::Arc;

/// Scalar element type for tensors. Implemented for `f32` and `f64`.
pub trait Element:
    num_traits::Float + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const DTYPE: Dtype;

    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn from_f32(v: f32) -> Self {
        v
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Element type tag, used by the checkpoint container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }
}

/// Dense row-major tensor value.
///
/// The buffer is behind an `Arc` so that binding a parameter into a
/// [`Graph`] never copies the data; mutation (optimizer updates) goes
/// through [`Tensor::data_mut`], which is in place once no graph holds
/// a clone.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![E::zero(); n]),
        }
    }

    pub fn scalar(value: E) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    /// 2-D constructor from nested rows; rows must have equal length.
    pub fn from_rows(rows: &[Vec<E>]) -> Result<Self, TensorError> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(m * n);
        for row in rows {
            if row.len() != n {
                return Err(TensorError::RaggedRows {
                    expected: n,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![m, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Mutable access to the buffer. Copies only if a graph still holds
    /// a clone of this tensor.
    pub fn data_mut(&mut self) -> &mut [E] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Number of rows when interpreted as a matrix (rank 1 counts as one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Number of columns when interpreted as a matrix.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    /// Converts the element type, rounding to nearest.
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect()),
        }
    }
}

/// Errors raised by tensor construction and graph operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    RaggedRows { expected: usize, got: usize },
    DimensionMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    InvalidAxis { op: &'static str, axis: usize, shape: Vec<usize> },
    EmptyAxis { op: &'static str, axis: usize },
    NonFinite { op: &'static str },
    InvalidProbability { p: f64 },
    LabelOutOfRange { label: usize, classes: usize },
    NotScalar { op: &'static str, shape: Vec<usize> },
    EmptyInput { op: &'static str },
    NumelMismatch { op: &'static str, expected: usize, got: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeDataMismatch { shape, len } => write!(
                f,
                "shape {:?} implies {} elements, buffer has {}",
                shape,
                shape.iter().product::<usize>(),
                len
            ),
            TensorError::RaggedRows { expected, got } => {
                write!(f, "ragged rows: expected width {expected}, got {got}")
            }
            TensorError::DimensionMismatch { op, lhs, rhs } => {
                write!(f, "{op}: dimension mismatch between {lhs:?} and {rhs:?}")
            }
            TensorError::InvalidAxis { op, axis, shape } => {
                write!(f, "{op}: axis {axis} out of range for shape {shape:?}")
            }
            TensorError::EmptyAxis { op, axis } => {
                write!(f, "{op}: axis {axis} has extent 0")
            }
            TensorError::NonFinite { op } => write!(f, "{op}: non-finite input"),
            TensorError::InvalidProbability { p } => {
                write!(f, "dropout probability {p} outside [0, 1)")
            }
            TensorError::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            TensorError::NotScalar { op, shape } => {
                write!(f, "{op}: expected scalar, got shape {shape:?}")
            }
            TensorError::EmptyInput { op } => write!(f, "{op}: empty input"),
            TensorError::NumelMismatch { op, expected, got } => {
                write!(f, "{op}: expected {expected} elements, got {got}")
            }
        }
    }
}

impl std::error::Error for TensorError {}
