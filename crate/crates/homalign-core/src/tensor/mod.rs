//! Dense n-d arrays with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is an immutable value: a shape plus a flat row-major buffer
//! behind an `Arc`, so clones are cheap and values can be shared freely
//! across threads. Gradient tracking lives in [`Tape`]/[`Var`]: enrolling a
//! tensor on a tape yields a `Var`, operations on `Var`s record backward
//! rules, and [`Tape::backward`] replays them in reverse to populate
//! gradients. A tape is built per forward pass and dropped (or cleared)
//! after backward; there are no higher-order gradients.

mod conv;
mod ops;
mod tape;

pub use tape::{Tape, Var};

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::element::Element;

/// Errors raised by tensor construction, shape checking and the tape.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("backward root does not participate in any gradient path")]
    DetachedRoot,
    #[error("tape already consumed by a backward pass; rebuild the forward graph first")]
    TapeConsumed,
}

pub(crate) fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

/// An immutable dense array with row-major layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Element = f64> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    /// Builds a tensor from a flat buffer; the product of `shape` extents
    /// must equal the buffer length.
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err(
                "from_vec",
                alloc::format!(
                    "shape {:?} holds {} elements but buffer has {}",
                    shape,
                    numel,
                    data.len()
                ),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![E::zero(); numel]),
        }
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; numel]),
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, E::one())
    }

    pub fn scalar(value: E) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> E) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|i| f(i)).collect();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> E {
        debug_assert!(self.is_scalar(), "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    /// Same buffer under a new shape with identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(shape_err(
                "reshape",
                alloc::format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add_same_shape(&self, other: &Self) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Self {
            shape: self.shape.clone(),
            data: Arc::new(data),
        }
    }

    pub fn iter(&self) -> core::slice::Iter<'_, E> {
        self.data.iter()
    }

    /// Lossy conversion into another element precision.
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect()),
        }
    }

    /// Replaces one element, copying the buffer. Intended for tests and
    /// finite-difference probes, not hot paths.
    pub fn with_value_at(&self, flat_index: usize, value: E) -> Self {
        let mut data = self.data.as_ref().clone();
        data[flat_index] = value;
        Self {
            shape: self.shape.clone(),
            data: Arc::new(data),
        }
    }
}

impl<E: Element> Tensor<E> {
    /// NCHW accessors used by the convolution and sampling kernels.
    pub(crate) fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize), TensorError> {
        if self.shape.len() != 4 {
            return Err(shape_err(
                op,
                alloc::format!("expected a 4-d NCHW tensor, got shape {:?}", self.shape),
            ));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }
}
