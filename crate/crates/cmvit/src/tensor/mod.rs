//! Dense tensors and reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain row-major value; differentiable computation is
//! recorded on a [`Tape`], which hands out lightweight [`Var`] handles and
//! replays its records in reverse for [`Tape::backward`].

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{grad_check, grad_check_coords};
pub use params::{Buffer, BufferId, Param, ParamId, ParamStore};
pub use tape::{EwKind, Tape, Var};

use crate::error::{Error, Result};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type of every numeric kernel in the crate.
///
/// `f32` is the training default; `f64` instantiations are used by the
/// gradient-verification suite and by tests that pin bitwise behaviour.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::iter::Sum
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    const BYTE_WIDTH: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const BYTE_WIDTH: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const BYTE_WIDTH: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Converts an `f64` literal into the active scalar type.
pub fn lit<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("literal not representable")
}

/// Product of extents; the empty product is 1, so rank-0 tensors hold one value.
pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Fill argument for [`Tensor::new`].
pub enum Fill<T> {
    Scalar(T),
    Values(Vec<T>),
}

/// Dense N-dimensional array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], fill: Fill<T>) -> Result<Self> {
        let n = numel_of(shape);
        let data = match fill {
            Fill::Scalar(v) => vec![v; n],
            Fill::Values(values) => {
                if values.len() != n {
                    return Err(Error::shape(format!(
                        "fill length {} does not match shape {:?} (numel {})",
                        values.len(),
                        shape,
                        n
                    )));
                }
                values
            }
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::new(shape, Fill::Scalar(T::zero())).unwrap()
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Tensor::new(shape, Fill::Scalar(v)).unwrap()
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Tensor::new(shape, Fill::Values(data))
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
            requires_grad: false,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
