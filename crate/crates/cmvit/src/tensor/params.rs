//! Named trainable parameters and non-trainable buffers.

use std::collections::HashMap;

use super::{numel_of, Real};

/// Handle to a trainable parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Handle to a non-trainable buffer (e.g. batch-norm running stats).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// A trainable tensor with a gradient of identical shape.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

/// A named tensor that is persisted but never receives gradients.
#[derive(Clone, Debug)]
pub struct Buffer<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
}

/// Owns every parameter and buffer of one model, in registration order.
///
/// Registration order is the canonical order for checkpoints and for the
/// optimizer's moment vectors, so model construction must be deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    buffers: Vec<Buffer<T>>,
    names: HashMap<String, ()>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<T>) -> ParamId {
        let name = name.into();
        assert_eq!(value.len(), numel_of(shape), "param {name}: value/shape mismatch");
        assert!(
            self.names.insert(name.clone(), ()).is_none(),
            "duplicate parameter name {name}"
        );
        let grad = vec![T::zero(); value.len()];
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn register_buffer(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        value: Vec<T>,
    ) -> BufferId {
        let name = name.into();
        assert_eq!(value.len(), numel_of(shape), "buffer {name}: value/shape mismatch");
        assert!(
            self.names.insert(name.clone(), ()).is_none(),
            "duplicate buffer name {name}"
        );
        self.buffers.push(Buffer {
            name,
            shape: shape.to_vec(),
            value,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer<T> {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer<T> {
        &mut self.buffers[id.0]
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer<T>] {
        &mut self.buffers
    }

    /// Total number of trainable scalar values.
    pub fn count_trainable(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in &mut p.grad {
                *g = T::zero();
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &[T]) {
        let p = &mut self.params[id.0];
        debug_assert_eq!(p.grad.len(), grad.len());
        for (dst, src) in p.grad.iter_mut().zip(grad) {
            *dst = *dst + *src;
        }
    }
}
