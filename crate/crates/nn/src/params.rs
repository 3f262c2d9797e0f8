//! Named trainable parameters and non-trainable buffers (batch-norm running statistics).

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Named {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub params: Vec<Named>,
    pub buffers: Vec<Named>,
}

impl ParamStore {
    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Named {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> BufferId {
        self.buffers.push(Named {
            name: name.into(),
            value,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0].value
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// He (fan-in) normal initialization.
    pub fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape, |_| normal.sample(rng))
    }
}

/// Running-statistic replacement produced by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BufferUpdate {
    pub id: BufferId,
    pub value: Vec<f64>,
}

impl ParamStore {
    pub fn apply_updates(&mut self, updates: Vec<BufferUpdate>) {
        for u in updates {
            self.buffers[u.id.0].value.data_mut().copy_from_slice(&u.value);
        }
    }
}
