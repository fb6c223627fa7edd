//! A small trainable network engine: dense tensors, layers with explicit
//! backward passes, MSE loss, Adam and finite-difference gradient checks.
//!
//! Forward passes borrow the network immutably and hand back a cache, so a
//! single network can be evaluated from several threads at once.

mod adam;
mod gradcheck;
mod layers;
mod loss;
mod lstm;
mod tensor;

use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{
    grad_check, grad_check_mse, input_grad_check, kink_margin, layer_grad_check, relative_error, GradCheckReport,
};
pub use layers::{glorot_limit, sigmoid, Affine, Cache, Conv1d, Layer, CONV_KERNEL};
pub use loss::mse_loss;
pub use lstm::{Gate, Lstm, LstmCache};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{context}: expected shape {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("max pooling needs an even length, got {0}")]
    OddPoolLength(usize),
}

/// Anything that owns trainable tensors in a fixed order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Number of trainable scalars.
    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Zero tensors shaped like every parameter.
    fn zero_grads(&self) -> Vec<Tensor> {
        self.params().into_iter().map(Tensor::zeros_like).collect()
    }
}

/// Samples per tile in [`Sequential::forward`].
pub const FORWARD_TILE: usize = 32;

/// Layers applied in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Inference pass. Every layer acts on samples independently, so large
    /// batches run in tiles of [`FORWARD_TILE`] samples to keep activations
    /// in cache; the result is identical to one untiled pass.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let batch = x.batch();
        if x.shape().len() < 2 || batch <= FORWARD_TILE {
            return self.forward_train(x).map(|(y, _)| y);
        }
        let per_sample = x.len() / batch;
        let mut data = Vec::new();
        let mut shape = Vec::new();
        for chunk in x.data().chunks(FORWARD_TILE * per_sample) {
            let mut tile_shape = x.shape().to_vec();
            tile_shape[0] = chunk.len() / per_sample;
            let (y, _) = self.forward_train(&Tensor::new(tile_shape, chunk.to_vec())?)?;
            if shape.is_empty() {
                shape = y.shape().to_vec();
            }
            data.extend_from_slice(y.data());
        }
        shape[0] = batch;
        Tensor::new(shape, data)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, Vec<Cache>), NnError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for layer in &self.layers {
            let (next, cache) = layer.forward_train(&current)?;
            caches.push(cache);
            current = next;
        }
        Ok((current, caches))
    }

    /// Accumulates parameter gradients into `grads` (flattened in
    /// [`Parameterized::params`] order) and returns the input gradient.
    pub fn backward(&self, caches: &[Cache], grad_out: &Tensor, grads: &mut [Tensor]) -> Tensor {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for layer in &self.layers {
            offsets.push(offset);
            offset += layer.param_names().len();
        }
        let mut grad = grad_out.clone();
        for ((layer, cache), &start) in self.layers.iter().zip(caches).zip(&offsets).rev() {
            let count = layer.param_names().len();
            grad = layer.backward(cache, &grad, &mut grads[start..start + count]);
        }
        grad
    }

    /// `(name, tensor)` pairs such as `"2.weight"`.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, layer)| {
                layer
                    .param_names()
                    .iter()
                    .zip(layer.params())
                    .map(move |(name, t)| (format!("{i}.{name}"), t))
            })
            .collect()
    }
}

impl Parameterized for Sequential {
    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }
}
