//! The six decoder architectures: MLP, CNN and RNN families, each as a plain
//! neural network decoder (NND) or with a residual denoiser in front (RNND).
//!
//! An RNND computes `ŝ = y + H(y)` and decodes `sigmoid(G(ŝ))`; an NND
//! decodes `sigmoid(G(y))` directly. Training minimizes
//! `|ŝ - s|²/N + |û - u|²/K` for RNNDs and the decoding term alone for NNDs.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::{
    grad_check, kink_margin, mse_loss, Affine, Conv1d, GradCheckReport, Layer, Lstm, NnError, Parameterized, Sequential,
    Tensor,
};
use crate::polar::BitVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("unsupported dimensions: {0}")]
    UnsupportedDims(String),
    #[error("{0} has no residual denoiser; an RNND model is required")]
    NotResidual(String),
    #[error("unknown architecture {name:?}; valid names: {valid}")]
    UnknownArch { name: String, valid: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Mlp,
    Cnn,
    Rnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Nnd,
    Rnnd,
}

/// Architecture descriptor. Dimension lists hold hidden widths (MLP),
/// channel counts (CNN) or LSTM hidden sizes (RNN).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub family: Family,
    pub variant: Variant,
    pub n: usize,
    pub k: usize,
    pub denoiser_dims: Vec<usize>,
    pub decoder_dims: Vec<usize>,
}

pub const ARCH_NAMES: [&str; 6] = ["mlp-nnd", "mlp-rnnd", "cnn-nnd", "cnn-rnnd", "rnn-nnd", "rnn-rnnd"];

impl ModelSpec {
    /// Default layer sizes for the family.
    pub fn new(family: Family, variant: Variant, n: usize, k: usize) -> Self {
        let (denoiser_dims, decoder_dims) = match family {
            Family::Mlp => (vec![128, 64, 32], vec![128, 64, 32]),
            Family::Cnn => (vec![64, 48, 32], vec![64, 32, 32]),
            Family::Rnn => (vec![64], vec![48]),
        };
        Self {
            family,
            variant,
            n,
            k,
            denoiser_dims,
            decoder_dims,
        }
    }

    pub fn with_dims(mut self, denoiser_dims: Vec<usize>, decoder_dims: Vec<usize>) -> Self {
        self.denoiser_dims = denoiser_dims;
        self.decoder_dims = decoder_dims;
        self
    }

    /// Short name such as `mlp-rnnd`.
    pub fn short_name(&self) -> String {
        let family = match self.family {
            Family::Mlp => "mlp",
            Family::Cnn => "cnn",
            Family::Rnn => "rnn",
        };
        let variant = match self.variant {
            Variant::Nnd => "nnd",
            Variant::Rnnd => "rnnd",
        };
        format!("{family}-{variant}")
    }

    /// Full name with code parameters, e.g. `mlp-rnnd-16-8`.
    pub fn arch_name(&self) -> String {
        format!("{}-{}-{}", self.short_name(), self.n, self.k)
    }

    /// Parses a short name (`cnn-nnd`) with the given code parameters.
    pub fn from_short_name(name: &str, n: usize, k: usize) -> Result<Self, ModelError> {
        let (family, variant) = match name.to_ascii_lowercase().as_str() {
            "mlp-nnd" => (Family::Mlp, Variant::Nnd),
            "mlp-rnnd" => (Family::Mlp, Variant::Rnnd),
            "cnn-nnd" => (Family::Cnn, Variant::Nnd),
            "cnn-rnnd" => (Family::Cnn, Variant::Rnnd),
            "rnn-nnd" => (Family::Rnn, Variant::Nnd),
            "rnn-rnnd" => (Family::Rnn, Variant::Rnnd),
            _ => {
                return Err(ModelError::UnknownArch {
                    name: name.to_string(),
                    valid: ARCH_NAMES.join(", "),
                })
            }
        };
        Ok(Self::new(family, variant, n, k))
    }

    pub fn is_residual(&self) -> bool {
        self.variant == Variant::Rnnd
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n == 0 || self.k == 0 || self.k > self.n {
            return Err(ModelError::UnsupportedDims(format!(
                "need 0 < K <= N, got N={} K={}",
                self.n, self.k
            )));
        }
        if self.denoiser_dims.is_empty() || self.decoder_dims.is_empty() {
            return Err(ModelError::UnsupportedDims("empty layer list".into()));
        }
        if self.denoiser_dims.iter().chain(&self.decoder_dims).any(|&d| d == 0) {
            return Err(ModelError::UnsupportedDims("zero-width layer".into()));
        }
        if self.family == Family::Cnn {
            let pools = self.denoiser_dims.len().max(self.decoder_dims.len()) - 1;
            if self.n % (1 << pools) != 0 {
                return Err(ModelError::UnsupportedDims(format!(
                    "N={} is not divisible by {} for {pools} pooling stages",
                    self.n,
                    1 << pools
                )));
            }
        }
        Ok(())
    }
}

impl FromStr for ModelSpec {
    type Err = ModelError;

    /// Parses `family-variant-N-K`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || ModelError::UnknownArch {
            name: s.to_string(),
            valid: ARCH_NAMES.map(|a| format!("{a}-N-K")).join(", "),
        };
        let parts: Vec<&str> = s.split('-').collect();
        let [family, variant, n, k] = parts.as_slice() else {
            return Err(unknown());
        };
        let n = n.parse().map_err(|_| unknown())?;
        let k = k.parse().map_err(|_| unknown())?;
        Self::from_short_name(&format!("{family}-{variant}"), n, k).map_err(|_| unknown())
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.arch_name())
    }
}

/// Output of a forward pass over a batch `[batch, N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// `ŝ`, `[batch, N]`; absent for NND models.
    pub denoised: Option<Tensor>,
    /// Soft bit estimates in `(0, 1)`, `[batch, K]`.
    pub soft_bits: Tensor,
}

/// Loss terms averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub denoise: f64,
    pub decode: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    spec: ModelSpec,
    denoiser: Option<Sequential>,
    decoder: Sequential,
}

impl DecoderModel {
    /// Builds the architecture with weights drawn from a generator seeded
    /// with `seed`.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let (n, k) = (spec.n, spec.k);
        let (denoiser, decoder) = match (spec.family, spec.variant) {
            (Family::Mlp, Variant::Rnnd) => (
                Some(mlp_stack(n, &spec.denoiser_dims, n, rng)),
                with_sigmoid(mlp_stack(n, &spec.decoder_dims, k, rng)),
            ),
            (Family::Mlp, Variant::Nnd) => {
                let widths: Vec<usize> = spec.denoiser_dims.iter().chain(&spec.decoder_dims).copied().collect();
                (None, with_sigmoid(mlp_stack(n, &widths, k, rng)))
            }
            (Family::Cnn, Variant::Rnnd) => (
                Some(cnn_stack(n, &spec.denoiser_dims, &[], n, rng)),
                with_sigmoid(cnn_stack(n, &spec.decoder_dims, &[], k, rng)),
            ),
            (Family::Cnn, Variant::Nnd) => (
                None,
                with_sigmoid(cnn_stack(n, &spec.denoiser_dims, &spec.decoder_dims, k, rng)),
            ),
            (Family::Rnn, Variant::Rnnd) => (
                Some(rnn_stack(n, &spec.denoiser_dims, n, rng)),
                with_sigmoid(rnn_stack(n, &spec.decoder_dims, k, rng)),
            ),
            (Family::Rnn, Variant::Nnd) => {
                let hidden: Vec<usize> = spec.denoiser_dims.iter().chain(&spec.decoder_dims).copied().collect();
                (None, with_sigmoid(rnn_stack(n, &hidden, k, rng)))
            }
        };
        Ok(Self {
            spec,
            denoiser,
            decoder,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn denoiser(&self) -> Option<&Sequential> {
        self.denoiser.as_ref()
    }

    pub fn decoder(&self) -> &Sequential {
        &self.decoder
    }

    /// Parameter names in [`Parameterized::params`] order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(d) = &self.denoiser {
            out.extend(d.named_params().into_iter().map(|(n, t)| (format!("denoiser.{n}"), t)));
        }
        out.extend(self.decoder.named_params().into_iter().map(|(n, t)| (format!("decoder.{n}"), t)));
        out
    }

    /// Zeroes the last denoiser layer so that `H(y) = 0`.
    pub fn zero_residual_head(&mut self) -> Result<(), ModelError> {
        let name = self.spec.arch_name();
        let denoiser = self.denoiser.as_mut().ok_or(ModelError::NotResidual(name))?;
        if let Some(Layer::Affine(head)) = denoiser.layers.last_mut() {
            head.weight.fill(0.0);
            head.bias.fill(0.0);
        }
        Ok(())
    }

    fn check_input(&self, y: &Tensor) -> Result<(), ModelError> {
        if y.shape().len() != 2 || y.shape()[1] != self.spec.n {
            return Err(NnError::Shape {
                context: "model input",
                expected: vec![y.batch(), self.spec.n],
                actual: y.shape().to_vec(),
            }
            .into());
        }
        Ok(())
    }

    /// `ŝ = y + H(y)` for a batch `[batch, N]`.
    pub fn denoise(&self, y: &Tensor) -> Result<Tensor, ModelError> {
        self.check_input(y)?;
        let denoiser = self
            .denoiser
            .as_ref()
            .ok_or_else(|| ModelError::NotResidual(self.spec.arch_name()))?;
        let mut s_hat = denoiser.forward(y)?;
        s_hat.add_assign(y);
        Ok(s_hat)
    }

    pub fn forward(&self, y: &Tensor) -> Result<ModelOutput, ModelError> {
        self.check_input(y)?;
        match &self.denoiser {
            Some(_) => {
                let s_hat = self.denoise(y)?;
                let soft_bits = self.decoder.forward(&s_hat)?;
                Ok(ModelOutput {
                    denoised: Some(s_hat),
                    soft_bits,
                })
            }
            None => Ok(ModelOutput {
                denoised: None,
                soft_bits: self.decoder.forward(y)?,
            }),
        }
    }

    /// Hard decisions for a batch, `batch·K` bits row-major.
    pub fn decode_batch(&self, y: &Tensor) -> Result<Vec<u8>, ModelError> {
        let out = self.forward(y)?;
        Ok(out.soft_bits.data().iter().map(|&p| u8::from(p >= 0.5)).collect())
    }

    pub fn loss(&self, y: &Tensor, s: &Tensor, u: &Tensor) -> Result<LossBreakdown, ModelError> {
        self.loss_and_grads(y, s, u).map(|(l, _)| l)
    }

    /// Multi-task loss and its gradient for every parameter, in
    /// [`Parameterized::params`] order.
    pub fn loss_and_grads(
        &self,
        y: &Tensor,
        s: &Tensor,
        u: &Tensor,
    ) -> Result<(LossBreakdown, Vec<Tensor>), ModelError> {
        self.check_input(y)?;
        let (n, k) = (self.spec.n, self.spec.k);
        let mut grads = self.zero_grads();
        match &self.denoiser {
            Some(denoiser) => {
                let (mut s_hat, den_caches) = denoiser.forward_train(y)?;
                s_hat.add_assign(y);
                let (soft, dec_caches) = self.decoder.forward_train(&s_hat)?;
                let (denoise, g_denoise) = mse_loss(&s_hat, s, n)?;
                let (decode, g_decode) = mse_loss(&soft, u, k)?;
                let split = denoiser.params().len();
                let (den_grads, dec_grads) = grads.split_at_mut(split);
                let mut g_s_hat = self.decoder.backward(&dec_caches, &g_decode, dec_grads);
                g_s_hat.add_assign(&g_denoise);
                denoiser.backward(&den_caches, &g_s_hat, den_grads);
                Ok((
                    LossBreakdown {
                        total: denoise + decode,
                        denoise,
                        decode,
                    },
                    grads,
                ))
            }
            None => {
                let (soft, caches) = self.decoder.forward_train(y)?;
                let (decode, g_decode) = mse_loss(&soft, u, k)?;
                self.decoder.backward(&caches, &g_decode, &mut grads);
                Ok((
                    LossBreakdown {
                        total: decode,
                        denoise: 0.0,
                        decode,
                    },
                    grads,
                ))
            }
        }
    }
}

impl Parameterized for DecoderModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut out = self.denoiser.as_ref().map(|d| d.params()).unwrap_or_default();
        out.extend(self.decoder.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.denoiser.as_mut().map(|d| d.params_mut()).unwrap_or_default();
        out.extend(self.decoder.params_mut());
        out
    }
}

impl DecoderModel {
    /// Central-difference check of [`DecoderModel::loss_and_grads`] over
    /// every parameter.
    pub fn loss_grad_check(&mut self, y: &Tensor, s: &Tensor, u: &Tensor, step: f64) -> Result<GradCheckReport, ModelError> {
        let (_, grads) = self.loss_and_grads(y, s, u)?;
        self.loss(y, s, u)?;
        Ok(grad_check(
            self,
            &grads,
            |m| m.loss(y, s, u).expect("shapes validated above").total,
            step,
        ))
    }

    /// [`kink_margin`] across denoiser and decoder for input `y`.
    pub fn kink_margin(&self, y: &Tensor) -> Result<f64, ModelError> {
        match &self.denoiser {
            Some(denoiser) => {
                let s_hat = self.denoise(y)?;
                Ok(kink_margin(denoiser, y)?.min(kink_margin(&self.decoder, &s_hat)?))
            }
            None => Ok(kink_margin(&self.decoder, y)?),
        }
    }
}

/// Bit `i` is 1 iff `soft[i] >= 0.5`.
pub fn hard_decision(soft: &[f64]) -> BitVector {
    BitVector::new(soft.iter().map(|&p| u8::from(p >= 0.5)).collect()).expect("bits are 0 or 1")
}

fn with_sigmoid(mut net: Sequential) -> Sequential {
    net.layers.push(Layer::Sigmoid);
    net
}

/// `inputs -> widths... -> outputs`, ReLU after every hidden layer, linear head.
fn mlp_stack(inputs: usize, widths: &[usize], outputs: usize, rng: &mut ChaCha8Rng) -> Sequential {
    let mut layers = Vec::new();
    let mut prev = inputs;
    for &w in widths {
        layers.push(Layer::Affine(Affine::glorot(prev, w, rng)));
        layers.push(Layer::Relu);
        prev = w;
    }
    layers.push(Layer::Affine(Affine::glorot(prev, outputs, rng)));
    Sequential::new(layers)
}

/// Conv + ReLU stages with max pooling between adjacent `pooled` stages,
/// then `tail` stages at the pooled length, flattened into a linear head.
fn cnn_stack(
    n: usize,
    pooled: &[usize],
    tail: &[usize],
    outputs: usize,
    rng: &mut ChaCha8Rng,
) -> Sequential {
    let mut layers = vec![Layer::Reshape(vec![1, n])];
    let mut channels = 1;
    let mut len = n;
    for (i, &c) in pooled.iter().enumerate() {
        if i > 0 {
            layers.push(Layer::MaxPool1d);
            len /= 2;
        }
        layers.push(Layer::Conv1d(Conv1d::glorot(channels, c, rng)));
        layers.push(Layer::Relu);
        channels = c;
    }
    for &c in tail {
        layers.push(Layer::Conv1d(Conv1d::glorot(channels, c, rng)));
        layers.push(Layer::Relu);
        channels = c;
    }
    layers.push(Layer::Reshape(vec![channels * len]));
    layers.push(Layer::Affine(Affine::glorot(channels * len, outputs, rng)));
    Sequential::new(layers)
}

/// One symbol per time step through stacked LSTMs; the last hidden state
/// feeds a linear head.
fn rnn_stack(n: usize, hidden: &[usize], outputs: usize, rng: &mut ChaCha8Rng) -> Sequential {
    let mut layers = vec![Layer::Reshape(vec![n, 1])];
    let mut prev = 1;
    for &h in hidden {
        layers.push(Layer::Lstm(Lstm::uniform(prev, h, rng)));
        prev = h;
    }
    layers.push(Layer::LastStep);
    layers.push(Layer::Affine(Affine::glorot(prev, outputs, rng)));
    Sequential::new(layers)
}
