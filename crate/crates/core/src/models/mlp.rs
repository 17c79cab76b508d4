//! Multi-layer perceptrons over the autodiff tape.
//!
//! All four networks in this crate (classifier, latent decoder and its
//! paired encoder, attribute editor halves, attribute predictor) are plain
//! MLPs described by an [`MlpSpec`]: a width list, one hidden activation,
//! and an output head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, VarId};
use crate::models::ModelError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Output head applied after the last affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Row-wise softmax; classifier outputs.
    Softmax,
    /// Elementwise sigmoid; image and multi-label outputs in `[0,1]`.
    Sigmoid,
    /// No nonlinearity; latent codes.
    Linear,
}

/// Architecture description: `layers` lists every width from input to
/// output, so it needs at least three entries (one hidden layer).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(layers: Vec<usize>, activation: Activation, head: Head) -> Self {
        MlpSpec {
            layers,
            activation,
            head,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers.len() < 3 {
            return Err(ModelError::DegenerateSpec(format!(
                "need at least one hidden layer, got widths {:?}",
                self.layers
            )));
        }
        if self.layers.iter().any(|&w| w == 0) {
            return Err(ModelError::DegenerateSpec(format!(
                "zero-width layer in {:?}",
                self.layers
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layers.last().expect("non-empty layers")
    }

    /// Total number of scalar parameters (weights + biases).
    pub fn param_count(&self) -> usize {
        self.layers
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// A spec plus its weight tensors, stored as `[W1, b1, W2, b2, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub weights: Vec<Tensor>,
}

impl Mlp {
    /// Initializes weights from the scaled uniform law
    /// `U(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out)))` and biases to 0,
    /// deterministically from `seed`.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity((spec.layers.len() - 1) * 2);
        for pair in spec.layers.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            weights.push(Tensor::matrix(fan_in, fan_out, data).expect("weight shape"));
            weights.push(Tensor::zeros(vec![fan_out]));
        }
        Ok(Mlp { spec, weights })
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Tensor::numel).sum()
    }

    /// Records all weight tensors onto the tape, returning their ids in
    /// storage order. Used by training loops that need weight gradients.
    pub fn record_params(&self, tape: &mut Tape) -> Vec<VarId> {
        self.weights.iter().map(|w| tape.var(w.clone())).collect()
    }

    /// Forward pass with pre-recorded parameter ids; `x` must be `[B, in]`.
    pub fn forward_from_params(
        &self,
        tape: &mut Tape,
        params: &[VarId],
        x: VarId,
    ) -> Result<VarId, ModelError> {
        let n_layers = self.spec.layers.len() - 1;
        let mut h = x;
        for layer in 0..n_layers {
            let w = params[2 * layer];
            let b = params[2 * layer + 1];
            h = tape.affine(h, w, b)?;
            if layer + 1 < n_layers {
                h = match self.spec.activation {
                    Activation::Relu => tape.relu(h)?,
                    Activation::Tanh => tape.tanh(h)?,
                };
            }
        }
        let out = match self.spec.head {
            Head::Softmax => tape.softmax(h)?,
            Head::Sigmoid => tape.sigmoid(h)?,
            Head::Linear => h,
        };
        Ok(out)
    }

    /// Forward pass recording weights as constants; `x` must be `[B, in]`.
    pub fn forward(&self, tape: &mut Tape, x: VarId) -> Result<VarId, ModelError> {
        let params = self.record_params(tape);
        self.forward_from_params(tape, &params, x)
    }

    /// Single-input convenience: rank-1 input and output, scratch tape.
    pub fn forward_value(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let id = tape.var(x.clone());
        let row = tape.reshape(id, vec![1, x.numel()])?;
        let out = self.forward(&mut tape, row)?;
        let flat = tape.reshape(out, vec![self.spec.output_dim()])?;
        Ok(tape.value(flat).clone())
    }
}
