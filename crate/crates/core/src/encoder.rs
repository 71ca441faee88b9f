//! MLP feature encoder mapping node attributes to latent vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{GpnError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub num_layers: usize,
    pub dropout: f64,
    /// When false every bias is pinned at zero and never trained.
    pub use_bias: bool,
}

impl EncoderConfig {
    pub fn new(input_dim: usize) -> Self {
        EncoderConfig {
            input_dim,
            hidden_dim: 64,
            latent_dim: 16,
            num_layers: 2,
            dropout: 0.5,
            use_bias: true,
        }
    }

    /// Layer widths `D, H, ..., H, L`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(std::iter::repeat_n(self.hidden_dim, self.num_layers - 1));
        dims.push(self.latent_dim);
        dims
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpEncoder {
    config: EncoderConfig,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

/// Encoder parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundEncoder {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
    pub dropout: f64,
}

impl MlpEncoder {
    /// Glorot-uniform weights and zero biases.
    pub fn init<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        if config.input_dim == 0 || config.hidden_dim == 0 || config.latent_dim == 0 || config.num_layers == 0 {
            return Err(GpnError::Parameter(format!("invalid encoder dimensions {config:?}")));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(GpnError::Parameter(format!("dropout {} not in [0, 1)", config.dropout)));
        }
        let dims = config.dims();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
            weights.push(Tensor::matrix(fan_in, fan_out, data)?);
            biases.push(Tensor::zeros(&[fan_out]));
        }
        Ok(MlpEncoder { config, weights, biases })
    }

    pub fn from_parts(config: EncoderConfig, weights: Vec<Tensor>, biases: Vec<Tensor>) -> Result<Self> {
        let dims = config.dims();
        if weights.len() != dims.len() - 1 || biases.len() != weights.len() {
            return Err(GpnError::shape("encoder layer count mismatch"));
        }
        for (i, w) in dims.windows(2).enumerate() {
            if weights[i].shape() != [w[0], w[1]] || biases[i].shape() != [w[1]] {
                return Err(GpnError::shape(format!("encoder layer {i} has wrong shape")));
            }
        }
        Ok(MlpEncoder { config, weights, biases })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    /// Parameters in the order `w0, b0, w1, b1, ...`. Biases are omitted when
    /// the encoder is bias-free.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w);
            if self.config.use_bias {
                out.push(b);
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let use_bias = self.config.use_bias;
        let mut out = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            if use_bias {
                out.push(b);
            }
        }
        out
    }

    /// Records the parameters on `tape`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundEncoder {
        let weights = self.weights.iter().map(|w| tape.leaf(w.clone(), trainable)).collect();
        let biases = self
            .biases
            .iter()
            .map(|b| tape.leaf(b.clone(), trainable && self.config.use_bias))
            .collect();
        BoundEncoder {
            weights,
            biases,
            dropout: self.config.dropout,
        }
    }

    /// Forward pass without gradient tracking.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let z = bound.forward(&mut tape, xv, false, &mut rng)?;
        Ok(tape.value(z).clone())
    }
}

impl BoundEncoder {
    /// Trainable variables in [`MlpEncoder::parameters`] order.
    pub fn vars(&self, tape: &Tape) -> Vec<Var> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(*w);
            if tape.requires_grad(*b) {
                out.push(*b);
            }
        }
        out
    }

    /// Linear, ReLU and dropout on every layer but the last, which is linear.
    pub fn forward<R: Rng + ?Sized>(&self, tape: &mut Tape, x: Var, training: bool, rng: &mut R) -> Result<Var> {
        let in_dim = tape.value(self.weights[0]).rows();
        if !tape.value(x).is_matrix() || tape.value(x).cols() != in_dim {
            return Err(GpnError::shape(format!(
                "encoder expects {in_dim} features, got shape {:?}",
                tape.value(x).shape()
            )));
        }
        let last = self.weights.len() - 1;
        let mut h = x;
        for (i, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = tape.matmul(h, w)?;
            h = tape.add_bias(h, b)?;
            if i < last {
                h = tape.relu(h)?;
                h = tape.dropout(h, self.dropout, training, rng)?;
            }
        }
        Ok(h)
    }
}
