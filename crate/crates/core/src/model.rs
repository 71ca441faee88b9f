//! The assembled graph posterior network.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::encoder::{BoundEncoder, EncoderConfig, MlpEncoder};
use crate::error::{GpnError, Result};
use crate::flows::{BoundDensity, ClassConditionalDensity, RadialLayer};
use crate::graph::{Normalization, PropagationOperator, SparseGraph};
use crate::posterior::{
    aggregate_evidence, feature_evidence, posterior, BudgetScaling, CertaintyBudget, DirichletPosterior,
    EvidenceSet, DEFAULT_PRIOR,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpnConfig {
    pub input_dim: usize,
    pub num_classes: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub use_bias: bool,
    pub n_radial: usize,
    pub teleport: f64,
    pub iterations: usize,
    pub normalization: Normalization,
    pub budget: BudgetScaling,
    pub prior: f64,
}

impl GpnConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        GpnConfig {
            input_dim,
            num_classes,
            hidden_dim: 64,
            latent_dim: 16,
            num_layers: 2,
            dropout: 0.5,
            use_bias: true,
            n_radial: 10,
            teleport: 0.1,
            iterations: 10,
            normalization: Normalization::Symmetric,
            budget: BudgetScaling::PerLatent,
            prior: DEFAULT_PRIOR,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            latent_dim: self.latent_dim,
            num_layers: self.num_layers,
            dropout: self.dropout,
            use_bias: self.use_bias,
        }
    }

    pub fn budget(&self) -> CertaintyBudget {
        CertaintyBudget::new(self.latent_dim, self.budget)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(GpnError::Parameter("need at least two classes".into()));
        }
        if !(self.prior > 0.0) {
            return Err(GpnError::Parameter(format!("prior {} must be positive", self.prior)));
        }
        if !(self.teleport > 0.0 && self.teleport < 1.0) {
            return Err(GpnError::Parameter(format!("teleport {} not in (0, 1)", self.teleport)));
        }
        Ok(())
    }
}

/// Optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    Flow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gpn {
    config: GpnConfig,
    encoder: MlpEncoder,
    density: ClassConditionalDensity,
}

/// Model parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundGpn {
    pub encoder: BoundEncoder,
    pub density: BoundDensity,
    budget: CertaintyBudget,
    prior: f64,
}

/// Intermediate variables of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub latent: Var,
    pub log_dens: Var,
    pub beta_ft: Var,
    pub beta_agg: Var,
    pub alpha: Var,
}

/// Everything an inference pass produces.
#[derive(Clone, Debug)]
pub struct GpnOutput {
    pub latent: Tensor,
    pub log_dens: Tensor,
    pub evidence: EvidenceSet,
    pub posterior: DirichletPosterior,
}

impl Gpn {
    pub fn init<R: Rng + ?Sized>(config: GpnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let encoder = MlpEncoder::init(config.encoder_config(), rng)?;
        let density = ClassConditionalDensity::init(config.num_classes, config.latent_dim, config.n_radial, rng);
        Ok(Gpn { config, encoder, density })
    }

    pub fn from_parts(config: GpnConfig, encoder: MlpEncoder, density: ClassConditionalDensity) -> Result<Self> {
        config.validate()?;
        if encoder.config() != &config.encoder_config() {
            return Err(GpnError::Parameter("encoder does not match model config".into()));
        }
        if density.num_classes() != config.num_classes || density.latent_dim() != config.latent_dim {
            return Err(GpnError::Parameter("flows do not match model config".into()));
        }
        Ok(Gpn { config, encoder, density })
    }

    pub fn config(&self) -> &GpnConfig {
        &self.config
    }

    pub fn encoder(&self) -> &MlpEncoder {
        &self.encoder
    }

    pub fn density(&self) -> &ClassConditionalDensity {
        &self.density
    }

    pub fn density_mut(&mut self) -> &mut ClassConditionalDensity {
        &mut self.density
    }

    /// Propagation operator for `graph` using this model's settings.
    pub fn propagation(&self, graph: &SparseGraph) -> Result<Arc<PropagationOperator>> {
        Ok(Arc::new(PropagationOperator::new(
            graph,
            self.config.teleport,
            self.config.iterations,
            self.config.normalization,
        )?))
    }

    /// Named parameters in checkpoint/optimizer order.
    pub fn named_parameters(&self) -> Vec<(String, ParamGroup, &[f64])> {
        let mut out: Vec<(String, ParamGroup, &[f64])> = Vec::new();
        for (i, (w, b)) in self.encoder.weights().iter().zip(self.encoder.biases()).enumerate() {
            out.push((format!("encoder.{i}.weight"), ParamGroup::Encoder, w.data()));
            if self.config.use_bias {
                out.push((format!("encoder.{i}.bias"), ParamGroup::Encoder, b.data()));
            }
        }
        for (c, stack) in self.density.stacks().iter().enumerate() {
            for (k, layer) in stack.layers().iter().enumerate() {
                out.push((format!("flow.{c}.{k}.z0"), ParamGroup::Flow, layer.z0.data()));
                out.push((format!("flow.{c}.{k}.log_alpha"), ParamGroup::Flow, std::slice::from_ref(&layer.log_alpha)));
                out.push((format!("flow.{c}.{k}.beta_raw"), ParamGroup::Flow, std::slice::from_ref(&layer.beta_raw)));
            }
        }
        out
    }

    /// Mutable parameter buffers in [`named_parameters`](Self::named_parameters) order.
    pub fn parameters_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<(ParamGroup, &mut [f64])> = Vec::new();
        for t in self.encoder.parameters_mut() {
            out.push((ParamGroup::Encoder, t.data_mut()));
        }
        for stack in self.density.stacks_mut() {
            for layer in stack.layers_mut() {
                let RadialLayer { z0, log_alpha, beta_raw } = layer;
                out.push((ParamGroup::Flow, z0.data_mut()));
                out.push((ParamGroup::Flow, std::slice::from_mut(log_alpha)));
                out.push((ParamGroup::Flow, std::slice::from_mut(beta_raw)));
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_parameters().iter().map(|(_, _, p)| p.len()).sum()
    }

    /// Rebuilds a model from flat parameter blocks in declared order.
    pub fn from_blocks(config: GpnConfig, blocks: &[Vec<f64>]) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = Gpn::init(config, &mut rng)?;
        let mut params = model.parameters_mut();
        if params.len() != blocks.len() {
            return Err(GpnError::Checkpoint(format!(
                "expected {} parameter blocks, found {}",
                params.len(),
                blocks.len()
            )));
        }
        for (i, ((_, dst), src)) in params.iter_mut().zip(blocks).enumerate() {
            if dst.len() != src.len() {
                return Err(GpnError::Checkpoint(format!(
                    "block {i} has {} values, expected {}",
                    src.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(src);
        }
        Ok(model)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundGpn {
        BoundGpn {
            encoder: self.encoder.bind(tape, trainable),
            density: self.density.bind(tape, trainable),
            budget: self.config.budget(),
            prior: self.config.prior,
        }
    }

    /// Inference pass (dropout off, no gradients).
    pub fn evaluate(&self, features: &Tensor, op: &Arc<PropagationOperator>) -> Result<GpnOutput> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(features.clone());
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let fw = bound.forward(&mut tape, x, op, false, &mut rng)?;
        let evidence = EvidenceSet::new(tape.value(fw.beta_ft).clone(), tape.value(fw.beta_agg).clone())?;
        let posterior = posterior(&evidence.beta_agg, self.config.prior)?;
        Ok(GpnOutput {
            latent: tape.value(fw.latent).clone(),
            log_dens: tape.value(fw.log_dens).clone(),
            evidence,
            posterior,
        })
    }

    /// Feature evidence only (no propagation).
    pub fn feature_evidence(&self, features: &Tensor) -> Result<Tensor> {
        let z = self.encoder.encode(features)?;
        let log_dens = self.density.class_log_densities(&z)?;
        crate::posterior::feature_evidence_values(&log_dens, &self.config.budget())
    }
}

impl BoundGpn {
    /// Trainable variables in [`Gpn::named_parameters`] order.
    pub fn vars(&self, tape: &Tape) -> Vec<Var> {
        let mut out = self.encoder.vars(tape);
        out.extend(self.density.vars());
        out
    }

    /// Encoder, per-class densities, evidence, diffusion and posterior.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        features: Var,
        op: &Arc<PropagationOperator>,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardVars> {
        let latent = self.encoder.forward(tape, features, training, rng)?;
        let log_dens = self.density.class_log_densities(tape, latent)?;
        let beta_ft = feature_evidence(tape, log_dens, &self.budget)?;
        let beta_agg = aggregate_evidence(tape, beta_ft, op)?;
        let alpha = tape.add_scalar(beta_agg, self.prior);
        Ok(ForwardVars {
            latent,
            log_dens,
            beta_ft,
            beta_agg,
            alpha,
        })
    }
}
