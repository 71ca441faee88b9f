//! Per-class radial normalizing flows.
//!
//! Each radial layer maps `z -> z + β̂ h(α, r) (z - z0)` with `r = |z - z0|`
//! and `h = 1 / (α + r)`. A stack composes its layers in order, carrying a
//! latent point toward the standard-normal base, so the density of `z` is the
//! base density of the image plus the summed log-determinants. No inversion
//! is needed.
//!
//! Parameters are unconstrained: `α = exp(log_alpha)` and
//! `β̂ = -α + softplus(beta_raw)`, which keeps every layer invertible.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diff::{softplus, softplus_inv, Tape, Tensor, Var};
use crate::error::{GpnError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub struct RadialLayer {
    pub z0: Tensor,
    pub log_alpha: f64,
    pub beta_raw: f64,
}

impl RadialLayer {
    /// Near-identity layer: `z0 ~ N(0, 0.1 I)`, `α = 1`, `β̂ = 0`.
    pub fn init<R: Rng + ?Sized>(latent_dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.1f64.sqrt()).expect("valid std");
        RadialLayer {
            z0: Tensor::vector((0..latent_dim).map(|_| normal.sample(rng)).collect()),
            log_alpha: 0.0,
            beta_raw: softplus_inv(1.0),
        }
    }

    /// Layer with the given `α > 0` and `β̂ > -α`.
    pub fn with_params(z0: Vec<f64>, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(beta > -alpha) {
            return Err(GpnError::Parameter(format!("radial layer needs α > 0 and β̂ > -α, got ({alpha}, {beta})")));
        }
        Ok(RadialLayer {
            z0: Tensor::vector(z0),
            log_alpha: alpha.ln(),
            beta_raw: softplus_inv(beta + alpha),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn beta(&self) -> f64 {
        -self.alpha() + softplus(self.beta_raw)
    }

    pub fn latent_dim(&self) -> usize {
        self.z0.len()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundRadial {
        BoundRadial {
            z0: tape.leaf(self.z0.clone(), trainable),
            log_alpha: tape.leaf(Tensor::scalar(self.log_alpha), trainable),
            beta_raw: tape.leaf(Tensor::scalar(self.beta_raw), trainable),
        }
    }

    /// Applies the layer to one point, returning `(u, log|det J|)`.
    pub fn transform(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let zv = tape.constant(Tensor::matrix(1, z.len(), z.to_vec())?);
        let (u, ld) = bound.transform(&mut tape, zv)?;
        Ok((tape.value(u).data().to_vec(), tape.value(ld).item()))
    }
}

/// Radial layer parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundRadial {
    pub z0: Var,
    pub log_alpha: Var,
    pub beta_raw: Var,
}

impl BoundRadial {
    pub fn vars(&self) -> [Var; 3] {
        [self.z0, self.log_alpha, self.beta_raw]
    }

    /// Maps `z [n x L]` to `(u [n x L], log_det [n x 1])`.
    pub fn transform(&self, tape: &mut Tape, z: Var) -> Result<(Var, Var)> {
        let dim = tape.value(self.z0).len();
        if !tape.value(z).is_matrix() || tape.value(z).cols() != dim {
            return Err(GpnError::shape(format!(
                "radial layer of dimension {dim} got shape {:?}",
                tape.value(z).shape()
            )));
        }
        let alpha = tape.exp(self.log_alpha)?;
        let sp = tape.softplus(self.beta_raw)?;
        let beta = tape.sub(sp, alpha)?;

        let diff = tape.sub(z, self.z0)?;
        let r = tape.row_norm(diff)?;
        let ar = tape.add(r, alpha)?;
        let h = tape.recip(ar)?;
        let bh = tape.mul(h, beta)?;
        let shift = tape.mul(diff, bh)?;
        let u = tape.add(z, shift)?;

        // log(1 + β̂h + β̂h'r) with h' = -h²
        let h2 = tape.square(h)?;
        let h2r = tape.mul(h2, r)?;
        let bh2r = tape.mul(h2r, beta)?;
        let inner = tape.sub(bh, bh2r)?;
        let inner = tape.add_scalar(inner, 1.0);
        let mut log_det = tape.log(inner)?;
        if dim > 1 {
            let one_bh = tape.add_scalar(bh, 1.0);
            let lg = tape.log(one_bh)?;
            let lg = tape.scale(lg, (dim - 1) as f64);
            log_det = tape.add(log_det, lg)?;
        }
        Ok((u, log_det))
    }
}

/// Composition of radial layers over a standard-normal base on `R^L`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowStack {
    latent_dim: usize,
    layers: Vec<RadialLayer>,
}

impl FlowStack {
    pub fn init<R: Rng + ?Sized>(latent_dim: usize, n_radial: usize, rng: &mut R) -> Self {
        FlowStack {
            latent_dim,
            layers: (0..n_radial).map(|_| RadialLayer::init(latent_dim, rng)).collect(),
        }
    }

    pub fn from_layers(latent_dim: usize, layers: Vec<RadialLayer>) -> Result<Self> {
        if layers.iter().any(|l| l.latent_dim() != latent_dim) {
            return Err(GpnError::shape("radial layer dimension mismatch"));
        }
        Ok(FlowStack { latent_dim, layers })
    }

    /// Stack whose layers are all exact identities (`β̂ = 0`).
    pub fn identity(latent_dim: usize, n_radial: usize) -> Self {
        let layer = RadialLayer {
            z0: Tensor::zeros(&[latent_dim]),
            log_alpha: 0.0,
            beta_raw: softplus_inv(1.0),
        };
        FlowStack {
            latent_dim,
            layers: vec![layer; n_radial],
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn layers(&self) -> &[RadialLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [RadialLayer] {
        &mut self.layers
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundFlow {
        BoundFlow {
            latent_dim: self.latent_dim,
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
        }
    }

    /// `log p(z)` for a single point.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let zv = tape.constant(Tensor::matrix(1, z.len(), z.to_vec())?);
        let ld = bound.log_density(&mut tape, zv)?;
        Ok(tape.value(ld).item())
    }
}

#[derive(Clone, Debug)]
pub struct BoundFlow {
    pub latent_dim: usize,
    pub layers: Vec<BoundRadial>,
}

impl BoundFlow {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| l.vars()).collect()
    }

    /// `log p(z)` for every row of `z [n x L]`, shape `[n, 1]`.
    pub fn log_density(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let mut cur = z;
        let mut total_ld: Option<Var> = None;
        for layer in &self.layers {
            let (u, ld) = layer.transform(tape, cur)?;
            total_ld = Some(match total_ld {
                Some(acc) => tape.add(acc, ld)?,
                None => ld,
            });
            cur = u;
        }
        if !tape.value(cur).is_matrix() || tape.value(cur).cols() != self.latent_dim {
            return Err(GpnError::shape(format!(
                "flow of dimension {} got shape {:?}",
                self.latent_dim,
                tape.value(cur).shape()
            )));
        }
        let sq = tape.square(cur)?;
        let sq = tape.sum_cols(sq)?;
        let base = tape.scale(sq, -0.5);
        let base = tape.add_scalar(base, -0.5 * self.latent_dim as f64 * LN_2PI);
        match total_ld {
            Some(ld) => tape.add(base, ld),
            None => Ok(base),
        }
    }
}

/// One flow stack per class with a uniform class prior.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassConditionalDensity {
    stacks: Vec<FlowStack>,
}

impl ClassConditionalDensity {
    pub fn init<R: Rng + ?Sized>(num_classes: usize, latent_dim: usize, n_radial: usize, rng: &mut R) -> Self {
        ClassConditionalDensity {
            stacks: (0..num_classes).map(|_| FlowStack::init(latent_dim, n_radial, rng)).collect(),
        }
    }

    pub fn from_stacks(stacks: Vec<FlowStack>) -> Result<Self> {
        let Some(first) = stacks.first() else {
            return Err(GpnError::Parameter("need at least one class".into()));
        };
        if stacks.iter().any(|s| s.latent_dim() != first.latent_dim()) {
            return Err(GpnError::shape("class flows disagree on latent dimension"));
        }
        Ok(ClassConditionalDensity { stacks })
    }

    pub fn num_classes(&self) -> usize {
        self.stacks.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.stacks[0].latent_dim()
    }

    pub fn stacks(&self) -> &[FlowStack] {
        &self.stacks
    }

    pub fn stacks_mut(&mut self) -> &mut [FlowStack] {
        &mut self.stacks
    }

    /// `log p(c) = -log C`.
    pub fn log_class_prior(&self) -> f64 {
        -(self.stacks.len() as f64).ln()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundDensity {
        BoundDensity {
            flows: self.stacks.iter().map(|s| s.bind(tape, trainable)).collect(),
        }
    }

    /// `log p(z | c)` for every row and class, without gradient tracking.
    pub fn class_log_densities(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let out = bound.class_log_densities(&mut tape, zv)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Clone, Debug)]
pub struct BoundDensity {
    pub flows: Vec<BoundFlow>,
}

impl BoundDensity {
    pub fn vars(&self) -> Vec<Var> {
        self.flows.iter().flat_map(|f| f.vars()).collect()
    }

    /// `[n x C]` matrix of `log p(z_v | c)`.
    pub fn class_log_densities(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let cols = self
            .flows
            .iter()
            .map(|f| f.log_density(tape, z))
            .collect::<Result<Vec<_>>>()?;
        tape.concat_cols(&cols)
    }

    /// `-Σ_{v in train} log p(z_v | y_v)`.
    ///
    /// `z` should be a constant so that only flow parameters are updated.
    pub fn warmup_loss(&self, tape: &mut Tape, z: Var, labels: &[usize], train_idx: &[usize]) -> Result<Var> {
        if train_idx.is_empty() {
            return Err(GpnError::Parameter("warm-up needs at least one training node".into()));
        }
        let zt = tape.gather_rows(z, train_idx)?;
        let ys: Vec<usize> = train_idx.iter().map(|&v| labels[v]).collect();
        let logp = self.class_log_densities(tape, zt)?;
        let picked = tape.pick(logp, &ys)?;
        let total = tape.sum(picked);
        Ok(tape.scale(total, -1.0))
    }
}
