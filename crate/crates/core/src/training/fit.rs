use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::loss::{bayesian_loss, LossConfig};
use crate::diff::{Tape, Tensor, Var};
use crate::error::{GpnError, Result};
use crate::graph::PropagationOperator;
use crate::model::{Gpn, GpnConfig, ParamGroup};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// L2 decay on encoder parameters. Flow parameters are never decayed.
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            weight_decay: 1e-3,
            warmup_epochs: 5,
            max_epochs: 10_000,
            patience: 50,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(GpnError::Parameter(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(GpnError::Parameter("weight decay must be non-negative".into()));
        }
        if !(self.loss.entropy_weight >= 0.0) {
            return Err(GpnError::Parameter("entropy weight must be non-negative".into()));
        }
        if self.patience == 0 {
            return Err(GpnError::Parameter("patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// Full-batch training inputs.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub features: &'a Tensor,
    pub labels: &'a [usize],
    pub train_idx: &'a [usize],
    pub val_idx: &'a [usize],
}

impl TrainData<'_> {
    fn validate(&self, num_classes: usize) -> Result<()> {
        let n = self.features.rows();
        if self.labels.len() != n {
            return Err(GpnError::Input(format!("{} labels for {n} nodes", self.labels.len())));
        }
        if self.train_idx.is_empty() || self.val_idx.is_empty() {
            return Err(GpnError::Parameter("training and validation sets must be non-empty".into()));
        }
        // Only labels of masked nodes are read.
        for &v in self.train_idx.iter().chain(self.val_idx) {
            if v >= n {
                return Err(GpnError::Input(format!("node {v} out of range")));
            }
            if self.labels[v] >= num_classes {
                return Err(GpnError::Input(format!(
                    "node {v} has label {} outside {num_classes} classes",
                    self.labels[v]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Warmup,
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    /// Missing during warm-up.
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: Gpn,
    pub history: Vec<EpochRecord>,
    /// Joint-phase epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records a validation loss; returns true if it is a new best.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

fn snapshot(model: &Gpn) -> Vec<Vec<f64>> {
    model.named_parameters().into_iter().map(|(_, _, p)| p.to_vec()).collect()
}

fn restore(model: &mut Gpn, blocks: &[Vec<f64>]) {
    for ((_, dst), src) in model.parameters_mut().into_iter().zip(blocks) {
        dst.copy_from_slice(src);
    }
}

fn collect_grads(tape: &Tape, vars: &[Var]) -> Vec<Vec<f64>> {
    vars.iter()
        .map(|v| match tape.grad(*v) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; tape.value(*v).len()],
        })
        .collect()
}

fn diverged(epoch: usize, err: GpnError) -> GpnError {
    match err {
        GpnError::Training { .. } => err,
        other => GpnError::Training {
            epoch,
            message: other.to_string(),
        },
    }
}

fn check_loss(epoch: usize, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(GpnError::Training {
            epoch,
            message: format!("loss became {value}"),
        })
    }
}

/// Flow-only pre-training on fixed latent codes.
fn warmup_epoch(model: &mut Gpn, latent: &Tensor, data: &TrainData<'_>, adam: &mut AdamState) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.density().bind(&mut tape, true);
    let z = tape.constant(latent.clone());
    let loss = bound.warmup_loss(&mut tape, z, data.labels, data.train_idx)?;
    let value = tape.value(loss).item();
    tape.backward(loss)?;
    let grads = collect_grads(&tape, &bound.vars());
    let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
    let mut params: Vec<&mut [f64]> = model
        .parameters_mut()
        .into_iter()
        .filter(|(g, _)| *g == ParamGroup::Flow)
        .map(|(_, p)| p)
        .collect();
    adam.step(&mut params, &grad_refs)?;
    Ok(value)
}

fn joint_epoch(
    model: &mut Gpn,
    op: &Arc<PropagationOperator>,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    adam: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let x = tape.constant(data.features.clone());
    let fw = bound.forward(&mut tape, x, op, true, rng)?;
    let loss = bayesian_loss(&mut tape, fw.alpha, data.labels, data.train_idx, &cfg.loss)?;
    let value = tape.value(loss).item();
    tape.backward(loss)?;
    let grads = collect_grads(&tape, &bound.vars(&tape));
    let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
    let mut params: Vec<&mut [f64]> = model.parameters_mut().into_iter().map(|(_, p)| p).collect();
    adam.step(&mut params, &grad_refs)?;
    Ok(value)
}

/// Bayesian loss on `idx` in inference mode.
pub fn evaluate_loss(
    model: &Gpn,
    op: &Arc<PropagationOperator>,
    features: &Tensor,
    labels: &[usize],
    idx: &[usize],
    loss: &LossConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let x = tape.constant(features.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fw = bound.forward(&mut tape, x, op, false, &mut rng)?;
    let l = bayesian_loss(&mut tape, fw.alpha, labels, idx, loss)?;
    Ok(tape.value(l).item())
}

/// Warm-up of the flows followed by joint training with early stopping.
///
/// The returned model holds the parameters with the lowest validation loss.
pub fn fit(mut model: Gpn, op: &Arc<PropagationOperator>, data: &TrainData<'_>, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    data.validate(model.config().num_classes)?;
    if op.num_nodes() != data.features.rows() {
        return Err(GpnError::shape(format!(
            "propagation covers {} nodes, features have {}",
            op.num_nodes(),
            data.features.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();

    if cfg.warmup_epochs > 0 {
        let latent = model.encoder().encode(data.features)?;
        let flow_sizes: Vec<usize> = model
            .named_parameters()
            .iter()
            .filter(|(_, g, _)| *g == ParamGroup::Flow)
            .map(|(_, _, p)| p.len())
            .collect();
        let mut adam = AdamState::new(cfg.learning_rate, &flow_sizes, vec![0.0; flow_sizes.len()])?;
        for epoch in 0..cfg.warmup_epochs {
            let loss = warmup_epoch(&mut model, &latent, data, &mut adam).map_err(|e| diverged(epoch, e))?;
            history.push(EpochRecord {
                epoch,
                phase: Phase::Warmup,
                train_loss: check_loss(epoch, loss)?,
                val_loss: None,
            });
        }
    }

    let named = model.named_parameters();
    let sizes: Vec<usize> = named.iter().map(|(_, _, p)| p.len()).collect();
    let decay: Vec<f64> = named
        .iter()
        .map(|(_, g, _)| if *g == ParamGroup::Encoder { cfg.weight_decay } else { 0.0 })
        .collect();
    let mut adam = AdamState::new(cfg.learning_rate, &sizes, decay)?;

    let mut stopper = EarlyStopping::new(cfg.patience);
    let start_epoch = cfg.warmup_epochs;
    let mut best = snapshot(&model);
    let initial_val = evaluate_loss(&model, op, data.features, data.labels, data.val_idx, &cfg.loss)
        .map_err(|e| diverged(start_epoch, e))?;
    stopper.observe(start_epoch, check_loss(start_epoch, initial_val)?);

    for step in 0..cfg.max_epochs {
        let epoch = start_epoch + step + 1;
        let train_loss =
            joint_epoch(&mut model, op, data, cfg, &mut adam, &mut rng).map_err(|e| diverged(epoch, e))?;
        let train_loss = check_loss(epoch, train_loss)?;
        let val_loss = evaluate_loss(&model, op, data.features, data.labels, data.val_idx, &cfg.loss)
            .map_err(|e| diverged(epoch, e))?;
        let val_loss = check_loss(epoch, val_loss)?;
        history.push(EpochRecord {
            epoch,
            phase: Phase::Joint,
            train_loss,
            val_loss: Some(val_loss),
        });
        if stopper.observe(epoch, val_loss) {
            best = snapshot(&model);
        }
        if stopper.should_stop() {
            break;
        }
    }
    restore(&mut model, &best);
    Ok(FitResult {
        model,
        history,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
    })
}

/// Initializes a model from `cfg.seed` and trains it.
pub fn train(
    config: GpnConfig,
    op: &Arc<PropagationOperator>,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Gpn::init(config, &mut rng)?;
    // Dropout draws from a stream distinct from initialization.
    let cfg = TrainConfig {
        seed: cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
        ..cfg.clone()
    };
    fit(model, op, data, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Normalization, SparseGraph};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    struct Toy {
        features: Tensor,
        labels: Vec<usize>,
        graph: SparseGraph,
        train: Vec<usize>,
        val: Vec<usize>,
    }

    fn toy(seed: u64) -> Toy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_per, c, d) = (15, 2, 4);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for y in 0..c {
            for _ in 0..n_per {
                rows.push((0..d).map(|j| if j == y { 2.0 } else { 0.0 } + noise.sample(&mut rng)).collect::<Vec<f64>>());
                labels.push(y);
            }
        }
        let n = rows.len();
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if labels[u] == labels[v] && rng.random::<f64>() < 0.2 {
                    edges.push((u, v));
                }
            }
        }
        let train = vec![0, 1, 2, 15, 16, 17];
        let val = vec![3, 4, 5, 18, 19, 20];
        Toy {
            features: Tensor::from_rows(&rows).unwrap(),
            labels,
            graph: SparseGraph::from_edge_list(n, &edges).unwrap(),
            train,
            val,
        }
    }

    fn small_config(d: usize, c: usize) -> GpnConfig {
        GpnConfig {
            hidden_dim: 8,
            latent_dim: 2,
            n_radial: 2,
            ..GpnConfig::new(d, c)
        }
    }

    fn run(t: &Toy, cfg: &TrainConfig) -> FitResult {
        let config = small_config(4, 2);
        let op = Arc::new(PropagationOperator::with_defaults(&t.graph, Normalization::Symmetric).unwrap());
        let data = TrainData {
            features: &t.features,
            labels: &t.labels,
            train_idx: &t.train,
            val_idx: &t.val,
        };
        train(config, &op, &data, cfg).unwrap()
    }

    #[test]
    fn early_stopping_rule() {
        let mut s = EarlyStopping::new(1);
        assert!(s.observe(0, 3.0));
        assert!(!s.should_stop());
        assert!(s.observe(1, 2.0));
        assert!(!s.observe(2, 2.0));
        assert!(s.should_stop());
        assert_eq!(s.best_epoch(), 1);

        let mut s = EarlyStopping::new(3);
        s.observe(0, 1.0);
        s.observe(1, 1.5);
        s.observe(2, 0.5);
        s.observe(3, 0.7);
        s.observe(4, 0.6);
        assert!(!s.should_stop());
        s.observe(5, 0.9);
        assert!(s.should_stop());
    }

    #[test]
    fn patience_one_stops_after_first_non_improvement() {
        let t = toy(3);
        let cfg = TrainConfig {
            patience: 1,
            max_epochs: 500,
            ..TrainConfig::default()
        };
        let res = run(&t, &cfg);
        let joint: Vec<&EpochRecord> = res.history.iter().filter(|r| r.phase == Phase::Joint).collect();
        let last = joint.last().unwrap();
        let prev_best = joint[..joint.len() - 1]
            .iter()
            .filter_map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert!(joint.len() < 500);
        assert!(last.val_loss.unwrap() >= prev_best.min(res.best_val_loss));
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let t = toy(1);
        let cfg = TrainConfig {
            max_epochs: 60,
            seed: 7,
            ..TrainConfig::default()
        };
        let a = run(&t, &cfg);
        let b = run(&t, &cfg);
        assert_eq!(a.history, b.history);
        assert_eq!(snapshot(&a.model), snapshot(&b.model));
        assert_eq!(a.history.iter().filter(|r| r.phase == Phase::Warmup).count(), 5);

        let joint: Vec<f64> = a.history.iter().filter(|r| r.phase == Phase::Joint).map(|r| r.train_loss).collect();
        assert!(joint.last().unwrap() < &joint[0]);

        let op = Arc::new(PropagationOperator::with_defaults(&t.graph, Normalization::Symmetric).unwrap());
        let val = evaluate_loss(&a.model, &op, &t.features, &t.labels, &t.val, &cfg.loss).unwrap();
        assert!((val - a.best_val_loss).abs() < 1e-12);

        let other = run(&t, &TrainConfig { seed: 8, ..cfg.clone() });
        assert_ne!(snapshot(&a.model), snapshot(&other.model));
    }

    #[test]
    fn warmup_leaves_encoder_untouched() {
        let t = toy(2);
        let config = small_config(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Gpn::init(config.clone(), &mut rng).unwrap();
        let before = snapshot(&model);
        let op = Arc::new(PropagationOperator::with_defaults(&t.graph, Normalization::Symmetric).unwrap());
        let data = TrainData {
            features: &t.features,
            labels: &t.labels,
            train_idx: &t.train,
            val_idx: &t.val,
        };
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let res = fit(model, &op, &data, &cfg).unwrap();
        let after = snapshot(&res.model);
        let named = res.model.named_parameters();
        // With no joint epochs the warmed-up parameters are kept.
        for ((name, g, _), (a, b)) in named.iter().zip(before.iter().zip(&after)) {
            if *g == ParamGroup::Encoder {
                assert_eq!(a, b, "{name}");
            }
        }
        assert_ne!(before, after);

        // Warm-up alone changes only the flows.
        let mut model = Gpn::from_blocks(config, &before).unwrap();
        let latent = model.encoder().encode(&t.features).unwrap();
        let sizes: Vec<usize> = named.iter().filter(|(_, g, _)| *g == ParamGroup::Flow).map(|(_, _, p)| p.len()).collect();
        let mut adam = AdamState::new(0.01, &sizes, vec![0.0; sizes.len()]).unwrap();
        let l0 = warmup_epoch(&mut model, &latent, &data, &mut adam).unwrap();
        for _ in 0..20 {
            warmup_epoch(&mut model, &latent, &data, &mut adam).unwrap();
        }
        let l1 = warmup_epoch(&mut model, &latent, &data, &mut adam).unwrap();
        assert!(l1 < l0);
        let changed = snapshot(&model);
        for ((name, g, _), (a, b)) in named.iter().zip(before.iter().zip(&changed)) {
            if *g == ParamGroup::Encoder {
                assert_eq!(a, b, "{name}");
            }
        }
        assert_ne!(before, changed);
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = toy(0);
        let op = Arc::new(PropagationOperator::with_defaults(&t.graph, Normalization::Symmetric).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Gpn::init(small_config(4, 2), &mut rng).unwrap();
        let empty: Vec<usize> = Vec::new();
        let data = TrainData {
            features: &t.features,
            labels: &t.labels,
            train_idx: &empty,
            val_idx: &t.val,
        };
        assert!(fit(model.clone(), &op, &data, &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let data = TrainData { train_idx: &t.train, ..data };
        assert!(fit(model, &op, &data, &bad).is_err());
    }

    #[test]
    fn divergence_reports_epoch() {
        let t = toy(0);
        let op = Arc::new(PropagationOperator::with_defaults(&t.graph, Normalization::Symmetric).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Gpn::init(small_config(4, 2), &mut rng).unwrap();
        for (g, p) in model.parameters_mut() {
            if g == ParamGroup::Encoder {
                p.iter_mut().for_each(|v| *v = 1e200);
            }
        }
        let data = TrainData {
            features: &t.features,
            labels: &t.labels,
            train_idx: &t.train,
            val_idx: &t.val,
        };
        let err = fit(model, &op, &data, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, GpnError::Training { epoch: 0, .. }), "{err}");
    }
}
