use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::metrics::{accuracy, auc_pr, auc_roc, brier, ece};
use super::record::ResultRecord;
use super::split::{left_out_class_setup, perturb_features, perturb_features_among, FeatureNoise, SplitSpec};
use crate::baselines::{gkde_alpha, lp_alpha, GkdeConfig, LpConfig};
use crate::diff::Tensor;
use crate::error::{GpnError, Result};
use crate::graph::{perturb_edges_dice, perturb_edges_random, PropagationOperator};
use crate::model::{Gpn, GpnConfig};
use crate::posterior::{
    posterior, predict, uncertainty_scores, DirichletPosterior, EvidenceSet, ScoreKind, UncertaintyScores,
    DEFAULT_PRIOR,
};
use crate::training::{train, FitResult, TrainConfig, TrainData};

const ECE_BINS: usize = 10;

/// Posterior and evidence for every node of a dataset.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub posterior: DirichletPosterior,
    pub evidence: EvidenceSet,
}

impl Prediction {
    pub fn classes(&self) -> Vec<usize> {
        predict(&self.posterior)
    }

    pub fn probs(&self) -> Tensor {
        self.posterior.mean()
    }

    pub fn scores(&self) -> UncertaintyScores {
        uncertainty_scores(&self.posterior, &self.evidence)
    }
}

/// Anything that maps a dataset to per-node Dirichlet posteriors.
pub trait UncertaintyModel: Sync {
    fn name(&self) -> &str;
    fn predict(&self, ds: &Dataset) -> Result<Prediction>;
}

impl UncertaintyModel for Gpn {
    fn name(&self) -> &str {
        "gpn"
    }

    fn predict(&self, ds: &Dataset) -> Result<Prediction> {
        let op = self.propagation(&ds.graph)?;
        let out = self.evaluate(&ds.features, &op)?;
        Ok(Prediction {
            posterior: out.posterior,
            evidence: out.evidence,
        })
    }
}

fn from_alpha(alpha: Tensor) -> Result<Prediction> {
    let beta = alpha.map(|a| a - DEFAULT_PRIOR);
    Ok(Prediction {
        posterior: posterior(&beta, DEFAULT_PRIOR)?,
        evidence: EvidenceSet::new(beta.clone(), beta)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Gkde,
    Lp,
}

/// Parameterless baseline bound to a set of labeled nodes.
#[derive(Clone, Debug)]
pub struct Baseline {
    pub kind: BaselineKind,
    pub labels: Vec<usize>,
    pub labeled: Vec<usize>,
    pub num_classes: usize,
    pub gkde: GkdeConfig,
    pub lp: LpConfig,
}

impl Baseline {
    pub fn new(kind: BaselineKind, labels: Vec<usize>, labeled: Vec<usize>, num_classes: usize) -> Self {
        Baseline {
            kind,
            labels,
            labeled,
            num_classes,
            gkde: GkdeConfig::default(),
            lp: LpConfig::default(),
        }
    }
}

impl UncertaintyModel for Baseline {
    fn name(&self) -> &str {
        match self.kind {
            BaselineKind::Gkde => "gkde",
            BaselineKind::Lp => "lp",
        }
    }

    fn predict(&self, ds: &Dataset) -> Result<Prediction> {
        let alpha = match self.kind {
            BaselineKind::Gkde => gkde_alpha(&ds.graph, &self.labels, &self.labeled, self.num_classes, &self.gkde)?,
            BaselineKind::Lp => lp_alpha(&ds.graph, &self.labels, &self.labeled, self.num_classes, &self.lp)?,
        };
        from_alpha(alpha)
    }
}

/// Trains a GPN on the train/validation masks of `split`.
///
/// `labels` may differ from the dataset's own, e.g. after leaving classes out.
pub fn train_on_split(
    ds: &Dataset,
    labels: &[usize],
    split: &SplitSpec,
    config: GpnConfig,
    train_cfg: &TrainConfig,
) -> Result<FitResult> {
    let features = &ds.features;
    let train_idx = split.train_idx();
    let val_idx = split.val_idx();
    let op = Arc::new(PropagationOperator::new(
        &ds.graph,
        config.teleport,
        config.iterations,
        config.normalization,
    )?);
    let data = TrainData {
        features,
        labels,
        train_idx: &train_idx,
        val_idx: &val_idx,
    };
    train(config, &op, &data, train_cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodKind {
    FeatureBernoulli,
    FeatureNormal,
    LeftOutClasses,
    EdgesRandom,
    EdgesDice,
    /// Positives are misclassified test nodes of the clean graph.
    Misclassification,
}

impl std::str::FromStr for OodKind {
    type Err = GpnError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| GpnError::Parameter(format!("unknown experiment kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodExperiment {
    pub kind: OodKind,
    /// Fraction of test nodes (feature kinds) or edges (edge kinds).
    pub fraction: f64,
    pub left_out: Vec<usize>,
    pub seed: u64,
}

impl OodExperiment {
    pub fn new(kind: OodKind, fraction: f64, seed: u64) -> Self {
        OodExperiment {
            kind,
            fraction,
            left_out: Vec::new(),
            seed,
        }
    }
}

fn insert_detection(rec: &mut ResultRecord, scores: &UncertaintyScores, idx: &[usize], positive: &[bool]) -> Result<()> {
    let flags: Vec<bool> = idx.iter().map(|&v| positive[v]).collect();
    if flags.iter().all(|&f| f) || flags.iter().all(|&f| !f) {
        return Ok(());
    }
    for kind in ScoreKind::ALL {
        let s = scores.get(kind);
        let sub: Vec<f64> = idx.iter().map(|&v| s[v]).collect();
        rec.insert(format!("auc_roc_{}", kind.name()), auc_roc(&sub, &flags)?);
        rec.insert(format!("auc_pr_{}", kind.name()), auc_pr(&sub, &flags)?);
    }
    Ok(())
}

fn insert_classification(rec: &mut ResultRecord, prefix: &str, pred: &Prediction, labels: &[usize], idx: &[usize]) -> Result<()> {
    if idx.is_empty() {
        return Ok(());
    }
    let probs = pred.probs();
    rec.insert(format!("{prefix}acc"), accuracy(&pred.classes(), labels, idx)?);
    rec.insert(format!("{prefix}ece"), ece(&probs, labels, idx, ECE_BINS)?);
    rec.insert(format!("{prefix}brier"), brier(&probs, labels, idx)?);
    Ok(())
}

/// OOD or misclassification detection on the test mask of `split`.
pub fn run_ood_experiment(
    model: &dyn UncertaintyModel,
    ds: &Dataset,
    split: &SplitSpec,
    exp: &OodExperiment,
) -> Result<ResultRecord> {
    let start = Instant::now();
    let mut rec = ResultRecord::new(
        format!("ood-{}", serde_json::to_value(exp.kind)?.as_str().unwrap_or("unknown")),
        model.name(),
        exp.seed,
        serde_json::to_value(exp)?,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(exp.seed);
    let test = split.test_idx();
    let n = ds.num_nodes();

    match exp.kind {
        OodKind::FeatureBernoulli | OodKind::FeatureNormal => {
            let noise = if exp.kind == OodKind::FeatureNormal {
                FeatureNoise::Normal
            } else {
                FeatureNoise::Bernoulli
            };
            let (shifted, perturbed) = perturb_features_among(ds, noise, &test, exp.fraction, &mut rng)?;
            let pred = model.predict(&shifted)?;
            let mut is_ood = vec![false; n];
            for &v in &perturbed {
                is_ood[v] = true;
            }
            let id: Vec<usize> = test.iter().copied().filter(|&v| !is_ood[v]).collect();
            insert_classification(&mut rec, "id_", &pred, &ds.labels, &id)?;
            insert_classification(&mut rec, "ood_", &pred, &ds.labels, &perturbed)?;
            rec.insert("num_ood", perturbed.len() as f64);
            insert_detection(&mut rec, &pred.scores(), &test, &is_ood)?;
        }
        OodKind::LeftOutClasses => {
            let setup = left_out_class_setup(ds, split, &exp.left_out)?;
            let pred = model.predict(ds)?;
            if pred.posterior.num_classes() != setup.num_classes {
                return Err(GpnError::Input(format!(
                    "model predicts {} classes, {} remain after leaving classes out",
                    pred.posterior.num_classes(),
                    setup.num_classes
                )));
            }
            let is_ood: Vec<bool> = (0..n).map(|v| setup.is_ood(v)).collect();
            let id: Vec<usize> = test.iter().copied().filter(|&v| !is_ood[v]).collect();
            insert_classification(&mut rec, "id_", &pred, &setup.labels, &id)?;
            rec.insert("num_ood", test.iter().filter(|&&v| is_ood[v]).count() as f64);
            insert_detection(&mut rec, &pred.scores(), &test, &is_ood)?;
        }
        OodKind::EdgesRandom | OodKind::EdgesDice => {
            let graph = if exp.kind == OodKind::EdgesRandom {
                perturb_edges_random(&ds.graph, exp.fraction, &mut rng)?
            } else {
                perturb_edges_dice(&ds.graph, exp.fraction, &ds.labels, &mut rng)?
            };
            let pred = model.predict(&ds.with_graph(graph)?)?;
            insert_classification(&mut rec, "id_", &pred, &ds.labels, &test)?;
        }
        OodKind::Misclassification => {
            let pred = model.predict(ds)?;
            let classes = pred.classes();
            let wrong: Vec<bool> = (0..n).map(|v| classes[v] != ds.labels[v]).collect();
            insert_classification(&mut rec, "id_", &pred, &ds.labels, &test)?;
            rec.insert("num_misclassified", test.iter().filter(|&&v| wrong[v]).count() as f64);
            insert_detection(&mut rec, &pred.scores(), &test, &wrong)?;
        }
    }
    rec.runtime_secs = start.elapsed().as_secs_f64();
    Ok(rec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftKind {
    FeatureBernoulli,
    FeatureNormal,
    EdgesRandom,
    EdgesDice,
}

impl std::str::FromStr for ShiftKind {
    type Err = GpnError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| GpnError::Parameter(format!("unknown shift kind {s:?}")))
    }
}

pub const DEFAULT_SHIFT_LEVELS: [f64; 6] = [0.0, 0.1, 0.2, 0.5, 0.8, 0.99];

#[derive(Clone, Copy, Debug)]
struct ShiftSummary {
    acc: f64,
    ece: f64,
    brier: f64,
    alea_conf: f64,
    epist_conf: f64,
    alea_entropy: f64,
}

fn summarize(pred: &Prediction, labels: &[usize], test: &[usize]) -> Result<ShiftSummary> {
    let probs = pred.probs();
    let alpha0 = pred.posterior.alpha0();
    let scores = pred.scores();
    let mean = |f: &dyn Fn(usize) -> f64| test.iter().map(|&v| f(v)).sum::<f64>() / test.len() as f64;
    Ok(ShiftSummary {
        acc: accuracy(&pred.classes(), labels, test)?,
        ece: ece(&probs, labels, test, ECE_BINS)?,
        brier: brier(&probs, labels, test)?,
        alea_conf: mean(&|v| -scores.alea_net[v]),
        epist_conf: mean(&|v| alpha0[v]),
        alea_entropy: mean(&|v| scores.entropy_net[v]),
    })
}

fn level_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Evaluates a trained model under growing perturbation of an evaluation copy.
///
/// Feature levels are the fraction of all nodes whose attributes are replaced;
/// edge levels are the fraction of edges rewired. Relative metrics divide by
/// the clean value.
pub fn run_shift_sweep(
    model: &dyn UncertaintyModel,
    ds: &Dataset,
    split: &SplitSpec,
    kind: ShiftKind,
    levels: &[f64],
    seed: u64,
) -> Result<Vec<ResultRecord>> {
    if let Some(l) = levels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(GpnError::Parameter(format!("shift level {l} outside [0, 1]")));
    }
    let test = split.test_idx();
    let clean = summarize(&model.predict(ds)?, &ds.labels, &test)?;
    let mut out = Vec::with_capacity(levels.len());
    for (i, &level) in levels.iter().enumerate() {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(level_seed(seed, i));
        let shifted = match kind {
            ShiftKind::FeatureBernoulli => perturb_features(ds, FeatureNoise::Bernoulli, level, &mut rng)?.0,
            ShiftKind::FeatureNormal => perturb_features(ds, FeatureNoise::Normal, level, &mut rng)?.0,
            ShiftKind::EdgesRandom => ds.with_graph(perturb_edges_random(&ds.graph, level, &mut rng)?)?,
            ShiftKind::EdgesDice => ds.with_graph(perturb_edges_dice(&ds.graph, level, &ds.labels, &mut rng)?)?,
        };
        let s = summarize(&model.predict(&shifted)?, &ds.labels, &test)?;
        let mut rec = ResultRecord::new(
            format!("shift-{}", serde_json::to_value(kind)?.as_str().unwrap_or("unknown")),
            model.name(),
            seed,
            serde_json::json!({ "kind": kind, "level": level }),
        );
        rec.insert("level", level);
        rec.insert("acc", s.acc);
        rec.insert("ece", s.ece);
        rec.insert("brier", s.brier);
        rec.insert("alea_conf", s.alea_conf);
        rec.insert("epist_conf", s.epist_conf);
        rec.insert("alea_entropy", s.alea_entropy);
        rec.insert("rel_acc", s.acc / clean.acc);
        rec.insert("rel_alea_conf", s.alea_conf / clean.alea_conf);
        rec.insert("rel_epist_conf", s.epist_conf / clean.epist_conf);
        rec.runtime_secs = start.elapsed().as_secs_f64();
        out.push(rec);
    }
    Ok(out)
}

/// Runs `f` for every seed on the rayon pool; results keep seed order.
pub fn run_seeds<T, F>(seeds: &[u64], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    seeds.par_iter().map(|&s| f(s)).collect()
}

/// Mean and sample standard deviation of every metric across records.
pub fn aggregate(records: &[ResultRecord]) -> BTreeMap<String, (f64, f64)> {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        for (k, &v) in &r.metrics {
            values.entry(k.clone()).or_default().push(v);
        }
    }
    values
        .into_iter()
        .map(|(k, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = if v.len() > 1 {
                v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (k, (mean, var.sqrt()))
        })
        .collect()
}
