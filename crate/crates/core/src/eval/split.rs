use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{GpnError, Result};

/// Placeholder label for nodes outside the in-distribution classes.
pub const UNLABELED: usize = usize::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
    pub seed: u64,
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

impl SplitSpec {
    pub fn train_idx(&self) -> Vec<usize> {
        indices(&self.train)
    }

    pub fn val_idx(&self) -> Vec<usize> {
        indices(&self.val)
    }

    pub fn test_idx(&self) -> Vec<usize> {
        indices(&self.test)
    }

    pub fn num_nodes(&self) -> usize {
        self.train.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.05,
            val: 0.15,
            test: 0.80,
        }
    }
}

// Largest-remainder apportionment of `total` over classes with shares `quota`.
fn apportion(quota: &[f64], total: usize, order: &[usize]) -> Vec<usize> {
    let mut counts: Vec<usize> = quota.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut by_remainder = order.to_vec();
    by_remainder.sort_by(|&a, &b| (quota[b] - quota[b].floor()).total_cmp(&(quota[a] - quota[a].floor())));
    for &c in by_remainder.iter().take(total.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

/// Class-stratified train/validation/test masks.
///
/// The global train and validation sizes are `floor(ratio * n)`, shared
/// across classes by largest remainder; every class gets at least one
/// training node and the remainder goes to test.
pub fn stratified_split(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<SplitSpec> {
    let SplitRatios { train, val, test } = ratios;
    if [train, val, test].iter().any(|r| !(*r >= 0.0)) || ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(GpnError::Split(format!("ratios {train}/{val}/{test} must be non-negative and sum to 1")));
    }
    let members = ds.class_members();
    if let Some((c, m)) = members.iter().enumerate().find(|(_, m)| m.len() < 3) {
        return Err(GpnError::Split(format!("class {c} has only {} nodes", m.len())));
    }
    let n = ds.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..ds.num_classes).collect();
    order.shuffle(&mut rng);

    let eps = 1e-9;
    let n_train = (train * n as f64 + eps).floor() as usize;
    let n_val = (val * n as f64 + eps).floor() as usize;
    let train_quota: Vec<f64> = members.iter().map(|m| train * m.len() as f64).collect();
    let val_quota: Vec<f64> = members.iter().map(|m| val * m.len() as f64).collect();
    let mut train_counts = apportion(&train_quota, n_train, &order);
    let val_counts = apportion(&val_quota, n_val, &order);
    for t in &mut train_counts {
        *t = (*t).max(1);
    }

    let mut spec = SplitSpec {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
        seed,
    };
    for (c, nodes) in members.iter().enumerate() {
        let mut nodes = nodes.clone();
        nodes.shuffle(&mut rng);
        let t = train_counts[c].min(nodes.len());
        let v = val_counts[c].min(nodes.len() - t);
        for (k, &node) in nodes.iter().enumerate() {
            if k < t {
                spec.train[node] = true;
            } else if k < t + v {
                spec.val[node] = true;
            } else {
                spec.test[node] = true;
            }
        }
    }
    Ok(spec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureNoise {
    /// Entries drawn from `Ber(0.5)`.
    Bernoulli,
    /// Entries drawn from `N(0, 1)`.
    Normal,
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(GpnError::Parameter(format!("fraction {fraction} outside [0, 1]")));
    }
    Ok(())
}

/// Replaces the feature rows of `round(fraction * |pool|)` nodes drawn from
/// `pool` with i.i.d. noise. Returns the new dataset and the sorted set of
/// perturbed nodes.
pub fn perturb_features_among<R: Rng + ?Sized>(
    ds: &Dataset,
    noise: FeatureNoise,
    pool: &[usize],
    fraction: f64,
    rng: &mut R,
) -> Result<(Dataset, Vec<usize>)> {
    check_fraction(fraction)?;
    if let Some(v) = pool.iter().find(|&&v| v >= ds.num_nodes()) {
        return Err(GpnError::Input(format!("node {v} out of range")));
    }
    let count = (fraction * pool.len() as f64).round() as usize;
    let mut chosen: Vec<usize> = pool.choose_multiple(rng, count).copied().collect();
    chosen.sort_unstable();
    if chosen.is_empty() {
        return Ok((ds.clone(), chosen));
    }
    let mut features = ds.features.clone();
    let coin = Bernoulli::new(0.5).expect("valid probability");
    for &v in &chosen {
        for x in features.row_mut(v) {
            *x = match noise {
                FeatureNoise::Bernoulli => f64::from(u8::from(coin.sample(rng))),
                FeatureNoise::Normal => StandardNormal.sample(rng),
            };
        }
    }
    Ok((ds.with_features(features)?, chosen))
}

/// [`perturb_features_among`] over all nodes.
pub fn perturb_features<R: Rng + ?Sized>(
    ds: &Dataset,
    noise: FeatureNoise,
    fraction: f64,
    rng: &mut R,
) -> Result<(Dataset, Vec<usize>)> {
    let pool: Vec<usize> = (0..ds.num_nodes()).collect();
    perturb_features_among(ds, noise, &pool, fraction, rng)
}

/// Training view with some classes held out of train/val but kept in the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct LeftOutSetup {
    /// Re-indexed labels; left-out nodes carry [`UNLABELED`].
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: SplitSpec,
    /// All nodes of left-out classes.
    pub ood: Vec<usize>,
    /// `class_map[old] = Some(new)` for kept classes.
    pub class_map: Vec<Option<usize>>,
}

impl LeftOutSetup {
    pub fn is_ood(&self, v: usize) -> bool {
        self.labels[v] == UNLABELED
    }
}

pub fn left_out_class_setup(ds: &Dataset, split: &SplitSpec, left_out: &[usize]) -> Result<LeftOutSetup> {
    if split.num_nodes() != ds.num_nodes() {
        return Err(GpnError::Input("split does not match dataset".into()));
    }
    let mut dropped = vec![false; ds.num_classes];
    for &c in left_out {
        if c >= ds.num_classes {
            return Err(GpnError::Input(format!("left-out class {c} out of range")));
        }
        dropped[c] = true;
    }
    if dropped.iter().all(|&d| d) {
        return Err(GpnError::Input("cannot leave out every class".into()));
    }
    let mut class_map = vec![None; ds.num_classes];
    let mut next = 0;
    for (c, slot) in class_map.iter_mut().enumerate() {
        if !dropped[c] {
            *slot = Some(next);
            next += 1;
        }
    }
    let labels: Vec<usize> = ds.labels.iter().map(|&y| class_map[y].unwrap_or(UNLABELED)).collect();
    let ood: Vec<usize> = (0..ds.num_nodes()).filter(|&v| labels[v] == UNLABELED).collect();
    let mut split = split.clone();
    for &v in &ood {
        split.train[v] = false;
        split.val[v] = false;
    }
    Ok(LeftOutSetup {
        labels,
        num_classes: next,
        split,
        ood,
        class_map,
    })
}
