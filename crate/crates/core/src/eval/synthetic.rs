use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::diff::Tensor;
use crate::error::{GpnError, Result};
use crate::graph::SparseGraph;

/// Gaussian class clusters on a graph with controlled homophily.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub nodes_per_class: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Probability that a sampled edge joins two nodes of the same class.
    pub homophily: f64,
    /// Distance of class means from the origin in units of `noise_std`.
    pub separation: f64,
    /// Standard deviation of the isotropic class noise.
    pub noise_std: f64,
    pub avg_degree: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(nodes_per_class: usize, num_classes: usize, feature_dim: usize, homophily: f64, seed: u64) -> Self {
        SyntheticConfig {
            nodes_per_class,
            num_classes,
            feature_dim,
            homophily,
            separation: 4.0,
            noise_std: 0.05,
            avg_degree: 10.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.nodes_per_class < 2 || self.num_classes == 0 {
            return Err(GpnError::Parameter("need at least two nodes per class and one class".into()));
        }
        if self.feature_dim < self.num_classes {
            return Err(GpnError::Parameter(format!(
                "feature_dim {} must be at least num_classes {}",
                self.feature_dim, self.num_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return Err(GpnError::Parameter(format!("homophily {} outside [0, 1]", self.homophily)));
        }
        if self.num_classes == 1 && self.homophily < 1.0 {
            return Err(GpnError::Parameter("a single class cannot have inter-class edges".into()));
        }
        if !(self.separation >= 0.0) || !(self.avg_degree >= 0.0) || !(self.noise_std > 0.0) {
            return Err(GpnError::Parameter(
                "separation and degree must be non-negative, noise positive".into(),
            ));
        }
        let n = self.nodes_per_class * self.num_classes;
        if self.avg_degree > (self.nodes_per_class - 1) as f64 {
            return Err(GpnError::Parameter(format!(
                "average degree {} too dense for {n} nodes",
                self.avg_degree
            )));
        }
        Ok(())
    }
}

pub fn make_synthetic_benchmark(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (k, c, d) = (cfg.nodes_per_class, cfg.num_classes, cfg.feature_dim);
    let n = k * c;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels: Vec<usize> = (0..n).map(|v| v / k).collect();

    let mut x = Vec::with_capacity(n * d);
    for &y in &labels {
        for j in 0..d {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let mean = if j == y { cfg.separation * cfg.noise_std } else { 0.0 };
            x.push(mean + cfg.noise_std * noise);
        }
    }

    let target = (cfg.avg_degree * n as f64 / 2.0).round() as usize;
    let mut edges = BTreeSet::new();
    let mut attempts = 0usize;
    while edges.len() < target && attempts < 100 * target + 1000 {
        attempts += 1;
        let u = rng.random_range(0..n);
        let cu = labels[u];
        let cv = if rng.random::<f64>() < cfg.homophily {
            cu
        } else {
            let other = rng.random_range(0..c - 1);
            if other >= cu {
                other + 1
            } else {
                other
            }
        };
        let v = cv * k + rng.random_range(0..k);
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    let graph = SparseGraph::from_edge_list(n, &edges)?;
    let name = format!("synthetic-c{c}-n{k}-h{}", cfg.homophily);
    Dataset::new(name, graph, Tensor::new(vec![n, d], x)?, labels, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_homophily_has_no_cross_edges() {
        let ds = make_synthetic_benchmark(&SyntheticConfig::new(30, 3, 4, 1.0, 0)).unwrap();
        for (u, v) in ds.graph.edges() {
            assert_eq!(ds.labels[u], ds.labels[v]);
        }
        assert!(ds.graph.num_edges() > 0);
    }

    #[test]
    fn homophily_and_degree_are_close_to_target() {
        let ds = make_synthetic_benchmark(&SyntheticConfig::new(200, 4, 8, 0.8, 1)).unwrap();
        let h = ds.graph.homophily(&ds.labels);
        assert!((h - 0.8).abs() < 0.04, "{h}");
        let deg = 2.0 * ds.graph.num_edges() as f64 / ds.num_nodes() as f64;
        assert!((deg - 10.0).abs() < 0.1, "{deg}");
    }

    #[test]
    fn deterministic_under_seed() {
        let a = make_synthetic_benchmark(&SyntheticConfig::new(20, 2, 3, 0.7, 9)).unwrap();
        let b = make_synthetic_benchmark(&SyntheticConfig::new(20, 2, 3, 0.7, 9)).unwrap();
        let c = make_synthetic_benchmark(&SyntheticConfig::new(20, 2, 3, 0.7, 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn linearly_separable_at_four_sigma() {
        // Means 4σ·e₀ and 4σ·e₁: the Bayes rule is x₀ > x₁ with error Φ(-2√2) ≈ 0.23%.
        let ds = make_synthetic_benchmark(&SyntheticConfig::new(2000, 2, 5, 0.5, 2)).unwrap();
        let correct = (0..ds.num_nodes())
            .filter(|&v| {
                let r = ds.features.row(v);
                usize::from(r[1] > r[0]) == ds.labels[v]
            })
            .count();
        assert!(correct as f64 / ds.num_nodes() as f64 >= 0.99);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_synthetic_benchmark(&SyntheticConfig::new(10, 4, 2, 0.5, 0)).is_err());
        assert!(make_synthetic_benchmark(&SyntheticConfig::new(10, 2, 2, 1.5, 0)).is_err());
    }
}
