//! Parameterless Dirichlet baselines: graph-kernel estimates over hop
//! distances (GKDE) and label propagation of class densities (LP).

use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{GpnError, Result};
use crate::graph::{bfs_distances, Normalization, PropagationOperator, SparseGraph, UNREACHABLE};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GkdeConfig {
    pub sigma: f64,
}

impl Default for GkdeConfig {
    fn default() -> Self {
        GkdeConfig { sigma: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpConfig {
    pub teleport: f64,
    pub iterations: usize,
}

impl Default for LpConfig {
    fn default() -> Self {
        LpConfig {
            teleport: 0.1,
            iterations: 10,
        }
    }
}

/// Gaussian kernel `g(d) = exp(-d² / 2σ²) / (σ √(2π))`.
pub fn gaussian_kernel(d: f64, sigma: f64) -> f64 {
    (-d * d / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

fn check_labels(graph: &SparseGraph, labels: &[usize], labeled: &[usize], num_classes: usize) -> Result<()> {
    if labels.len() != graph.num_nodes() {
        return Err(GpnError::Input(format!(
            "{} labels for {} nodes",
            labels.len(),
            graph.num_nodes()
        )));
    }
    if labeled.is_empty() {
        return Err(GpnError::Input("labeled set is empty".into()));
    }
    for &u in labeled {
        if u >= graph.num_nodes() {
            return Err(GpnError::Input(format!("labeled node {u} out of range")));
        }
        if labels[u] >= num_classes {
            return Err(GpnError::Input(format!("label {} out of range", labels[u])));
        }
    }
    Ok(())
}

/// `α_c(v) = 1 + Σ_{u labeled, y_u = c} g(d(v, u))`, unreachable pairs adding nothing.
pub fn gkde_alpha(
    graph: &SparseGraph,
    labels: &[usize],
    labeled: &[usize],
    num_classes: usize,
    cfg: &GkdeConfig,
) -> Result<Tensor> {
    if !(cfg.sigma > 0.0) || !cfg.sigma.is_finite() {
        return Err(GpnError::Parameter(format!("sigma {} must be positive", cfg.sigma)));
    }
    check_labels(graph, labels, labeled, num_classes)?;
    let n = graph.num_nodes();
    let dists = bfs_distances(graph, labeled)?;
    let mut alpha = Tensor::ones(&[n, num_classes]);
    let data = alpha.data_mut();
    for (&u, dist) in labeled.iter().zip(&dists) {
        let c = labels[u];
        for (v, &d) in dist.iter().enumerate() {
            if d != UNREACHABLE {
                data[v * num_classes + c] += gaussian_kernel(f64::from(d), cfg.sigma);
            }
        }
    }
    Ok(alpha)
}

/// Per-class densities `ρ₀(u|c) = 1{u labeled with c} / |L_c|` diffused by
/// mass-preserving PPR; returns `1 + ρ`.
pub fn lp_alpha(
    graph: &SparseGraph,
    labels: &[usize],
    labeled: &[usize],
    num_classes: usize,
    cfg: &LpConfig,
) -> Result<Tensor> {
    let rho = lp_density(graph, labels, labeled, num_classes, cfg)?;
    Ok(rho.map(|r| 1.0 + r))
}

/// Diffused class densities `ρ(v|c)`; each column sums to one.
pub fn lp_density(
    graph: &SparseGraph,
    labels: &[usize],
    labeled: &[usize],
    num_classes: usize,
    cfg: &LpConfig,
) -> Result<Tensor> {
    check_labels(graph, labels, labeled, num_classes)?;
    let n = graph.num_nodes();
    let mut counts = vec![0usize; num_classes];
    for &u in labeled {
        counts[labels[u]] += 1;
    }
    if let Some(c) = counts.iter().position(|&k| k == 0) {
        return Err(GpnError::Input(format!("class {c} has no labeled node")));
    }
    let mut rho0 = Tensor::zeros(&[n, num_classes]);
    for &u in labeled {
        let c = labels[u];
        let cur = rho0.get(u, c);
        rho0.set(u, c, cur + 1.0 / counts[c] as f64);
    }
    let op = PropagationOperator::new(graph, cfg.teleport, cfg.iterations, Normalization::ColumnStochastic)?;
    op.propagate(&rho0)
}
