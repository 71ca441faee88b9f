//! Evidence, Dirichlet posteriors, predictions and uncertainty scores.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{GpnError, Result};
use crate::graph::{propagate, PropagationOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetScaling {
    /// `N = sqrt(4π)^L`.
    PerLatent,
    /// `N = sqrt(4π)^L · C`.
    PerClass,
}

impl std::str::FromStr for BudgetScaling {
    type Err = GpnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-latent" | "latent" => Ok(BudgetScaling::PerLatent),
            "per-class" | "class" => Ok(BudgetScaling::PerClass),
            other => Err(GpnError::Parameter(format!("unknown budget scaling `{other}`"))),
        }
    }
}

/// Global evidence scale, kept in the log domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertaintyBudget {
    pub latent_dim: usize,
    pub scaling: BudgetScaling,
}

impl CertaintyBudget {
    pub fn new(latent_dim: usize, scaling: BudgetScaling) -> Self {
        CertaintyBudget { latent_dim, scaling }
    }

    /// `log N` for `num_classes` classes.
    pub fn log_budget(&self, num_classes: usize) -> f64 {
        let base = 0.5 * self.latent_dim as f64 * (4.0 * std::f64::consts::PI).ln();
        match self.scaling {
            BudgetScaling::PerLatent => base,
            BudgetScaling::PerClass => base + (num_classes as f64).ln(),
        }
    }
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if let Some(bad) = t.data().iter().find(|v| !v.is_finite()) {
        return Err(GpnError::Numeric(format!("non-finite {what}: {bad}")));
    }
    Ok(())
}

/// `β^ft = exp(log N + log p(z | c) - log C)` on the tape.
pub fn feature_evidence(tape: &mut Tape, log_dens: Var, budget: &CertaintyBudget) -> Result<Var> {
    let num_classes = tape.value(log_dens).cols();
    check_finite(tape.value(log_dens), "log density")?;
    let shift = budget.log_budget(num_classes) - (num_classes as f64).ln();
    let shifted = tape.add_scalar(log_dens, shift);
    tape.exp(shifted)
}

/// `β^agg = Π β^ft` by power iteration on the tape.
pub fn aggregate_evidence(tape: &mut Tape, beta_ft: Var, op: &Arc<PropagationOperator>) -> Result<Var> {
    propagate(tape, op, beta_ft)
}

/// Plain-tensor form of [`feature_evidence`].
pub fn feature_evidence_values(log_dens: &Tensor, budget: &CertaintyBudget) -> Result<Tensor> {
    check_finite(log_dens, "log density")?;
    let c = log_dens.cols();
    let shift = budget.log_budget(c) - (c as f64).ln();
    Ok(log_dens.map(|v| (v + shift).exp()))
}

fn row_sums(t: &Tensor) -> Tensor {
    Tensor::vector((0..t.rows()).map(|i| t.row(i).iter().sum()).collect())
}

/// Feature-level and aggregated pseudo-counts with their totals.
#[derive(Clone, Debug, PartialEq)]
pub struct EvidenceSet {
    pub beta_ft: Tensor,
    pub beta_agg: Tensor,
    pub alpha0_ft: Tensor,
    pub alpha0_agg: Tensor,
}

impl EvidenceSet {
    pub fn new(beta_ft: Tensor, beta_agg: Tensor) -> Result<Self> {
        if beta_ft.shape() != beta_agg.shape() {
            return Err(GpnError::shape("feature and aggregated evidence differ in shape"));
        }
        Ok(EvidenceSet {
            alpha0_ft: row_sums(&beta_ft),
            alpha0_agg: row_sums(&beta_agg),
            beta_ft,
            beta_agg,
        })
    }

    /// Computes `β^agg` from `β^ft` with `op`.
    pub fn from_feature_evidence(beta_ft: Tensor, op: &PropagationOperator) -> Result<Self> {
        let beta_agg = op.propagate(&beta_ft)?;
        Self::new(beta_ft, beta_agg)
    }

    pub fn num_nodes(&self) -> usize {
        self.beta_ft.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.beta_ft.cols()
    }

    /// `p̄^ft = β^ft / α₀^ft`; uniform for rows without evidence.
    pub fn mean_ft(&self) -> Tensor {
        normalize_rows(&self.beta_ft)
    }

    /// `β^agg / α₀^agg`; uniform for rows without evidence.
    pub fn mean_agg(&self) -> Tensor {
        normalize_rows(&self.beta_agg)
    }
}

fn normalize_rows(t: &Tensor) -> Tensor {
    let c = t.cols();
    let mut out = t.clone();
    for i in 0..t.rows() {
        let row = out.row_mut(i);
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / c as f64);
        }
    }
    out
}

/// Per-node `Dir(α)` with `α = prior + β^agg`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletPosterior {
    pub alpha: Tensor,
    pub prior_value: f64,
}

pub const DEFAULT_PRIOR: f64 = 1.0;

impl DirichletPosterior {
    pub fn num_nodes(&self) -> usize {
        self.alpha.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.cols()
    }

    /// `α₀ = Σ_c α_c` per node.
    pub fn alpha0(&self) -> Vec<f64> {
        (0..self.alpha.rows()).map(|i| self.alpha.row(i).iter().sum()).collect()
    }

    /// `p̄ = α / α₀`.
    pub fn mean(&self) -> Tensor {
        normalize_rows(&self.alpha)
    }
}

pub fn posterior(beta_agg: &Tensor, prior_value: f64) -> Result<DirichletPosterior> {
    if !(prior_value > 0.0) {
        return Err(GpnError::Parameter(format!("prior value {prior_value} must be positive")));
    }
    if beta_agg.data().iter().any(|&b| b < 0.0) {
        return Err(GpnError::Input("negative evidence".into()));
    }
    Ok(DirichletPosterior {
        alpha: beta_agg.map(|b| b + prior_value),
        prior_value,
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict(post: &DirichletPosterior) -> Vec<usize> {
    (0..post.num_nodes()).map(|i| argmax(post.alpha.row(i))).collect()
}

/// `-Σ p log p` with `0 log 0 = 0`.
pub fn entropy_cat(p: &[f64]) -> Result<f64> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|&v| v < 0.0 || !v.is_finite()) || (total - 1.0).abs() > 1e-9 {
        return Err(GpnError::Input(format!("not a probability vector: {p:?}")));
    }
    Ok(entropy_unchecked(p))
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Uncertainty scores per node; larger means more uncertain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScores {
    /// `-max_c p̄^agg_c`, from the posterior mean.
    pub alea_net: Vec<f64>,
    /// `-max_c p̄^ft_c`.
    pub alea_ft: Vec<f64>,
    /// `-Σ_c α_c` of the posterior.
    pub epist_net: Vec<f64>,
    /// `-α₀^ft`.
    pub epist_ft: Vec<f64>,
    /// `H[Cat(p̄^agg)]`.
    pub entropy_net: Vec<f64>,
    /// `H[Cat(p̄^ft)]`.
    pub entropy_ft: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    AleaNet,
    AleaFt,
    EpistNet,
    EpistFt,
    EntropyNet,
    EntropyFt,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 6] = [
        ScoreKind::AleaNet,
        ScoreKind::AleaFt,
        ScoreKind::EpistNet,
        ScoreKind::EpistFt,
        ScoreKind::EntropyNet,
        ScoreKind::EntropyFt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::AleaNet => "alea_net",
            ScoreKind::AleaFt => "alea_ft",
            ScoreKind::EpistNet => "epist_net",
            ScoreKind::EpistFt => "epist_ft",
            ScoreKind::EntropyNet => "entropy_net",
            ScoreKind::EntropyFt => "entropy_ft",
        }
    }
}

impl UncertaintyScores {
    pub fn get(&self, kind: ScoreKind) -> &[f64] {
        match kind {
            ScoreKind::AleaNet => &self.alea_net,
            ScoreKind::AleaFt => &self.alea_ft,
            ScoreKind::EpistNet => &self.epist_net,
            ScoreKind::EpistFt => &self.epist_ft,
            ScoreKind::EntropyNet => &self.entropy_net,
            ScoreKind::EntropyFt => &self.entropy_ft,
        }
    }
}

pub fn uncertainty_scores(post: &DirichletPosterior, evidence: &EvidenceSet) -> UncertaintyScores {
    let p_net = post.mean();
    let p_ft = evidence.mean_ft();
    let n = post.num_nodes();
    let max_of = |t: &Tensor, i: usize| t.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    UncertaintyScores {
        alea_net: (0..n).map(|i| -max_of(&p_net, i)).collect(),
        alea_ft: (0..n).map(|i| -max_of(&p_ft, i)).collect(),
        epist_net: post.alpha0().into_iter().map(|a| -a).collect(),
        epist_ft: evidence.alpha0_ft.data().iter().map(|a| -a).collect(),
        entropy_net: (0..n).map(|i| entropy_unchecked(p_net.row(i))).collect(),
        entropy_ft: (0..n).map(|i| entropy_unchecked(p_ft.row(i))).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Normalization, SparseGraph};

    #[test]
    fn budget_in_log_domain() {
        let b = CertaintyBudget::new(2, BudgetScaling::PerLatent);
        assert!((b.log_budget(3) - (4.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        let bc = CertaintyBudget::new(2, BudgetScaling::PerClass);
        assert!((bc.log_budget(3) - b.log_budget(3) - 3f64.ln()).abs() < 1e-15);
        // 16 latent dims: about 6.2e8, representable only through its log
        let b16 = CertaintyBudget::new(16, BudgetScaling::PerLatent);
        assert!((b16.log_budget(2).exp() / 6.2e8 - 1.0).abs() < 0.01);
    }

    #[test]
    fn feature_evidence_unit_case() {
        // sqrt(4π)^2 · 1/(2π) · 1/2 = 1
        let b = CertaintyBudget::new(2, BudgetScaling::PerLatent);
        let ld = Tensor::full(&[1, 2], -(2.0 * std::f64::consts::PI).ln());
        let beta = feature_evidence_values(&ld, &b).unwrap();
        for &v in beta.data() {
            assert!((v - 1.0).abs() < 1e-14);
        }
        let far = Tensor::full(&[1, 2], -1e4);
        assert!(feature_evidence_values(&far, &b).unwrap().data().iter().all(|&v| v == 0.0));
        let bad = Tensor::full(&[1, 2], f64::NAN);
        assert!(matches!(feature_evidence_values(&bad, &b), Err(GpnError::Numeric(_))));
    }

    #[test]
    fn doubling_classes_halves_evidence() {
        let b = CertaintyBudget::new(3, BudgetScaling::PerLatent);
        let two = feature_evidence_values(&Tensor::full(&[1, 2], -2.0), &b).unwrap();
        let four = feature_evidence_values(&Tensor::full(&[1, 4], -2.0), &b).unwrap();
        assert!((two.get(0, 0) / four.get(0, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tape_and_value_paths_agree() {
        let b = CertaintyBudget::new(4, BudgetScaling::PerClass);
        let ld = Tensor::from_rows(&[vec![-3.0, -5.0, -1.0], vec![-8.0, -2.5, -4.0]]).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(ld.clone());
        let beta = feature_evidence(&mut tape, v, &b).unwrap();
        assert_eq!(tape.value(beta), &feature_evidence_values(&ld, &b).unwrap());
    }

    #[test]
    fn edgeless_aggregation_is_identity() {
        let op = Arc::new(PropagationOperator::with_defaults(&SparseGraph::empty(3), Normalization::Symmetric).unwrap());
        let beta = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 3.0], vec![4.0, 0.5]]).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(beta.clone());
        let agg = aggregate_evidence(&mut tape, v, &op).unwrap();
        assert_eq!(tape.value(agg), &beta);
    }

    #[test]
    fn aggregated_total_is_diffused_total() {
        let g = SparseGraph::from_edge_list(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let op = PropagationOperator::with_defaults(&g, Normalization::Symmetric).unwrap();
        let beta = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 3.0], vec![4.0, 0.5], vec![0.1, 0.2]]).unwrap();
        let ev = EvidenceSet::from_feature_evidence(beta, &op).unwrap();
        let diffused = op.propagate(&ev.alpha0_ft).unwrap();
        for (a, b) in ev.alpha0_agg.data().iter().zip(diffused.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(ev.beta_agg.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn posterior_prediction_and_mean() {
        let post = posterior(&Tensor::from_rows(&[vec![3.0, 0.0, 1.0]]).unwrap(), 1.0).unwrap();
        assert_eq!(post.alpha.data(), &[4.0, 1.0, 2.0]);
        let mean = post.mean();
        for (m, want) in mean.data().iter().zip([4.0 / 7.0, 1.0 / 7.0, 2.0 / 7.0]) {
            assert!((m - want).abs() < 1e-15);
        }
        assert_eq!(predict(&post), vec![0]);
        let prior_only = posterior(&Tensor::zeros(&[2, 3]), 1.0).unwrap();
        assert_eq!(prior_only.alpha, Tensor::ones(&[2, 3]));
        assert_eq!(predict(&prior_only), vec![0, 0]);
        assert!(posterior(&Tensor::zeros(&[1, 2]), 0.0).is_err());
    }

    #[test]
    fn argmax_scale_invariant() {
        let row = [0.3, 2.5, 2.4, 0.0];
        for s in [1e-6, 0.5, 7.0, 1e8] {
            let scaled: Vec<f64> = row.iter().map(|v| v * s).collect();
            assert_eq!(argmax(&scaled), argmax(&row));
        }
    }

    #[test]
    fn score_examples() {
        let ev = EvidenceSet::new(
            Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap(),
            Tensor::from_rows(&[vec![3.0, 0.0, 1.0], vec![0.0, 0.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let post = posterior(&ev.beta_agg, 1.0).unwrap();
        let s = uncertainty_scores(&post, &ev);
        assert_eq!(s.alea_ft[0], -1.0);
        assert!((s.alea_ft[1] + 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.epist_net[0], -7.0);
        assert_eq!(s.epist_ft, vec![-1.0, -0.0]);
        assert!((s.alea_net[0] + 4.0 / 7.0).abs() < 1e-15);
        assert_eq!(s.entropy_ft[0], 0.0);

        let uniform = EvidenceSet::new(Tensor::ones(&[1, 4]), Tensor::ones(&[1, 4])).unwrap();
        let post = posterior(&uniform.beta_agg, 1.0).unwrap();
        assert_eq!(uncertainty_scores(&post, &uniform).alea_net[0], -0.25);
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy_cat(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy_cat(&[0.5, 0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        // -(0.25 ln 0.25 + 0.75 ln 0.75)
        assert!((entropy_cat(&[0.25, 0.75]).unwrap() - 0.562_335_144_618_163).abs() < 1e-12);
        assert!(entropy_cat(&[0.5, 0.6]).is_err());
        assert!(entropy_cat(&[-0.1, 1.1]).is_err());
    }

    #[test]
    fn vacuity_rankings_agree() {
        // -α₀ and C / α₀ rank nodes identically.
        let alpha0 = [3.0, 1.5, 10.0, 2.2, 2.2, 7.0];
        let c = 4.0;
        let rank = |scores: Vec<f64>| {
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
            idx
        };
        assert_eq!(
            rank(alpha0.iter().map(|a| -a).collect()),
            rank(alpha0.iter().map(|a| c / a).collect())
        );
    }
}
