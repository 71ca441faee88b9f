//! Closed-form Bayesian loss under a Dirichlet posterior.

use serde::{Deserialize, Serialize};

use crate::diff::special::{digamma, lgamma};
use crate::diff::{Tape, Var};
use crate::error::{GpnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight λ of the Dirichlet entropy regularizer.
    pub entropy_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { entropy_weight: 1e-3 }
    }
}

fn check_alpha(alpha: &[f64]) -> Result<()> {
    if alpha.is_empty() || alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(GpnError::Domain(format!("Dirichlet parameters must be positive: {alpha:?}")));
    }
    Ok(())
}

/// `E_{p ~ Dir(α)}[log Cat(y | p)] = ψ(α_y) - ψ(α₀)`.
pub fn expected_log_likelihood(alpha: &[f64], y: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if y >= alpha.len() {
        return Err(GpnError::Input(format!("class {y} out of range")));
    }
    let a0: f64 = alpha.iter().sum();
    Ok(digamma(alpha[y])? - digamma(a0)?)
}

/// Differential entropy of `Dir(α)`:
/// `log B(α) + (α₀ - C) ψ(α₀) - Σ_c (α_c - 1) ψ(α_c)`.
pub fn dirichlet_entropy(alpha: &[f64]) -> Result<f64> {
    check_alpha(alpha)?;
    let a0: f64 = alpha.iter().sum();
    let c = alpha.len() as f64;
    let mut log_b = -lgamma(a0)?;
    let mut tail = 0.0;
    for &a in alpha {
        log_b += lgamma(a)?;
        tail += (a - 1.0) * digamma(a)?;
    }
    Ok(log_b + (a0 - c) * digamma(a0)? - tail)
}

/// Mean over `idx` of `-(ψ(α_y) - ψ(α₀)) - λ H[Dir(α)]`, recorded on the tape.
///
/// `alpha` is the `[n x C]` posterior parameter matrix.
pub fn bayesian_loss(tape: &mut Tape, alpha: Var, labels: &[usize], idx: &[usize], cfg: &LossConfig) -> Result<Var> {
    if idx.is_empty() {
        return Err(GpnError::Parameter("loss needs at least one labeled node".into()));
    }
    let num_classes = tape.value(alpha).cols();
    let ys: Vec<usize> = idx.iter().map(|&v| labels[v]).collect();
    let a = tape.gather_rows(alpha, idx)?;
    let a0 = tape.sum_cols(a)?;
    let ay = tape.pick(a, &ys)?;
    let psi_y = tape.digamma(ay)?;
    let psi_0 = tape.digamma(a0)?;
    let neg_ell = tape.sub(psi_0, psi_y)?;

    let per_node = if cfg.entropy_weight != 0.0 {
        let lg = tape.lgamma(a)?;
        let lg_sum = tape.sum_cols(lg)?;
        let lg0 = tape.lgamma(a0)?;
        let log_b = tape.sub(lg_sum, lg0)?;
        let a0_minus_c = tape.add_scalar(a0, -(num_classes as f64));
        let mid = tape.mul(a0_minus_c, psi_0)?;
        let psi_a = tape.digamma(a)?;
        let a_minus_1 = tape.add_scalar(a, -1.0);
        let tail = tape.mul(a_minus_1, psi_a)?;
        let tail = tape.sum_cols(tail)?;
        let ent = tape.add(log_b, mid)?;
        let ent = tape.sub(ent, tail)?;
        let weighted = tape.scale(ent, cfg.entropy_weight);
        tape.sub(neg_ell, weighted)?
    } else {
        neg_ell
    };
    Ok(tape.mean(per_node))
}
