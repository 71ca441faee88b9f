use crate::diff::Tensor;
use crate::error::{GpnError, Result};
use crate::posterior::argmax;

fn check_idx(idx: &[usize], n: usize) -> Result<()> {
    if idx.is_empty() {
        return Err(GpnError::Metric("empty evaluation mask".into()));
    }
    if let Some(v) = idx.iter().find(|&&v| v >= n) {
        return Err(GpnError::Metric(format!("node {v} out of range")));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize], idx: &[usize]) -> Result<f64> {
    check_idx(idx, preds.len().min(labels.len()))?;
    let hits = idx.iter().filter(|&&v| preds[v] == labels[v]).count();
    Ok(hits as f64 / idx.len() as f64)
}

/// `(1/C) · mean_v ‖p_v - onehot(y_v)‖²`.
pub fn brier(probs: &Tensor, labels: &[usize], idx: &[usize]) -> Result<f64> {
    check_idx(idx, probs.rows().min(labels.len()))?;
    let c = probs.cols();
    let mut total = 0.0;
    for &v in idx {
        let y = labels[v];
        if y >= c {
            return Err(GpnError::Metric(format!("label {y} out of range")));
        }
        total += probs
            .row(v)
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let t = if k == y { 1.0 } else { 0.0 };
                (p - t) * (p - t)
            })
            .sum::<f64>();
    }
    Ok(total / (idx.len() as f64 * c as f64))
}

/// Expected calibration error from per-sample confidence and correctness.
///
/// Bin `m` covers `(m/M, (m+1)/M]`; the first bin also takes confidence 0.
pub fn ece_from_confidence(confidence: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(GpnError::Metric("ECE needs at least one bin".into()));
    }
    if confidence.len() != correct.len() || confidence.is_empty() {
        return Err(GpnError::Metric("confidence and correctness must be non-empty and aligned".into()));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hit = vec![0usize; bins];
    for (&p, &ok) in confidence.iter().zip(correct) {
        if !(0.0..=1.0).contains(&p) {
            return Err(GpnError::Metric(format!("confidence {p} outside [0, 1]")));
        }
        let b = ((p * bins as f64).ceil() as usize).saturating_sub(1).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += p;
        hit[b] += usize::from(ok);
    }
    let n = confidence.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let k = count[b] as f64;
            (k / n) * (hit[b] as f64 / k - conf_sum[b] / k).abs()
        })
        .sum())
}

/// ECE with confidence equal to the largest class probability.
pub fn ece(probs: &Tensor, labels: &[usize], idx: &[usize], bins: usize) -> Result<f64> {
    check_idx(idx, probs.rows().min(labels.len()))?;
    let mut conf = Vec::with_capacity(idx.len());
    let mut correct = Vec::with_capacity(idx.len());
    for &v in idx {
        let row = probs.row(v);
        let k = argmax(row);
        conf.push(row[k]);
        correct.push(k == labels[v]);
    }
    ece_from_confidence(&conf, &correct, bins)
}

fn check_binary(scores: &[f64], positives: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != positives.len() {
        return Err(GpnError::Metric("scores and targets differ in length".into()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(GpnError::Metric(format!("non-finite score {s}")));
    }
    let pos = positives.iter().filter(|&&p| p).count();
    let neg = positives.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(GpnError::Metric("both positive and negative samples are required".into()));
    }
    Ok((pos, neg))
}

/// Groups of tied scores in descending order as `(positives, negatives)`.
fn descending_groups(scores: &[f64], positives: &[bool]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in order {
        if prev != Some(scores[i]) {
            groups.push((0, 0));
            prev = Some(scores[i]);
        }
        let g = groups.last_mut().expect("group pushed");
        if positives[i] {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Area under the ROC curve with ties counted as one half (Mann–Whitney U).
pub fn auc_roc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, positives)?;
    // Twice U: every (positive, negative) pair above counts 2, tied pairs 1.
    let mut twice_u: u128 = 0;
    let mut neg_below = neg as u128;
    for (p, q) in descending_groups(scores, positives) {
        neg_below -= q as u128;
        twice_u += p as u128 * (2 * neg_below + q as u128);
    }
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// Average precision: `Σ_k (R_k - R_{k-1}) P_k` over descending score
/// thresholds with tied scores entering together.
pub fn auc_pr(scores: &[f64], positives: &[bool]) -> Result<f64> {
    let (pos, _) = check_binary(scores, positives)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (p, q) in descending_groups(scores, positives) {
        tp += p;
        fp += q;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}
