//! Fit and ranking metrics shared by the surrogate and the benchmark.

use crate::error::{Error, Result};

pub fn weighted_mse(pred: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return f64::NAN;
    }
    pred.iter()
        .zip(y)
        .zip(w)
        .map(|((p, t), wi)| wi * (p - t) * (p - t))
        .sum::<f64>()
        / total
}

/// `1 - SSE / SST` with weighted sums; `NaN` when the target is constant.
pub fn weighted_r2(pred: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    let mean = y.iter().zip(w).map(|(t, wi)| wi * t).sum::<f64>() / total;
    let sst: f64 = y.iter().zip(w).map(|(t, wi)| wi * (t - mean) * (t - mean)).sum();
    let sse: f64 = pred.iter().zip(y).zip(w).map(|((p, t), wi)| wi * (p - t) * (p - t)).sum();
    if sst > 0.0 {
        1.0 - sse / sst
    } else {
        f64::NAN
    }
}

/// Probability that a random positive outranks a random negative (ties
/// count half), via the Mann-Whitney statistic.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric("scores and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC needs both positive and negative items".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // midrank, 1-based
        let rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}
