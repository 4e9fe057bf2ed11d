use crate::{NnError, Result};

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Class-weighted categorical cross-entropy on raw logits.
///
/// Returns `(-weight * ln softmax(logits)[label], weight * (softmax - onehot))`.
pub fn weighted_softmax_xent(logits: &[f64], label: usize, weight: f64) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(NnError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    let loss = -weight * (logits[label] - log_sum);
    let grad = logits
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let p = (l - log_sum).exp();
            weight * (p - if k == label { 1.0 } else { 0.0 })
        })
        .collect();
    Ok((loss, grad))
}
