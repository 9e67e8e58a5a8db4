//! RMSE and rank-based ROC AUC.

use crate::error::{Error, Result};

pub fn rmse(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} truth values",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("RMSE of an empty set".into()));
    }
    let sse: f64 = predictions.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / truth.len() as f64).sqrt())
}

/// Mann–Whitney AUC: the probability that a random positive outscores a
/// random negative, ties counting one half. Computed from average ranks.
pub fn auc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::InvalidInput("scores and labels differ in length".into()));
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    let nn = n_neg as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// AUC for `num_classes` classes given per-class score vectors.
///
/// Two classes: AUC of the class-1 score. More: macro average of one-vs-rest
/// AUCs over the classes that occur in `truth` (a class that never occurs
/// has no positives and is skipped). A single observed class is undefined.
pub fn auc_multiclass(scores: &[Vec<f64>], truth: &[u32], num_classes: usize) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::InvalidInput("scores and labels differ in length".into()));
    }
    if let Some(t) = truth.iter().find(|&&t| t as usize >= num_classes) {
        return Err(Error::InvalidInput(format!("label {t} outside [0, {num_classes})")));
    }
    if scores.iter().any(|s| s.len() != num_classes) {
        return Err(Error::InvalidInput("score vector width differs from class count".into()));
    }
    let mut present = vec![0usize; num_classes];
    truth.iter().for_each(|&t| present[t as usize] += 1);
    let observed = present.iter().filter(|&&c| c > 0).count();
    if observed < 2 {
        return Err(Error::UndefinedMetric(format!(
            "classification truth contains {observed} class(es)"
        )));
    }
    if num_classes == 2 {
        let s: Vec<f64> = scores.iter().map(|v| v[1]).collect();
        let pos: Vec<bool> = truth.iter().map(|&t| t == 1).collect();
        return auc_binary(&s, &pos);
    }
    let mut total = 0.0;
    for class in (0..num_classes).filter(|&c| present[c] > 0) {
        let s: Vec<f64> = scores.iter().map(|v| v[class]).collect();
        let pos: Vec<bool> = truth.iter().map(|&t| t as usize == class).collect();
        total += auc_binary(&s, &pos)?;
    }
    Ok(total / observed as f64)
}
