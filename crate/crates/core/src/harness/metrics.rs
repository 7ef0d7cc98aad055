use crate::error::{Error, Result};

/// Convergence thresholds: AUROC 0.7 (at least) and MAPE 27% (at most).
pub const AUROC_CONVERGENCE: f64 = 0.7;
pub const MAPE_CONVERGENCE: f64 = 27.0;

/// Area under the ROC curve as the probability that a random positive scores
/// above a random negative, ties counting one half.
///
/// Computed from midranks in `O(n log n)`.
pub fn auroc(labels: &[f64], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Data(format!("auroc: {} labels vs {} scores", labels.len(), scores.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(Error::Data(format!("auroc: label {l} is not 0 or 1")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("auroc: NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!(
            "auroc needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive midranks (1-based).
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| labels[k] == 1.0).count();
        rank_sum += midrank * pos_in_tie as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// `100 * mean(|pred - true| / |true|)`.
pub fn mape(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::Data(format!("mape: {} targets vs {} predictions", truth.len(), pred.len())));
    }
    if let Some(i) = truth.iter().position(|&t| t == 0.0) {
        return Err(Error::Data(format!("mape: true value at index {i} is zero")));
    }
    let s: f64 = truth.iter().zip(pred).map(|(t, p)| ((p - t) / t).abs()).sum();
    Ok(100.0 * s / truth.len() as f64)
}

pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::Data(format!("rmse: {} targets vs {} predictions", truth.len(), pred.len())));
    }
    let s: f64 = truth.iter().zip(pred).map(|(t, p)| (p - t).powi(2)).sum();
    Ok((s / truth.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    AtLeast,
    AtMost,
}

impl Direction {
    pub fn satisfied(self, value: f64, threshold: f64) -> bool {
        match self {
            Self::AtLeast => value >= threshold,
            Self::AtMost => value <= threshold,
        }
    }
}

/// Time of the first `(time, metric)` entry meeting the threshold.
pub fn convergence_time(history: &[(f64, f64)], threshold: f64, direction: Direction) -> Option<f64> {
    history.iter().find(|(_, m)| direction.satisfied(*m, threshold)).map(|(t, _)| *t)
}

/// Sample mean and `n - 1` standard deviation; `None` std for fewer than two values.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}
