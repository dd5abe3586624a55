//! Classification metrics over labels in `0..num_classes`.

use crate::error::{HgmpError, Result};

fn check(preds: &[usize], golds: &[usize], num_classes: usize) -> Result<()> {
    if preds.is_empty() {
        return Err(HgmpError::InvalidArgument("metrics need at least one prediction".into()));
    }
    if preds.len() != golds.len() {
        return Err(HgmpError::InvalidArgument(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if let Some(&bad) = preds.iter().chain(golds).find(|&&c| c >= num_classes) {
        return Err(HgmpError::InvalidArgument(format!("label {bad} outside 0..{num_classes}")));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> f64 {
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    hits as f64 / preds.len() as f64
}

/// Global-count F1. For single-label data every miss is one false positive
/// and one false negative, so this equals accuracy.
pub fn micro_f1(preds: &[usize], golds: &[usize], num_classes: usize) -> Result<f64> {
    check(preds, golds, num_classes)?;
    let tp = preds.iter().zip(golds).filter(|(p, g)| p == g).count() as f64;
    let fp = preds.len() as f64 - tp;
    let fn_ = fp;
    Ok(2.0 * tp / (2.0 * tp + fp + fn_))
}

/// Unweighted mean of per-class F1. A class with no true positives scores 0,
/// including classes absent from both sequences.
pub fn macro_f1(preds: &[usize], golds: &[usize], num_classes: usize) -> Result<f64> {
    check(preds, golds, num_classes)?;
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &g) in preds.iter().zip(golds) {
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let total: f64 = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if tp[c] == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / num_classes as f64)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
