//! Classification metrics with bots (class 1) as the positive class.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// [actual][predicted], indexed human=0 / bot=1
    pub confusion: [[usize; 2]; 2],
}

pub fn classification_metrics(pred: &[u8], truth: &[u8]) -> MetricsReport {
    assert_eq!(pred.len(), truth.len(), "prediction/label length mismatch");
    let mut confusion = [[0usize; 2]; 2];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t as usize][p as usize] += 1;
    }
    let n = pred.len();
    let tp = confusion[1][1] as f64;
    let fp = confusion[0][1] as f64;
    let fn_ = confusion[1][0] as f64;
    let tn = confusion[0][0] as f64;
    let accuracy = if n == 0 { 0.0 } else { (tp + tn) / n as f64 };
    let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
    let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    MetricsReport {
        accuracy,
        precision,
        recall,
        f1,
        confusion,
    }
}

/// Mean and sample standard deviation (n-1 in the denominator; 0 for a
/// single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    (mean, var.sqrt())
}
