//! Stage two: a frozen-encoder linear probe. Full-batch gradient descent
//! on class-weighted softmax cross-entropy with L2 regularization of the
//! weight matrix (not the bias).

use serde::{Deserialize, Serialize};

use crate::tensor::{NumError, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Stage2Config {
    pub lr: f64,
    pub iters: usize,
    pub l2: f64,
    pub class_weights: [f64; 2],
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            lr: 0.01,
            iters: 1000,
            l2: 1e-4,
            class_weights: [1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// d x 2
    pub w: Tensor,
    /// 1 x 2
    pub b: Tensor,
}

fn softmax2(a: f64, b: f64) -> (f64, f64) {
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let z = ea + eb;
    (ea / z, eb / z)
}

/// Fits the probe on (features, labels) starting from zero weights.
pub fn fit_logistic(
    features: &Tensor,
    labels: &[u8],
    cfg: &Stage2Config,
) -> Result<LinearHead, NumError> {
    let n = features.rows();
    let d = features.cols();
    if n == 0 || n != labels.len() {
        return Err(NumError::DegenerateBatch {
            detail: format!("probe got {n} feature rows for {} labels", labels.len()),
        });
    }
    let total_w: f64 = labels.iter().map(|&y| cfg.class_weights[y as usize]).sum();
    let mut w = Tensor::zeros(d, 2);
    let mut b = Tensor::zeros(1, 2);
    for _ in 0..cfg.iters {
        // dL/dlogit_{i,c} = w_i (p_{i,c} - 1[c = y_i]) / W
        let mut gw = Tensor::zeros(d, 2);
        let mut gb = Tensor::zeros(1, 2);
        for i in 0..n {
            let row = features.row(i);
            let mut l0 = b.get(0, 0);
            let mut l1 = b.get(0, 1);
            for (k, &x) in row.iter().enumerate() {
                l0 += x * w.get(k, 0);
                l1 += x * w.get(k, 1);
            }
            let (p0, p1) = softmax2(l0, l1);
            let wi = cfg.class_weights[labels[i] as usize] / total_w;
            let d0 = wi * (p0 - if labels[i] == 0 { 1.0 } else { 0.0 });
            let d1 = wi * (p1 - if labels[i] == 1 { 1.0 } else { 0.0 });
            for (k, &x) in row.iter().enumerate() {
                gw.set(k, 0, gw.get(k, 0) + x * d0);
                gw.set(k, 1, gw.get(k, 1) + x * d1);
            }
            gb.set(0, 0, gb.get(0, 0) + d0);
            gb.set(0, 1, gb.get(0, 1) + d1);
        }
        for k in 0..d {
            for c in 0..2 {
                let g = gw.get(k, c) + 2.0 * cfg.l2 * w.get(k, c);
                w.set(k, c, w.get(k, c) - cfg.lr * g);
            }
        }
        for c in 0..2 {
            b.set(0, c, b.get(0, c) - cfg.lr * gb.get(0, c));
        }
        if !w.is_finite() || !b.is_finite() {
            return Err(NumError::NonFinite { op: "fit_logistic" });
        }
    }
    Ok(LinearHead { w, b })
}

pub fn logits(head: &LinearHead, features: &Tensor) -> Tensor {
    let n = features.rows();
    let mut out = Tensor::zeros(n, 2);
    for i in 0..n {
        let row = features.row(i);
        for c in 0..2 {
            let mut v = head.b.get(0, c);
            for (k, &x) in row.iter().enumerate() {
                v += x * head.w.get(k, c);
            }
            out.set(i, c, v);
        }
    }
    out
}

pub fn predict(head: &LinearHead, features: &Tensor) -> Vec<u8> {
    let l = logits(head, features);
    (0..l.rows())
        .map(|i| if l.get(i, 1) > l.get(i, 0) { 1u8 } else { 0u8 })
        .collect()
}
