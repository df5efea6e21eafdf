//! Training objectives: the cross-view supervised contrastive loss, its
//! self-supervised ablation, and weighted cross-entropy.

use crate::tape::{Tape, Var};
use crate::tensor::{NumError, Tensor};

/// Log-sum-exp over each row, with the row max detached for stability.
fn lse_rows(tape: &mut Tape, s: Var) -> Result<Var, NumError> {
    let v = tape.value(s).clone();
    let n = v.rows();
    let mut maxes = vec![f64::NEG_INFINITY; n];
    for i in 0..n {
        for j in 0..v.cols() {
            maxes[i] = maxes[i].max(v.get(i, j));
        }
    }
    let neg_m = tape.constant(Tensor::new(n, 1, maxes.iter().map(|m| -m).collect()));
    let m = tape.constant(Tensor::new(n, 1, maxes));
    let shifted = tape.add_col(s, neg_m)?;
    let e = tape.exp(shifted)?;
    let r = tape.sum_axis1(e)?;
    let l = tape.log(r)?;
    tape.add(l, m)
}

/// Σ_i [lse_i − Σ_j P_ij s_ij] for a positive-weight matrix P whose rows
/// sum to 1, written as Σ_i lse_i − sum(P ⊙ s).
fn anchored_term(tape: &mut Tape, s: Var, pos: Var) -> Result<Var, NumError> {
    let lse = lse_rows(tape, s)?;
    let total = tape.sum_all(lse)?;
    let ps = tape.hadamard(pos, s)?;
    let pulled = tape.sum_all(ps)?;
    tape.sub(total, pulled)
}

fn contrastive(
    tape: &mut Tape,
    za: Var,
    zb: Var,
    pos: Tensor,
    tau: f64,
) -> Result<Var, NumError> {
    let n = tape.value(za).rows();
    let sim = tape.cosine_sim(za, zb)?;
    let s = tape.scale(sim, 1.0 / tau)?;
    let st = tape.transpose(s)?;
    let p = tape.constant(pos);
    let a = anchored_term(tape, s, p)?;
    let b = anchored_term(tape, st, p)?;
    let sum = tape.add(a, b)?;
    tape.scale(sum, 1.0 / (2.0 * n as f64))
}

/// Cross-view supervised contrastive loss: every same-label node in the
/// other view is a positive, scaled by cosine similarity over temperature.
/// Both views anchor in turn. Errors if the batch has fewer than two nodes
/// or only one class.
pub fn supcon_cross_view(
    tape: &mut Tape,
    za: Var,
    zb: Var,
    labels: &[u8],
    tau: f64,
) -> Result<Var, NumError> {
    let n = labels.len();
    if n < 2 {
        return Err(NumError::DegenerateBatch {
            detail: format!("contrastive batch needs at least 2 nodes, got {n}"),
        });
    }
    let counts = [
        labels.iter().filter(|&&y| y == 0).count(),
        labels.iter().filter(|&&y| y == 1).count(),
    ];
    if counts[0] == 0 || counts[1] == 0 {
        return Err(NumError::DegenerateBatch {
            detail: "contrastive batch contains a single class".to_string(),
        });
    }
    let mut pos = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                pos.set(i, j, 1.0 / counts[labels[i] as usize] as f64);
            }
        }
    }
    contrastive(tape, za, zb, pos, tau)
}

/// Self-supervised ablation: the only positive for node i is node i in the
/// other view.
pub fn selfsup_cross_view(
    tape: &mut Tape,
    za: Var,
    zb: Var,
    tau: f64,
) -> Result<Var, NumError> {
    let n = tape.value(za).rows();
    if n < 2 {
        return Err(NumError::DegenerateBatch {
            detail: format!("contrastive batch needs at least 2 nodes, got {n}"),
        });
    }
    let mut pos = Tensor::zeros(n, n);
    for i in 0..n {
        pos.set(i, i, 1.0);
    }
    contrastive(tape, za, zb, pos, tau)
}

/// Class-weighted softmax cross-entropy over 2-column logits, normalized
/// by the total weight: Σ_i w_{y_i} ℓ_i / Σ_i w_{y_i}.
pub fn weighted_cross_entropy(
    tape: &mut Tape,
    logits: Var,
    labels: &[u8],
    class_weights: [f64; 2],
) -> Result<Var, NumError> {
    let n = labels.len();
    if n == 0 {
        return Err(NumError::DegenerateBatch {
            detail: "cross-entropy batch is empty".to_string(),
        });
    }
    let cols = tape.value(logits).cols();
    let lse = lse_rows(tape, logits)?;
    let mut onehot = Tensor::zeros(n, cols);
    for (i, &y) in labels.iter().enumerate() {
        onehot.set(i, y as usize, 1.0);
    }
    let oh = tape.constant(onehot);
    let picked = tape.hadamard(oh, logits)?;
    let picked = tape.sum_axis1(picked)?;
    let li = tape.sub(lse, picked)?;
    let w: Vec<f64> = labels.iter().map(|&y| class_weights[y as usize]).collect();
    let total_w: f64 = w.iter().sum();
    let wv = tape.constant(Tensor::new(n, 1, w));
    let weighted = tape.hadamard(li, wv)?;
    let sum = tape.sum_all(weighted)?;
    tape.scale(sum, 1.0 / total_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::rng::stream;
    use rand::Rng;

    fn rand_t(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = stream(seed, "loss");
        Tensor::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn identical_embeddings_give_ln_n() {
        // all similarities equal, so every anchor sees a flat distribution
        let z = Tensor::from_rows(&vec![vec![1.0, 2.0]; 4]);
        let mut tape = Tape::new();
        let za = tape.leaf(z.clone(), true);
        let zb = tape.leaf(z, true);
        let l = supcon_cross_view(&mut tape, za, zb, &[0, 0, 1, 1], 0.07).unwrap();
        assert!((tape.value(l).item() - 4.0_f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn orthogonal_two_node_case_matches_softplus_of_minus_one() {
        // s = I at tau=1, so each anchor pays ln(1 + e^{-1}) = 0.31326...
        let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut tape = Tape::new();
        let za = tape.leaf(z.clone(), true);
        let zb = tape.leaf(z, true);
        let l = supcon_cross_view(&mut tape, za, zb, &[0, 1], 1.0).unwrap();
        let expected = (1.0 + (-1.0_f64).exp()).ln();
        assert!((tape.value(l).item() - expected).abs() < 1e-9);
        assert!((expected - 0.3132616875).abs() < 1e-9);
    }

    #[test]
    fn loss_is_invariant_to_embedding_scale() {
        let za = rand_t(6, 4, 1);
        let zb = rand_t(6, 4, 2);
        let labels = [0, 1, 0, 1, 1, 0];
        let eval = |sa: f64, sb: f64| {
            let mut tape = Tape::new();
            let a = Tensor::new(6, 4, za.data().iter().map(|v| v * sa).collect());
            let b = Tensor::new(6, 4, zb.data().iter().map(|v| v * sb).collect());
            let av = tape.leaf(a, false);
            let bv = tape.leaf(b, false);
            let l = supcon_cross_view(&mut tape, av, bv, &labels, 0.07).unwrap();
            tape.value(l).item()
        };
        let base = eval(1.0, 1.0);
        assert!((eval(3.0, 1.0) - base).abs() < 1e-10);
        assert!((eval(0.2, 7.0) - base).abs() < 1e-10);
    }

    #[test]
    fn huge_temperature_flattens_toward_ln_n() {
        let za = rand_t(5, 3, 3);
        let zb = rand_t(5, 3, 4);
        let mut tape = Tape::new();
        let a = tape.leaf(za, false);
        let b = tape.leaf(zb, false);
        let l = supcon_cross_view(&mut tape, a, b, &[0, 0, 1, 1, 1], 1e6).unwrap();
        assert!((tape.value(l).item() - 5.0_f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn pulling_a_positive_pair_together_lowers_the_loss() {
        // rotate z_b[0] away from its positive z_a[0]; loss must rise
        let za = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let eval = |theta_deg: f64| {
            let t = theta_deg.to_radians();
            let zb = Tensor::from_rows(&[vec![t.cos(), t.sin()], vec![0.0, 1.0]]);
            let mut tape = Tape::new();
            let a = tape.leaf(za.clone(), false);
            let b = tape.leaf(zb, false);
            let l = supcon_cross_view(&mut tape, a, b, &[0, 1], 0.5).unwrap();
            tape.value(l).item()
        };
        let mut prev = eval(0.0);
        for theta in [15.0, 30.0, 45.0, 60.0, 85.0] {
            let cur = eval(theta);
            assert!(cur > prev, "loss should rise as the positive drifts away");
            prev = cur;
        }
    }

    #[test]
    fn supcon_gradients_match_finite_differences() {
        let za = rand_t(5, 4, 7);
        let zb = rand_t(5, 4, 8);
        let labels = [0, 1, 0, 1, 1];
        let err = grad_check(
            |tape, vars| supcon_cross_view(tape, vars[0], vars[1], &labels, 0.3),
            &[za, zb],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "worst relative error {err}");
    }

    #[test]
    fn selfsup_gradients_match_finite_differences() {
        let za = rand_t(4, 3, 9);
        let zb = rand_t(4, 3, 10);
        let err = grad_check(
            |tape, vars| selfsup_cross_view(tape, vars[0], vars[1], 0.3),
            &[za, zb],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "worst relative error {err}");
    }

    #[test]
    fn degenerate_batches_are_rejected() {
        let z = rand_t(3, 2, 11);
        let mut tape = Tape::new();
        let a = tape.leaf(z.clone(), false);
        let b = tape.leaf(z.clone(), false);
        let err = supcon_cross_view(&mut tape, a, b, &[1, 1, 1], 0.07).unwrap_err();
        assert!(matches!(err, NumError::DegenerateBatch { .. }));

        let one = rand_t(1, 2, 12);
        let mut tape = Tape::new();
        let a = tape.leaf(one.clone(), false);
        let b = tape.leaf(one, false);
        let err = supcon_cross_view(&mut tape, a, b, &[0], 0.07).unwrap_err();
        assert!(matches!(err, NumError::DegenerateBatch { .. }));
        let err = selfsup_cross_view(&mut tape, a, b, 0.07).unwrap_err();
        assert!(matches!(err, NumError::DegenerateBatch { .. }));
    }

    #[test]
    fn uniform_logits_cost_ln_two() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(4, 2), true);
        let l = weighted_cross_entropy(&mut tape, logits, &[0, 1, 0, 1], [1.0, 1.0]).unwrap();
        assert!((tape.value(l).item() - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn weighted_three_example_case_matches_hand_computation() {
        let rows: [Vec<f64>; 3] = [vec![2.0, 0.0], vec![-1.0, 1.0], vec![0.5, 0.5]];
        let labels = [0u8, 1, 1];
        let w = [1.0, 2.5];
        // independent scalar computation of Σ w_i ℓ_i / Σ w_i
        let mut num = 0.0;
        let mut den = 0.0;
        for (r, &y) in rows.iter().zip(labels.iter()) {
            let m = r[0].max(r[1]);
            let lse = m + ((r[0] - m).exp() + (r[1] - m).exp()).ln();
            let li = lse - r[y as usize];
            num += w[y as usize] * li;
            den += w[y as usize];
        }
        let expected = num / den;
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::from_rows(&rows), true);
        let l = weighted_cross_entropy(&mut tape, logits, &labels, w).unwrap();
        assert!((tape.value(l).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradients_match_finite_differences() {
        let logits = rand_t(5, 2, 13);
        let err = grad_check(
            |tape, vars| weighted_cross_entropy(tape, vars[0], &[0, 1, 1, 0, 1], [1.0, 2.0]),
            &[logits],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "worst relative error {err}");
    }
}
