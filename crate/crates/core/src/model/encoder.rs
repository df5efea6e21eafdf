use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AttentionKind, BoundParams, Layer, ModelConfig, NeighborDir, Proj};
use crate::graph::FeatureBlock;
use crate::tape::{Tape, Var};
use crate::tensor::{NumError, Tensor};

/// Train mode carries the rng that samples dropout masks; eval mode is
/// deterministic and skips dropout entirely.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

pub struct EncoderOutput {
    /// fused input representation, before any aggregation layer
    pub h0: Var,
    /// output of each aggregation layer, in order
    pub hidden: Vec<Var>,
}

impl EncoderOutput {
    pub fn last(&self) -> Var {
        *self.hidden.last().unwrap_or(&self.h0)
    }
}

fn maybe_dropout(tape: &mut Tape, v: Var, p: f64, mode: &mut Mode) -> Result<Var, NumError> {
    match mode {
        Mode::Train(rng) if p > 0.0 => {
            let t = tape.value(v);
            let (rows, cols) = (t.rows(), t.cols());
            let mask = Tensor::new(
                rows,
                cols,
                (0..rows * cols)
                    .map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 })
                    .collect(),
            );
            tape.dropout(v, &mask, p)
        }
        _ => Ok(v),
    }
}

/// Layer norm over feature columns, built from primitive ops.
fn layer_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var, NumError> {
    let m = tape.mean_axis1(x)?;
    let nm = tape.scale(m, -1.0)?;
    let xc = tape.add_col(x, nm)?;
    let sq = tape.hadamard(xc, xc)?;
    let var = tape.mean_axis1(sq)?;
    let vs = tape.add_scalar(var, 1e-5)?;
    let inv = tape.pow_const(vs, -0.5)?;
    let y = tape.mul_col(xc, inv)?;
    let g = tape.mul_row(y, gain)?;
    tape.add_row(g, bias)
}

/// Fuses the per-type feature blocks into h0: each type is aligned to a
/// common width, the resulting tokens attend to each other through one
/// single-head transformer encoder layer (batched over nodes), and the
/// concatenation goes through the input MLP.
pub fn fuse_features(
    tape: &mut Tape,
    features: &[FeatureBlock],
    fusion: &super::Fusion<Var>,
    cfg: &ModelConfig,
    mode: &mut Mode,
) -> Result<Var, NumError> {
    let n_types = features.len();
    let d = cfg.align_dim;
    let mut tokens = Vec::with_capacity(n_types);
    for (t, block) in features.iter().enumerate() {
        let n = block.values.len() / block.dim;
        let x = tape.constant(Tensor::new(n, block.dim, block.values.clone()));
        tokens.push(tape.matmul(x, fusion.aligners[t])?);
    }
    let qs: Vec<Var> = tokens
        .iter()
        .map(|&x| tape.matmul(x, fusion.wq))
        .collect::<Result<_, _>>()?;
    let ks: Vec<Var> = tokens
        .iter()
        .map(|&x| tape.matmul(x, fusion.wk))
        .collect::<Result<_, _>>()?;
    let vs: Vec<Var> = tokens
        .iter()
        .map(|&x| tape.matmul(x, fusion.wv))
        .collect::<Result<_, _>>()?;

    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut fused = Vec::with_capacity(n_types);
    for t in 0..n_types {
        // one n-column of attention scores per attended token
        let mut scores = Vec::with_capacity(n_types);
        for u in 0..n_types {
            let qk = tape.hadamard(qs[t], ks[u])?;
            let s = tape.sum_axis1(qk)?;
            scores.push(tape.scale(s, inv_sqrt_d)?);
        }
        // stabilize with the detached per-node max before exponentiating
        let n = tape.value(scores[0]).rows();
        let mut row_max = vec![f64::NEG_INFINITY; n];
        for &s in &scores {
            let v = tape.value(s);
            for i in 0..n {
                row_max[i] = row_max[i].max(v.data()[i]);
            }
        }
        let neg_max = tape.constant(Tensor::new(n, 1, row_max.iter().map(|m| -m).collect()));
        let mut exps = Vec::with_capacity(n_types);
        for &s in &scores {
            let shifted = tape.add(s, neg_max)?;
            exps.push(tape.exp(shifted)?);
        }
        let mut denom = exps[0];
        for &e in &exps[1..] {
            denom = tape.add(denom, e)?;
        }
        let mut num = tape.mul_col(vs[0], exps[0])?;
        for u in 1..n_types {
            let term = tape.mul_col(vs[u], exps[u])?;
            num = tape.add(num, term)?;
        }
        let inv_denom = tape.pow_const(denom, -1.0)?;
        let attn = tape.mul_col(num, inv_denom)?;
        let attn = tape.matmul(attn, fusion.wo)?;

        let res1 = tape.add(tokens[t], attn)?;
        let ln1 = layer_norm(tape, res1, fusion.ln1_gain, fusion.ln1_bias)?;
        let f1 = tape.matmul(ln1, fusion.ffn_w1)?;
        let f1 = tape.add_row(f1, fusion.ffn_b1)?;
        let f1 = tape.leaky_relu(f1, cfg.leaky_slope)?;
        let f2 = tape.matmul(f1, fusion.ffn_w2)?;
        let f2 = tape.add_row(f2, fusion.ffn_b2)?;
        let res2 = tape.add(ln1, f2)?;
        fused.push(layer_norm(tape, res2, fusion.ln2_gain, fusion.ln2_bias)?);
    }

    let cat = tape.concat_cols(&fused)?;
    let h = tape.matmul(cat, fusion.w_input)?;
    let h = tape.add_row(h, fusion.b_input)?;
    let h = tape.leaky_relu(h, cfg.leaky_slope)?;
    maybe_dropout(tape, h, cfg.mlp_dropout, mode)
}

/// Receiver/sender index arrays for one relation under the configured
/// aggregation direction. An edge (s, d) means d receives from s when
/// aggregating over in-neighbors.
fn edge_pairs(edges: &[(usize, usize)], dir: NeighborDir) -> (Vec<usize>, Vec<usize>) {
    let mut recv = Vec::new();
    let mut send = Vec::new();
    for &(s, d) in edges {
        match dir {
            NeighborDir::In => {
                recv.push(d);
                send.push(s);
            }
            NeighborDir::Out => {
                recv.push(s);
                send.push(d);
            }
            NeighborDir::Both => {
                recv.push(d);
                send.push(s);
                recv.push(s);
                send.push(d);
            }
        }
    }
    (recv, send)
}

/// Channel-wise edge coefficients α_ij = tanh((q_i⊙k_j + q_j⊙k_i)/2),
/// one row per edge. Symmetric in (i, j) and bounded in (-1, 1), so a
/// single layer can act as a low-pass or high-pass filter per channel.
pub fn edge_attention(
    tape: &mut Tape,
    h: Var,
    layer: &Layer<Var>,
    recv: &[usize],
    send: &[usize],
) -> Result<Var, NumError> {
    let base = tape.matmul(h, layer.w_att)?;
    let q_all = tape.mul_row(base, layer.q)?;
    let k_all = tape.mul_row(base, layer.k)?;
    tanh_alpha(tape, q_all, k_all, recv, send)
}

fn tanh_alpha(
    tape: &mut Tape,
    q_all: Var,
    k_all: Var,
    recv: &[usize],
    send: &[usize],
) -> Result<Var, NumError> {
    let qi = tape.gather_rows(q_all, recv)?;
    let kj = tape.gather_rows(k_all, send)?;
    let qj = tape.gather_rows(q_all, send)?;
    let ki = tape.gather_rows(k_all, recv)?;
    let a = tape.hadamard(qi, kj)?;
    let b = tape.hadamard(qj, ki)?;
    let s = tape.add(a, b)?;
    let s = tape.scale(s, 0.5)?;
    tape.tanh(s)
}

/// One relational aggregation layer:
///   h_i <- (1/R) Σ_r W_r (λ h_i + agg_r(i))
/// where agg_r is the α-weighted neighbor mean (tanh attention) or a
/// softmax-weighted neighbor sum (the softmax variant).
pub(crate) fn aggregate_layer(
    tape: &mut Tape,
    h: Var,
    relations: &[Vec<(usize, usize)>],
    layer: &Layer<Var>,
    lambda: f64,
    cfg: &ModelConfig,
    mode: &mut Mode,
) -> Result<Var, NumError> {
    let n = tape.value(h).rows();
    let base = tape.matmul(h, layer.w_att)?;
    let q_all = tape.mul_row(base, layer.q)?;
    let k_all = tape.mul_row(base, layer.k)?;
    let self_term = tape.scale(h, lambda)?;

    let mut acc: Option<Var> = None;
    for (r, edges) in relations.iter().enumerate() {
        let (recv, send) = edge_pairs(edges, cfg.neighbor_dir);
        let combined = if recv.is_empty() {
            self_term
        } else {
            let agg = match cfg.attention {
                AttentionKind::Tanh => {
                    let alpha = tanh_alpha(tape, q_all, k_all, &recv, &send)?;
                    let alpha = maybe_dropout(tape, alpha, cfg.att_dropout, mode)?;
                    let hj = tape.gather_rows(h, &send)?;
                    let msg = tape.hadamard(alpha, hj)?;
                    tape.segment_mean(msg, &recv, n)?
                }
                AttentionKind::Softmax => {
                    softmax_aggregate(tape, h, q_all, k_all, &recv, &send, cfg, mode)?
                }
            };
            tape.add(self_term, agg)?
        };
        let out = tape.matmul(combined, layer.w_rel[r])?;
        acc = Some(match acc {
            Some(a) => tape.add(a, out)?,
            None => out,
        });
    }
    let acc = acc.unwrap_or(self_term);
    tape.scale(acc, 1.0 / relations.len().max(1) as f64)
}

/// Per-neighbor scalar softmax weights over each receiver's neighborhood,
/// with the per-receiver max detached for stability. Nodes without
/// neighbors get a zero aggregate.
fn softmax_aggregate(
    tape: &mut Tape,
    h: Var,
    q_all: Var,
    k_all: Var,
    recv: &[usize],
    send: &[usize],
    cfg: &ModelConfig,
    mode: &mut Mode,
) -> Result<Var, NumError> {
    let n = tape.value(h).rows();
    let alpha_pre = {
        let qi = tape.gather_rows(q_all, recv)?;
        let kj = tape.gather_rows(k_all, send)?;
        let qj = tape.gather_rows(q_all, send)?;
        let ki = tape.gather_rows(k_all, recv)?;
        let a = tape.hadamard(qi, kj)?;
        let b = tape.hadamard(qj, ki)?;
        let s = tape.add(a, b)?;
        tape.scale(s, 0.5)?
    };
    let score = tape.mean_axis1(alpha_pre)?;
    let sval = tape.value(score).clone();
    let mut seg_max = vec![f64::NEG_INFINITY; n];
    for (e, &r) in recv.iter().enumerate() {
        seg_max[r] = seg_max[r].max(sval.data()[e]);
    }
    let neg_max = tape.constant(Tensor::new(
        recv.len(),
        1,
        recv.iter().map(|&r| -seg_max[r]).collect(),
    ));
    let shifted = tape.add(score, neg_max)?;
    let e = tape.exp(shifted)?;
    let mut counts = vec![0.0f64; n];
    for &r in recv {
        counts[r] += 1.0;
    }
    let cnt_node = tape.constant(Tensor::new(n, 1, counts.clone()));
    let seg_avg = tape.segment_mean(e, recv, n)?;
    let denom_node = tape.hadamard(seg_avg, cnt_node)?;
    let denom_e = tape.gather_rows(denom_node, recv)?;
    let inv = tape.pow_const(denom_e, -1.0)?;
    let w = tape.hadamard(e, inv)?;
    // same attention dropout as the tanh path, applied post-normalization
    let w = maybe_dropout(tape, w, cfg.att_dropout, mode)?;
    let hj = tape.gather_rows(h, send)?;
    let msg = tape.mul_col(hj, w)?;
    let avg = tape.segment_mean(msg, recv, n)?;
    // segment_mean divides by counts; multiply back to get the weighted sum
    tape.mul_col(avg, cnt_node)
}

/// Runs the full encoder over one view's features and edges.
pub fn encode(
    tape: &mut Tape,
    features: &[FeatureBlock],
    relations: &[Vec<(usize, usize)>],
    params: &BoundParams,
    cfg: &ModelConfig,
    mode: &mut Mode,
) -> Result<EncoderOutput, NumError> {
    let h0 = fuse_features(tape, features, &params.fusion, cfg, mode)?;
    let mut h = h0;
    let mut hidden = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let lambda = cfg.lambdas.get(l).copied().unwrap_or(1.0);
        h = aggregate_layer(tape, h, relations, layer, lambda, cfg, mode)?;
        if l + 1 < params.layers.len() {
            h = tape.leaky_relu(h, cfg.leaky_slope)?;
        }
        hidden.push(h);
    }
    Ok(EncoderOutput { h0, hidden })
}

/// Two-layer projection head mapping encoder output into the space where
/// the contrastive similarity is measured.
pub fn project(
    tape: &mut Tape,
    h: Var,
    proj: &Proj<Var>,
    cfg: &ModelConfig,
    mode: &mut Mode,
) -> Result<Var, NumError> {
    let a = tape.matmul(h, proj.w1)?;
    let a = tape.add_row(a, proj.b1)?;
    let a = tape.leaky_relu(a, cfg.leaky_slope)?;
    let a = maybe_dropout(tape, a, cfg.mlp_dropout, mode)?;
    let z = tape.matmul(a, proj.w2)?;
    tape.add_row(z, proj.b2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::model::{baseline_forward, BaselineParams, ModelParams};
    use crate::rng::stream;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            feature_dims: vec![3, 2],
            align_dim: 4,
            hidden: 4,
            layers: 2,
            proj_dim: 3,
            relations: 2,
            lambdas: vec![1.0, 1.0],
            att_dropout: 0.0,
            mlp_dropout: 0.0,
            leaky_slope: 0.01,
            neighbor_dir: NeighborDir::In,
            attention: AttentionKind::Tanh,
        }
    }

    fn tiny_features(n: usize, dims: &[usize], seed: u64) -> Vec<FeatureBlock> {
        let mut rng = stream(seed, "feat");
        dims.iter()
            .enumerate()
            .map(|(i, &d)| FeatureBlock {
                name: format!("f{i}"),
                dim: d,
                values: (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect()
    }

    fn tiny_relations() -> Vec<Vec<(usize, usize)>> {
        vec![
            vec![(0, 1), (1, 2), (2, 3), (3, 4)],
            vec![(2, 0), (4, 1)],
        ]
    }

    fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.set(i, i, 1.0);
        }
        t
    }

    #[test]
    fn full_stack_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let feats = tiny_features(5, &cfg.feature_dims, 11);
        let rels = tiny_relations();
        let params = ModelParams::init(&cfg, &mut stream(4, "init"));
        let tensors: Vec<Tensor> = params.visit().iter().map(|(_, t)| (*t).clone()).collect();
        let err = grad_check(
            |tape, vars| {
                let mut i = 0;
                let bound = params.map(|_| {
                    let v = vars[i];
                    i += 1;
                    v
                });
                let out = encode(tape, &feats, &rels, &bound, &cfg, &mut Mode::Eval)?;
                let z = project(tape, out.last(), &bound.proj, &cfg, &mut Mode::Eval)?;
                let cat = tape.concat_cols(&[out.h0, z])?;
                let sq = tape.hadamard(cat, cat)?;
                tape.mean_all(sq)
            },
            &tensors,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "worst relative error {err}");
    }

    #[test]
    fn edge_attention_is_symmetric_and_bounded() {
        let cfg = tiny_cfg();
        let mut rng = stream(5, "alpha");
        let h = Tensor::new(4, 4, (0..16).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let mut tape = Tape::new();
        let hv = tape.leaf(h, true);
        let layer = Layer {
            w_att: tape.leaf(super::super::xavier(&mut rng, 4, 4), true),
            q: tape.leaf(Tensor::filled(1, 4, 1.0), true),
            k: tape.leaf(Tensor::new(1, 4, vec![0.5, -1.0, 2.0, 0.1]), true),
            w_rel: vec![],
        };
        // same unordered pair in both directions
        let alpha = edge_attention(&mut tape, hv, &layer, &[0, 1, 2], &[1, 0, 3]).unwrap();
        let a = tape.value(alpha);
        for c in 0..4 {
            assert!((a.get(0, c) - a.get(1, c)).abs() < 1e-12);
        }
        for &x in a.data() {
            assert!(x > -1.0 && x < 1.0);
        }
    }

    #[test]
    fn edge_attention_saturates_to_low_and_high_pass() {
        // aligned neighbors drive alpha to +1 (low-pass), opposed ones to -1
        let h = Tensor::from_rows(&[
            vec![10.0, 10.0, 10.0, 10.0],
            vec![10.0, 10.0, 10.0, 10.0],
            vec![-10.0, -10.0, -10.0, -10.0],
        ]);
        let mut tape = Tape::new();
        let hv = tape.leaf(h, false);
        let layer = Layer {
            w_att: tape.leaf(eye(4), false),
            q: tape.leaf(Tensor::filled(1, 4, 1.0), false),
            k: tape.leaf(Tensor::filled(1, 4, 1.0), false),
            w_rel: vec![],
        };
        let alpha = edge_attention(&mut tape, hv, &layer, &[0, 0], &[1, 2]).unwrap();
        let a = tape.value(alpha);
        for c in 0..4 {
            assert!((a.get(0, c) - 1.0).abs() < 1e-10);
            assert!((a.get(1, c) + 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn relation_permutation_with_matching_weights_is_equivariant() {
        let cfg = tiny_cfg();
        let feats = tiny_features(5, &cfg.feature_dims, 21);
        let rels = tiny_relations();
        let params = ModelParams::init(&cfg, &mut stream(9, "init"));
        let mut swapped = params.clone();
        for layer in &mut swapped.layers {
            layer.w_rel.swap(0, 1);
        }
        let rels_swapped: Vec<_> = vec![rels[1].clone(), rels[0].clone()];

        let mut t1 = Tape::new();
        let b1 = params.bind(&mut t1);
        let o1 = encode(&mut t1, &feats, &rels, &b1, &cfg, &mut Mode::Eval).unwrap();
        let mut t2 = Tape::new();
        let b2 = swapped.bind(&mut t2);
        let o2 = encode(&mut t2, &feats, &rels_swapped, &b2, &cfg, &mut Mode::Eval).unwrap();
        assert_eq!(t1.value(o1.last()).data(), t2.value(o2.last()).data());
    }

    #[test]
    fn isolated_nodes_and_empty_relations_stay_finite() {
        let cfg = tiny_cfg();
        let feats = tiny_features(4, &cfg.feature_dims, 31);
        let rels = vec![vec![(0, 1)], vec![]]; // nodes 2 and 3 fully isolated
        let params = ModelParams::init(&cfg, &mut stream(13, "init"));
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let out = encode(&mut tape, &feats, &rels, &bound, &cfg, &mut Mode::Eval).unwrap();
        let z = project(&mut tape, out.last(), &bound.proj, &cfg, &mut Mode::Eval).unwrap();
        assert!(tape.value(out.h0).is_finite());
        assert!(tape.value(out.last()).is_finite());
        assert!(tape.value(z).is_finite());
    }

    #[test]
    fn eval_is_deterministic_and_train_dropout_is_seeded() {
        let mut cfg = tiny_cfg();
        cfg.mlp_dropout = 0.5;
        cfg.att_dropout = 0.3;
        let feats = tiny_features(5, &cfg.feature_dims, 41);
        let rels = tiny_relations();
        let params = ModelParams::init(&cfg, &mut stream(17, "init"));

        let run_eval = || {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let out = encode(&mut tape, &feats, &rels, &bound, &cfg, &mut Mode::Eval).unwrap();
            tape.value(out.last()).data().to_vec()
        };
        let run_train = |seed: u64| {
            let mut rng = stream(seed, "drop");
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let out = encode(
                &mut tape,
                &feats,
                &rels,
                &bound,
                &cfg,
                &mut Mode::Train(&mut rng),
            )
            .unwrap();
            tape.value(out.last()).data().to_vec()
        };
        assert_eq!(run_eval(), run_eval());
        assert_eq!(run_train(1), run_train(1));
        assert_ne!(run_train(1), run_eval());
    }

    #[test]
    fn softmax_variant_takes_convex_combinations_of_neighbors() {
        let mut cfg = tiny_cfg();
        cfg.attention = AttentionKind::Softmax;
        cfg.relations = 1;
        cfg.att_dropout = 0.0;
        // every h row sums to 1, so a weight-1 combination must too
        let h = Tensor::from_rows(&[
            vec![0.2, 0.3, 0.4, 0.1],
            vec![0.7, 0.1, 0.1, 0.1],
            vec![0.25, 0.25, 0.25, 0.25],
            vec![1.0, 0.0, 0.0, 0.0],
        ]);
        let rels = vec![vec![(1, 0), (2, 0), (3, 0)]];
        let mut rng = stream(23, "sm");
        let mut tape = Tape::new();
        let hv = tape.leaf(h, true);
        let layer = Layer {
            w_att: tape.leaf(super::super::xavier(&mut rng, 4, 4), true),
            q: tape.leaf(Tensor::filled(1, 4, 1.0), true),
            k: tape.leaf(Tensor::filled(1, 4, 1.0), true),
            w_rel: vec![tape.leaf(eye(4), true)],
        };
        let out =
            aggregate_layer(&mut tape, hv, &rels, &layer, 0.0, &cfg, &mut Mode::Eval).unwrap();
        let o = tape.value(out);
        let row0: f64 = (0..4).map(|c| o.get(0, c)).sum();
        assert!((row0 - 1.0).abs() < 1e-10, "weights must sum to 1, got {row0}");
        for r in 1..4 {
            for c in 0..4 {
                assert_eq!(o.get(r, c), 0.0);
            }
        }
    }

    #[test]
    fn softmax_variant_gradients_match_finite_differences() {
        let mut cfg = tiny_cfg();
        cfg.attention = AttentionKind::Softmax;
        let feats = tiny_features(5, &cfg.feature_dims, 51);
        let rels = tiny_relations();
        let params = ModelParams::init(&cfg, &mut stream(29, "init"));
        let tensors: Vec<Tensor> = params.visit().iter().map(|(_, t)| (*t).clone()).collect();
        let err = grad_check(
            |tape, vars| {
                let mut i = 0;
                let bound = params.map(|_| {
                    let v = vars[i];
                    i += 1;
                    v
                });
                let out = encode(tape, &feats, &rels, &bound, &cfg, &mut Mode::Eval)?;
                let sq = tape.hadamard(out.hidden[1], out.hidden[1])?;
                tape.mean_all(sq)
            },
            &tensors,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "worst relative error {err}");
    }

    #[test]
    fn baseline_forward_shapes_and_gradients() {
        let cfg = tiny_cfg();
        let feats = tiny_features(5, &cfg.feature_dims, 61);
        let rels = tiny_relations();
        let params = BaselineParams::init(&cfg, &mut stream(37, "base"));
        {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let (h, logits) = baseline_forward(&mut tape, &feats, &rels, &bound, &cfg).unwrap();
            assert_eq!(tape.value(h).rows(), 5);
            assert_eq!(tape.value(h).cols(), cfg.hidden);
            assert_eq!(tape.value(logits).cols(), 2);
        }
        let tensors: Vec<Tensor> = params.visit().iter().map(|(_, t)| (*t).clone()).collect();
        let err = grad_check(
            |tape, vars| {
                let mut i = 0;
                let bound = params.map(|_| {
                    let v = vars[i];
                    i += 1;
                    v
                });
                let (_, logits) = baseline_forward(tape, &feats, &rels, &bound, &cfg)?;
                let sq = tape.hadamard(logits, logits)?;
                tape.mean_all(sq)
            },
            &tensors,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "worst relative error {err}");
    }
}
