//! Graph view generation: class-aware node shuffling, edge removal, and the
//! feature-masking / edge-adding ablation augmentors.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{FeatureBlock, LabeledSplit, MultiRelationGraph};
use crate::rng;

/// One augmented copy of the graph: features plus per-relation edge lists.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub features: Vec<FeatureBlock>,
    pub relations: Vec<Vec<(usize, usize)>>,
}

impl View {
    pub fn of(g: &MultiRelationGraph) -> Self {
        View {
            features: g.features().to_vec(),
            relations: g.relations().to_vec(),
        }
    }

    pub fn node_count(&self) -> usize {
        if self.features.is_empty() {
            0
        } else {
            self.features[0].values.len() / self.features[0].dim
        }
    }
}

/// Two views of one graph under one seed. Node indexing is identical across
/// views so row i refers to the same account in both.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub alpha: View,
    pub beta: View,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentorKind {
    Cns,
    Er,
    Fm,
    Ea,
    Identity,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AugmentorConfig {
    pub alpha: AugmentorKind,
    pub beta: AugmentorKind,
    /// edge-removal probability
    pub pe: f64,
    /// feature-mask column probability
    pub pf: f64,
    /// edge-adding fraction
    pub pa: f64,
}

impl Default for AugmentorConfig {
    fn default() -> Self {
        AugmentorConfig {
            alpha: AugmentorKind::Cns,
            beta: AugmentorKind::Er,
            pe: 0.3,
            pf: 0.3,
            pa: 0.3,
        }
    }
}

/// Applies one uniformly random permutation within each class's train nodes,
/// jointly to every feature block so a node's types stay together. Features
/// of non-train nodes are untouched. A train class with fewer than two
/// members degenerates to the identity.
pub fn class_aware_node_shuffle(
    features: &[FeatureBlock],
    split: &LabeledSplit,
    seed: u64,
) -> Vec<FeatureBlock> {
    let mut perm: Vec<(usize, usize)> = Vec::new(); // (from, to) row moves
    for class in 0..2u8 {
        let members: Vec<usize> = split
            .train
            .iter()
            .copied()
            .filter(|&i| split.label(i) == Some(class))
            .collect();
        let mut shuffled = members.clone();
        let mut r = rng::stream(seed, &format!("cns-class-{class}"));
        shuffled.shuffle(&mut r);
        perm.extend(members.iter().copied().zip(shuffled));
    }
    let mut out = features.to_vec();
    for (b, block) in features.iter().enumerate() {
        let d = block.dim;
        for &(from, to) in &perm {
            out[b].values[to * d..(to + 1) * d].copy_from_slice(block.row(from));
        }
    }
    out
}

/// Keeps each edge independently with probability 1-pe.
pub fn edge_removal(
    relations: &[Vec<(usize, usize)>],
    pe: f64,
    seed: u64,
) -> Vec<Vec<(usize, usize)>> {
    assert!((0.0..1.0).contains(&pe), "pe must be in [0,1)");
    relations
        .iter()
        .enumerate()
        .map(|(r, edges)| {
            let mut rng = rng::stream(seed, &format!("er-relation-{r}"));
            edges
                .iter()
                .copied()
                .filter(|_| rng.gen_bool(1.0 - pe))
                .collect()
        })
        .collect()
}

/// Zeroes each feature column independently with probability pf; the same
/// column mask applies to every node.
pub fn feature_mask(features: &[FeatureBlock], pf: f64, seed: u64) -> Vec<FeatureBlock> {
    assert!((0.0..1.0).contains(&pf), "pf must be in [0,1)");
    let mut rng = rng::stream(seed, "fm-columns");
    features
        .iter()
        .map(|block| {
            let mask: Vec<bool> = (0..block.dim).map(|_| rng.gen_bool(pf)).collect();
            let n = block.values.len() / block.dim;
            let mut values = block.values.clone();
            for i in 0..n {
                for (c, &drop) in mask.iter().enumerate() {
                    if drop {
                        values[i * block.dim + c] = 0.0;
                    }
                }
            }
            FeatureBlock {
                name: block.name.clone(),
                dim: block.dim,
                values,
            }
        })
        .collect()
}

/// Adds floor(pa * |E_r|) uniformly random new (src, dst) pairs per relation,
/// excluding self-loops and duplicates.
pub fn edge_add(
    relations: &[Vec<(usize, usize)>],
    n: usize,
    pa: f64,
    seed: u64,
) -> Vec<Vec<(usize, usize)>> {
    assert!((0.0..1.0).contains(&pa), "pa must be in [0,1)");
    relations
        .iter()
        .enumerate()
        .map(|(r, edges)| {
            let mut rng = rng::stream(seed, &format!("ea-relation-{r}"));
            let mut present: HashSet<(usize, usize)> = edges.iter().copied().collect();
            let want = (pa * edges.len() as f64).floor() as usize;
            let mut out = edges.clone();
            let possible = n.saturating_mul(n.saturating_sub(1));
            let mut added = 0;
            while added < want && present.len() < possible {
                let src = rng.gen_range(0..n);
                let dst = rng.gen_range(0..n);
                if src != dst && present.insert((src, dst)) {
                    out.push((src, dst));
                    added += 1;
                }
            }
            out
        })
        .collect()
}

fn apply(
    kind: AugmentorKind,
    g: &MultiRelationGraph,
    split: &LabeledSplit,
    cfg: &AugmentorConfig,
    seed: u64,
) -> View {
    let mut view = View::of(g);
    match kind {
        AugmentorKind::Identity => {}
        AugmentorKind::Cns => {
            view.features = class_aware_node_shuffle(g.features(), split, seed);
        }
        AugmentorKind::Er => {
            view.relations = edge_removal(g.relations(), cfg.pe, seed);
        }
        AugmentorKind::Fm => {
            view.features = feature_mask(g.features(), cfg.pf, seed);
        }
        AugmentorKind::Ea => {
            view.relations = edge_add(g.relations(), g.node_count(), cfg.pa, seed);
        }
    }
    view
}

/// Generates the two training views. Views are produced once per training
/// run, before the epoch loop; they change only when the seed changes.
pub fn make_view_pair(
    g: &MultiRelationGraph,
    split: &LabeledSplit,
    cfg: &AugmentorConfig,
    seed: u64,
) -> ViewPair {
    ViewPair {
        alpha: apply(cfg.alpha, g, split, cfg, rng::derive_seed(seed, "view-alpha")),
        beta: apply(cfg.beta, g, split, cfg, rng::derive_seed(seed, "view-beta")),
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{CLASS_BOT, CLASS_HUMAN};
    use std::collections::BTreeMap;

    fn toy(n: usize) -> (MultiRelationGraph, LabeledSplit) {
        let features = vec![
            FeatureBlock {
                name: "a".into(),
                dim: 2,
                values: (0..2 * n).map(|x| x as f64).collect(),
            },
            FeatureBlock {
                name: "b".into(),
                dim: 1,
                values: (0..n).map(|x| 100.0 + x as f64).collect(),
            },
        ];
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let g = MultiRelationGraph::new(
            (0..n).map(|i| i.to_string()).collect(),
            vec!["r".into()],
            vec![edges],
            features,
        )
        .unwrap();
        let labels: Vec<Option<u8>> = (0..n)
            .map(|i| Some(if i % 2 == 0 { CLASS_HUMAN } else { CLASS_BOT }))
            .collect();
        let train: Vec<usize> = (0..n * 3 / 4).collect();
        let test: Vec<usize> = (n * 3 / 4..n).collect();
        let s = LabeledSplit {
            labels,
            train,
            val: vec![],
            test,
        };
        (g, s)
    }

    fn row_multiset(blocks: &[FeatureBlock], ids: &[usize]) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for &i in ids {
            let key: String = blocks
                .iter()
                .flat_map(|b| b.row(i).iter())
                .map(|v| format!("{v:.17e},"))
                .collect();
            *m.entry(key).or_insert(0) += 1;
        }
        m
    }

    #[test]
    fn cns_preserves_per_class_train_multisets_and_leaves_test_rows() {
        let (g, s) = toy(16);
        for seed in 0..50u64 {
            let shuffled = class_aware_node_shuffle(g.features(), &s, seed);
            for class in 0..2u8 {
                let members: Vec<usize> = s
                    .train
                    .iter()
                    .copied()
                    .filter(|&i| s.label(i) == Some(class))
                    .collect();
                assert_eq!(
                    row_multiset(g.features(), &members),
                    row_multiset(&shuffled, &members)
                );
            }
            for &i in &s.test {
                for (b, block) in g.features().iter().enumerate() {
                    assert_eq!(block.row(i), shuffled[b].row(i), "test row changed");
                }
            }
        }
    }

    #[test]
    fn cns_keeps_feature_types_together() {
        // one permutation across blocks: whenever block a's row moved from j,
        // block b's row must come from the same j
        let (g, s) = toy(12);
        let shuffled = class_aware_node_shuffle(g.features(), &s, 7);
        for &i in &s.train {
            let a_val = shuffled[0].row(i)[0];
            let source = (a_val / 2.0) as usize; // block a row j starts at 2j
            assert_eq!(shuffled[1].row(i)[0], 100.0 + source as f64);
        }
    }

    #[test]
    fn edge_removal_is_a_subset_partition() {
        let (g, _) = toy(64);
        let kept = edge_removal(g.relations(), 0.5, 3);
        let orig: HashSet<_> = g.edges(0).iter().copied().collect();
        let kept_set: HashSet<_> = kept[0].iter().copied().collect();
        assert!(kept_set.is_subset(&orig));
        assert_eq!(kept.len(), g.relation_count());

        let unchanged = edge_removal(g.relations(), 0.0, 3);
        assert_eq!(unchanged, g.relations().to_vec());
    }

    #[test]
    fn edge_removal_kept_count_within_binomial_bounds() {
        let edges: Vec<(usize, usize)> = (0..10_000)
            .map(|i| (i % 200, (i / 200 + 1 + i % 200) % 201))
            .collect();
        let relations = vec![edges.clone()];
        let kept = edge_removal(&relations, 0.5, 11);
        let k = kept[0].len();
        assert!(
            (4800..=5200).contains(&k),
            "kept {k} of {} outside 4 sigma",
            edges.len()
        );
    }

    #[test]
    fn feature_mask_and_edge_add_edges_cases() {
        let (g, _) = toy(32);
        assert_eq!(feature_mask(g.features(), 0.0, 1), g.features().to_vec());
        assert_eq!(
            edge_add(g.relations(), g.node_count(), 0.0, 1),
            g.relations().to_vec()
        );

        // EA with pa=0.1 on a 100-edge relation -> exactly 110 edges
        let edges: Vec<(usize, usize)> = (0..100).map(|i| (i, (i + 1) % 200)).collect();
        let grown = edge_add(&[edges], 200, 0.1, 5);
        assert_eq!(grown[0].len(), 110);
        for &(s, d) in &grown[0] {
            assert_ne!(s, d);
        }
        let unique: HashSet<_> = grown[0].iter().collect();
        assert_eq!(unique.len(), 110);
    }

    #[test]
    fn identity_views_equal_input() {
        let (g, s) = toy(10);
        let cfg = AugmentorConfig {
            alpha: AugmentorKind::Identity,
            beta: AugmentorKind::Identity,
            ..Default::default()
        };
        let pair = make_view_pair(&g, &s, &cfg, 4);
        assert_eq!(pair.alpha, View::of(&g));
        assert_eq!(pair.beta, View::of(&g));
    }

    #[test]
    fn view_pair_is_deterministic_under_seed() {
        let (g, s) = toy(20);
        let cfg = AugmentorConfig::default();
        let a = make_view_pair(&g, &s, &cfg, 9);
        let b = make_view_pair(&g, &s, &cfg, 9);
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.beta, b.beta);
    }
}
