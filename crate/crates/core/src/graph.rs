//! Directed multi-relational attributed graphs, the class-aware
//! homophily/heterophily measure, and heterophilic-edge masking.

use std::fmt;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng;

pub const CLASS_HUMAN: u8 = 0;
pub const CLASS_BOT: u8 = 1;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge ({src},{dst}) in relation '{relation}' references a node >= {n}")]
    EdgeOutOfRange {
        src: usize,
        dst: usize,
        relation: String,
        n: usize,
    },
    #[error("self-loop ({node},{node}) in relation '{relation}' is not allowed")]
    SelfLoop { node: usize, relation: String },
    #[error("feature block '{name}' has {rows} rows, expected {n}")]
    FeatureRowMismatch {
        name: String,
        rows: usize,
        n: usize,
    },
    #[error("relation count mismatch: {names} names for {lists} edge lists")]
    RelationCountMismatch { names: usize, lists: usize },
    #[error("no labeled edges for relation {relation} and class {class}")]
    NoLabeledEdges { relation: usize, class: u8 },
    #[error("relation index {index} out of range ({count} relations)")]
    RelationOutOfRange { index: usize, count: usize },
}

/// One named block of per-node features, an n x dim row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub name: String,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl FeatureBlock {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Directed graph with R typed edge sets and multi-type node features.
/// Immutable after construction; duplicate edges are collapsed and
/// self-loops rejected at the door.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiRelationGraph {
    node_ids: Vec<String>,
    relation_names: Vec<String>,
    relations: Vec<Vec<(usize, usize)>>,
    features: Vec<FeatureBlock>,
}

impl MultiRelationGraph {
    pub fn new(
        node_ids: Vec<String>,
        relation_names: Vec<String>,
        mut relations: Vec<Vec<(usize, usize)>>,
        features: Vec<FeatureBlock>,
    ) -> Result<Self, GraphError> {
        let n = node_ids.len();
        if relation_names.len() != relations.len() {
            return Err(GraphError::RelationCountMismatch {
                names: relation_names.len(),
                lists: relations.len(),
            });
        }
        for (r, edges) in relations.iter_mut().enumerate() {
            for &(src, dst) in edges.iter() {
                if src >= n || dst >= n {
                    return Err(GraphError::EdgeOutOfRange {
                        src,
                        dst,
                        relation: relation_names[r].clone(),
                        n,
                    });
                }
                if src == dst {
                    return Err(GraphError::SelfLoop {
                        node: src,
                        relation: relation_names[r].clone(),
                    });
                }
            }
            edges.sort_unstable();
            edges.dedup();
        }
        for block in &features {
            let rows = if block.dim == 0 {
                0
            } else {
                block.values.len() / block.dim
            };
            if block.dim == 0 || rows * block.dim != block.values.len() || rows != n {
                return Err(GraphError::FeatureRowMismatch {
                    name: block.name.clone(),
                    rows,
                    n,
                });
            }
        }
        Ok(MultiRelationGraph {
            node_ids,
            relation_names,
            relations,
            features,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn edges(&self, relation: usize) -> &[(usize, usize)] {
        &self.relations[relation]
    }

    pub fn relations(&self) -> &[Vec<(usize, usize)>] {
        &self.relations
    }

    pub fn features(&self) -> &[FeatureBlock] {
        &self.features
    }

    pub fn edge_count(&self) -> usize {
        self.relations.iter().map(|e| e.len()).sum()
    }
}

/// Partial labels plus disjoint train/val/test id lists.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSplit {
    pub labels: Vec<Option<u8>>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl LabeledSplit {
    pub fn label(&self, node: usize) -> Option<u8> {
        self.labels.get(node).copied().flatten()
    }

    pub fn labeled_count(&self, class: u8) -> usize {
        self.labels.iter().filter(|l| **l == Some(class)).count()
    }
}

/// Class-aware homophily ratio of relation `r` for source class `c`:
/// among out-edges of class-c sources whose destination is also labeled,
/// the fraction landing on class c.
pub fn homophily_ratio(
    g: &MultiRelationGraph,
    s: &LabeledSplit,
    relation: usize,
    class: u8,
) -> Result<f64, GraphError> {
    let (same, total) = homophily_counts(g, s, relation, class)?;
    if total == 0 {
        return Err(GraphError::NoLabeledEdges { relation, class });
    }
    Ok(same as f64 / total as f64)
}

pub fn heterophily_ratio(
    g: &MultiRelationGraph,
    s: &LabeledSplit,
    relation: usize,
    class: u8,
) -> Result<f64, GraphError> {
    Ok(1.0 - homophily_ratio(g, s, relation, class)?)
}

/// (same-class, labeled-destination) edge counts backing the ratio; exposed
/// so callers can compare ratios in exact rational arithmetic.
pub fn homophily_counts(
    g: &MultiRelationGraph,
    s: &LabeledSplit,
    relation: usize,
    class: u8,
) -> Result<(usize, usize), GraphError> {
    if relation >= g.relation_count() {
        return Err(GraphError::RelationOutOfRange {
            index: relation,
            count: g.relation_count(),
        });
    }
    let mut same = 0usize;
    let mut total = 0usize;
    for &(src, dst) in g.edges(relation) {
        let (Some(ys), Some(yd)) = (s.label(src), s.label(dst)) else {
            continue;
        };
        if ys != class {
            continue;
        }
        total += 1;
        if yd == class {
            same += 1;
        }
    }
    Ok((same, total))
}

/// Removes floor(fraction * H_r) of the labeled heterophilic edges of each
/// relation uniformly at random. Homophilic and unlabeled-endpoint edges are
/// untouched. Deterministic under `seed`.
pub fn mask_heterophilic_edges(
    g: &MultiRelationGraph,
    s: &LabeledSplit,
    fraction: f64,
    seed: u64,
) -> MultiRelationGraph {
    assert!((0.0..=1.0).contains(&fraction), "fraction must be in [0,1]");
    let mut relations = Vec::with_capacity(g.relation_count());
    for (r, edges) in g.relations().iter().enumerate() {
        let mut hetero: Vec<usize> = Vec::new();
        for (e, &(src, dst)) in edges.iter().enumerate() {
            if let (Some(ys), Some(yd)) = (s.label(src), s.label(dst)) {
                if ys != yd {
                    hetero.push(e);
                }
            }
        }
        let remove = (fraction * hetero.len() as f64).floor() as usize;
        let mut rng = rng::stream(seed, &format!("mask-relation-{r}"));
        hetero.shuffle(&mut rng);
        let mut removed = vec![false; edges.len()];
        for &e in hetero.iter().take(remove) {
            removed[e] = true;
        }
        relations.push(
            edges
                .iter()
                .enumerate()
                .filter(|(e, _)| !removed[*e])
                .map(|(_, &p)| p)
                .collect(),
        );
    }
    MultiRelationGraph::new(
        g.node_ids().to_vec(),
        g.relation_names().to_vec(),
        relations,
        g.features().to_vec(),
    )
    .expect("masking cannot invalidate a valid graph")
}

/// Per-(relation, class) homophily plus node/edge counts.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub class_counts: [usize; 2],
    pub labeled: usize,
    /// (relation name, class, homophily); None when no labeled edges qualify.
    pub homophily: Vec<(String, u8, Option<f64>)>,
}

pub fn graph_stats(g: &MultiRelationGraph, s: &LabeledSplit) -> GraphStats {
    let mut homophily = Vec::new();
    for c in [CLASS_HUMAN, CLASS_BOT] {
        for r in 0..g.relation_count() {
            let ratio = homophily_ratio(g, s, r, c).ok();
            homophily.push((g.relation_names()[r].clone(), c, ratio));
        }
    }
    GraphStats {
        nodes: g.node_count(),
        edges: g.edge_count(),
        class_counts: [
            s.labeled_count(CLASS_HUMAN),
            s.labeled_count(CLASS_BOT),
        ],
        labeled: s.labels.iter().filter(|l| l.is_some()).count(),
        homophily,
    }
}

pub fn class_name(class: u8) -> &'static str {
    if class == CLASS_BOT {
        "bot"
    } else {
        "human"
    }
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "#nodes {}  #edges {}  #human {}  #bot {}  labeled {}",
            self.nodes, self.edges, self.class_counts[0], self.class_counts[1], self.labeled
        )?;
        writeln!(f, "{:<10} {:<10} {:>8}", "class", "relation", "homo(%)")?;
        for (rel, c, h) in &self.homophily {
            match h {
                Some(h) => writeln!(
                    f,
                    "{:<10} {:<10} {:>8.2}",
                    class_name(*c),
                    rel,
                    h * 100.0
                )?,
                None => writeln!(f, "{:<10} {:<10} {:>8}", class_name(*c), rel, "n/a")?,
            }
        }
        Ok(())
    }
}
