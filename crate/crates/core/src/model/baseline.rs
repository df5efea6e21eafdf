use rand_chacha::ChaCha8Rng;

use super::{xavier, ModelConfig, NeighborDir};
use crate::graph::FeatureBlock;
use crate::tape::{Tape, Var};
use crate::tensor::{NumError, Tensor};

/// Plain mean-aggregator GNN used as the relational baseline: no feature
/// fusion, no edge attention, a linear classification head on top.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline<T> {
    pub w_in: T,
    pub b_in: T,
    /// per layer, one weight matrix per relation
    pub layers: Vec<Vec<T>>,
    pub w_head: T,
    pub b_head: T,
}

pub type BaselineParams = Baseline<Tensor>;

impl<T> Baseline<T> {
    pub fn visit(&self) -> Vec<(String, &T)> {
        let mut out = vec![
            ("w_in".to_string(), &self.w_in),
            ("b_in".to_string(), &self.b_in),
        ];
        for (l, rels) in self.layers.iter().enumerate() {
            for (r, w) in rels.iter().enumerate() {
                out.push((format!("layer{l}.rel{r}.w"), w));
            }
        }
        out.push(("w_head".to_string(), &self.w_head));
        out.push(("b_head".to_string(), &self.b_head));
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(String, &mut T)> {
        let mut out = vec![
            ("w_in".to_string(), &mut self.w_in),
            ("b_in".to_string(), &mut self.b_in),
        ];
        for (l, rels) in self.layers.iter_mut().enumerate() {
            for (r, w) in rels.iter_mut().enumerate() {
                out.push((format!("layer{l}.rel{r}.w"), w));
            }
        }
        out.push(("w_head".to_string(), &mut self.w_head));
        out.push(("b_head".to_string(), &mut self.b_head));
        out
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Baseline<U> {
        Baseline {
            w_in: f(&self.w_in),
            b_in: f(&self.b_in),
            layers: self
                .layers
                .iter()
                .map(|rels| rels.iter().map(&mut f).collect())
                .collect(),
            w_head: f(&self.w_head),
            b_head: f(&self.b_head),
        }
    }
}

impl BaselineParams {
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let in_dim: usize = cfg.feature_dims.iter().sum();
        Baseline {
            w_in: xavier(rng, in_dim, cfg.hidden),
            b_in: Tensor::zeros(1, cfg.hidden),
            layers: (0..cfg.layers)
                .map(|_| {
                    (0..cfg.relations)
                        .map(|_| xavier(rng, cfg.hidden, cfg.hidden))
                        .collect()
                })
                .collect(),
            w_head: xavier(rng, cfg.hidden, 2),
            b_head: Tensor::zeros(1, 2),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> Baseline<Var> {
        self.map(|t| tape.leaf(t.clone(), true))
    }
}

/// Forward pass: concatenated raw features -> input MLP -> per-relation
/// mean aggregation layers -> (hidden, logits).
pub fn baseline_forward(
    tape: &mut Tape,
    features: &[FeatureBlock],
    relations: &[Vec<(usize, usize)>],
    params: &Baseline<Var>,
    cfg: &ModelConfig,
) -> Result<(Var, Var), NumError> {
    let blocks: Vec<Var> = features
        .iter()
        .map(|b| {
            let n = b.values.len() / b.dim;
            tape.constant(Tensor::new(n, b.dim, b.values.clone()))
        })
        .collect();
    let x = tape.concat_cols(&blocks)?;
    let n = tape.value(x).rows();
    let h = tape.matmul(x, params.w_in)?;
    let h = tape.add_row(h, params.b_in)?;
    let mut h = tape.leaky_relu(h, cfg.leaky_slope)?;

    for rels in &params.layers {
        let mut acc: Option<Var> = None;
        for (r, w) in rels.iter().enumerate() {
            let edges = &relations[r];
            let mut recv = Vec::with_capacity(edges.len());
            let mut send = Vec::with_capacity(edges.len());
            for &(s, d) in edges {
                match cfg.neighbor_dir {
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
            let combined = if recv.is_empty() {
                h
            } else {
                let hj = tape.gather_rows(h, &send)?;
                let msg = tape.segment_mean(hj, &recv, n)?;
                tape.add(h, msg)?
            };
            let out = tape.matmul(combined, *w)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, out)?,
                None => out,
            });
        }
        let summed = acc.unwrap_or(h);
        let scaled = tape.scale(summed, 1.0 / rels.len().max(1) as f64)?;
        h = tape.leaky_relu(scaled, cfg.leaky_slope)?;
    }

    let logits = tape.matmul(h, params.w_head)?;
    let logits = tape.add_row(logits, params.b_head)?;
    Ok((h, logits))
}
