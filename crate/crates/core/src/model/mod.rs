//! The encoder: multi-type feature fusion, channel-wise attention-free
//! relational aggregation, and the projection head.

mod baseline;
mod encoder;

pub use baseline::{baseline_forward, Baseline, BaselineParams};
pub use encoder::{edge_attention, encode, fuse_features, project, EncoderOutput, Mode};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Which endpoints a node aggregates from. An edge (s, d) is an active
/// behavior of s; under `In`, d receives s's message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborDir {
    In,
    Out,
    Both,
}

/// Channel-wise tanh attention (the main encoder) or per-neighbor scalar
/// softmax weights (the w/o-Neg variant).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Tanh,
    Softmax,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// dimension of each input feature type, in block order
    pub feature_dims: Vec<usize>,
    /// token width each type is aligned to
    pub align_dim: usize,
    /// width of h0 and of every aggregation layer
    pub hidden: usize,
    pub layers: usize,
    pub proj_dim: usize,
    pub relations: usize,
    /// fixed self-information weights, one per layer; not trainable
    pub lambdas: Vec<f64>,
    pub att_dropout: f64,
    pub mlp_dropout: f64,
    pub leaky_slope: f64,
    pub neighbor_dir: NeighborDir,
    pub attention: AttentionKind,
}

impl ModelConfig {
    pub fn defaults(feature_dims: Vec<usize>, relations: usize) -> Self {
        ModelConfig {
            feature_dims,
            align_dim: 16,
            hidden: 16,
            layers: 2,
            proj_dim: 16,
            relations,
            lambdas: vec![1.0, 1.0],
            att_dropout: 0.3,
            mlp_dropout: 0.1,
            leaky_slope: 0.01,
            neighbor_dir: NeighborDir::In,
            attention: AttentionKind::Tanh,
        }
    }
}

/// Feature-fusion parameters: per-type aligners, one single-head
/// transformer encoder layer over the type tokens, and the input MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct Fusion<T> {
    pub aligners: Vec<T>,
    pub wq: T,
    pub wk: T,
    pub wv: T,
    pub wo: T,
    pub ln1_gain: T,
    pub ln1_bias: T,
    pub ffn_w1: T,
    pub ffn_b1: T,
    pub ffn_w2: T,
    pub ffn_b2: T,
    pub ln2_gain: T,
    pub ln2_bias: T,
    pub w_input: T,
    pub b_input: T,
}

/// One aggregation layer: shared attention transform, query/key channel
/// vectors, and a weight matrix per relation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub w_att: T,
    pub q: T,
    pub k: T,
    pub w_rel: Vec<T>,
}

/// Two-layer projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct Proj<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub fusion: Fusion<T>,
    pub layers: Vec<Layer<T>>,
    pub proj: Proj<T>,
}

pub type ModelParams = Params<Tensor>;
pub type BoundParams = Params<Var>;

impl<T> Params<T> {
    /// Walks every parameter with a stable name, in a fixed order shared by
    /// `visit`, `visit_mut`, and `map`.
    pub fn visit(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        let f = &self.fusion;
        for (i, a) in f.aligners.iter().enumerate() {
            out.push((format!("fusion.aligner{i}"), a));
        }
        for (name, t) in [
            ("fusion.wq", &f.wq),
            ("fusion.wk", &f.wk),
            ("fusion.wv", &f.wv),
            ("fusion.wo", &f.wo),
            ("fusion.ln1_gain", &f.ln1_gain),
            ("fusion.ln1_bias", &f.ln1_bias),
            ("fusion.ffn_w1", &f.ffn_w1),
            ("fusion.ffn_b1", &f.ffn_b1),
            ("fusion.ffn_w2", &f.ffn_w2),
            ("fusion.ffn_b2", &f.ffn_b2),
            ("fusion.ln2_gain", &f.ln2_gain),
            ("fusion.ln2_bias", &f.ln2_bias),
            ("fusion.w_input", &f.w_input),
            ("fusion.b_input", &f.b_input),
        ] {
            out.push((name.to_string(), t));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.w_att"), &layer.w_att));
            out.push((format!("layer{l}.q"), &layer.q));
            out.push((format!("layer{l}.k"), &layer.k));
            for (r, w) in layer.w_rel.iter().enumerate() {
                out.push((format!("layer{l}.rel{r}.w"), w));
            }
        }
        out.push(("proj.w1".to_string(), &self.proj.w1));
        out.push(("proj.b1".to_string(), &self.proj.b1));
        out.push(("proj.w2".to_string(), &self.proj.w2));
        out.push(("proj.b2".to_string(), &self.proj.b2));
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(String, &mut T)> {
        let mut out = Vec::new();
        let f = &mut self.fusion;
        for (i, a) in f.aligners.iter_mut().enumerate() {
            out.push((format!("fusion.aligner{i}"), a));
        }
        for (name, t) in [
            ("fusion.wq", &mut f.wq),
            ("fusion.wk", &mut f.wk),
            ("fusion.wv", &mut f.wv),
            ("fusion.wo", &mut f.wo),
            ("fusion.ln1_gain", &mut f.ln1_gain),
            ("fusion.ln1_bias", &mut f.ln1_bias),
            ("fusion.ffn_w1", &mut f.ffn_w1),
            ("fusion.ffn_b1", &mut f.ffn_b1),
            ("fusion.ffn_w2", &mut f.ffn_w2),
            ("fusion.ffn_b2", &mut f.ffn_b2),
            ("fusion.ln2_gain", &mut f.ln2_gain),
            ("fusion.ln2_bias", &mut f.ln2_bias),
            ("fusion.w_input", &mut f.w_input),
            ("fusion.b_input", &mut f.b_input),
        ] {
            out.push((name.to_string(), t));
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{l}.w_att"), &mut layer.w_att));
            out.push((format!("layer{l}.q"), &mut layer.q));
            out.push((format!("layer{l}.k"), &mut layer.k));
            for (r, w) in layer.w_rel.iter_mut().enumerate() {
                out.push((format!("layer{l}.rel{r}.w"), w));
            }
        }
        out.push(("proj.w1".to_string(), &mut self.proj.w1));
        out.push(("proj.b1".to_string(), &mut self.proj.b1));
        out.push(("proj.w2".to_string(), &mut self.proj.w2));
        out.push(("proj.b2".to_string(), &mut self.proj.b2));
        out
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Params<U> {
        Params {
            fusion: Fusion {
                aligners: self.fusion.aligners.iter().map(&mut f).collect(),
                wq: f(&self.fusion.wq),
                wk: f(&self.fusion.wk),
                wv: f(&self.fusion.wv),
                wo: f(&self.fusion.wo),
                ln1_gain: f(&self.fusion.ln1_gain),
                ln1_bias: f(&self.fusion.ln1_bias),
                ffn_w1: f(&self.fusion.ffn_w1),
                ffn_b1: f(&self.fusion.ffn_b1),
                ffn_w2: f(&self.fusion.ffn_w2),
                ffn_b2: f(&self.fusion.ffn_b2),
                ln2_gain: f(&self.fusion.ln2_gain),
                ln2_bias: f(&self.fusion.ln2_bias),
                w_input: f(&self.fusion.w_input),
                b_input: f(&self.fusion.b_input),
            },
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w_att: f(&l.w_att),
                    q: f(&l.q),
                    k: f(&l.k),
                    w_rel: l.w_rel.iter().map(&mut f).collect(),
                })
                .collect(),
            proj: Proj {
                w1: f(&self.proj.w1),
                b1: f(&self.proj.b1),
                w2: f(&self.proj.w2),
                b2: f(&self.proj.b2),
            },
        }
    }
}

/// Xavier-uniform bound for an (in, out) matrix.
pub(crate) fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(-bound..bound))
            .collect(),
    )
}

impl ModelParams {
    /// Weight matrices are Xavier-uniform, biases zero, Q/K and layer-norm
    /// gains all-ones (so attention starts in the low-pass regime).
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.align_dim;
        let t = cfg.feature_dims.len();
        let fusion = Fusion {
            aligners: cfg
                .feature_dims
                .iter()
                .map(|&dt| xavier(rng, dt, d))
                .collect(),
            wq: xavier(rng, d, d),
            wk: xavier(rng, d, d),
            wv: xavier(rng, d, d),
            wo: xavier(rng, d, d),
            ln1_gain: Tensor::filled(1, d, 1.0),
            ln1_bias: Tensor::zeros(1, d),
            ffn_w1: xavier(rng, d, 2 * d),
            ffn_b1: Tensor::zeros(1, 2 * d),
            ffn_w2: xavier(rng, 2 * d, d),
            ffn_b2: Tensor::zeros(1, d),
            ln2_gain: Tensor::filled(1, d, 1.0),
            ln2_bias: Tensor::zeros(1, d),
            w_input: xavier(rng, t * d, cfg.hidden),
            b_input: Tensor::zeros(1, cfg.hidden),
        };
        let layers = (0..cfg.layers)
            .map(|_| Layer {
                w_att: xavier(rng, cfg.hidden, cfg.hidden),
                q: Tensor::filled(1, cfg.hidden, 1.0),
                k: Tensor::filled(1, cfg.hidden, 1.0),
                w_rel: (0..cfg.relations)
                    .map(|_| xavier(rng, cfg.hidden, cfg.hidden))
                    .collect(),
            })
            .collect();
        let proj = Proj {
            w1: xavier(rng, cfg.hidden, cfg.proj_dim),
            b1: Tensor::zeros(1, cfg.proj_dim),
            w2: xavier(rng, cfg.proj_dim, cfg.proj_dim),
            b2: Tensor::zeros(1, cfg.proj_dim),
        };
        Params {
            fusion,
            layers,
            proj,
        }
    }

    /// Registers every parameter on the tape as a grad-requiring leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.map(|t| tape.leaf(t.clone(), true))
    }
}
