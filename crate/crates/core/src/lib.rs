//! BotSCL: a heterophily-aware, supervised-contrastive graph encoder for
//! bot-vs-human node classification on directed multi-relational graphs,
//! with a calibrated synthetic benchmark generator and experiment runners.

pub mod augment;
pub mod checkpoint;
pub mod dataset;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod stage2;
pub mod synth;
pub mod tape;
pub mod tensor;

pub use tape::{Tape, Var};
pub use tensor::{NumError, Tensor};
