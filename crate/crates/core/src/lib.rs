//! A desk-scale text-infilling laboratory.
//!
//! The crate trains small attention seq2seq models and fills blanked-out
//! positions of a target sentence with several inference algorithms:
//!
//! * `tigs` — gradient search over the blank embedding vectors: alternating
//!   optimization steps (Nesterov updates on the continuous vectors) and
//!   projection steps (nearest-K retrieval plus NLL argmin).
//! * `decode` — five baselines: constrained beam search (forward, backward,
//!   combined), bidirectional beam search over a forward/backward model pair,
//!   and Gibbs-style resampling from a bidirectional decoder.
//! * `eval` — model-based NLL, sentence BLEU-4, and a strategy × ratio
//!   report grid.
//!
//! Everything below runs on a small in-crate tensor type with a recording
//! gradient tape (`tape`), so the whole pipeline is dependency-light and
//! deterministic given seeds.

pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod tigs;
pub mod train;
pub mod util;

pub use error::{Error, Result};
pub use tensor::Tensor;
