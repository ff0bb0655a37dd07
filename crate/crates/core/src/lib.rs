//! From-scratch implementation of CoTAR centralized token mixing and the
//! TeCh dual-tokenization classifier for multichannel medical time series.
//!
//! Everything numeric runs in `f64` on a small define-by-run autodiff
//! [`graph`]. On top of it sit the token mixers ([`layers`]), encoder
//! blocks ([`encoder`]), dual tokenizers ([`tokenizer`]), the assembled
//! classifier ([`model`]), training and metrics ([`optim`], [`train`],
//! [`metrics`]), augmentation ([`augment`]), centralization analysis
//! ([`centrality`]), synthetic data and file formats ([`data`],
//! [`checkpoint`]), the scaling benchmark ([`bench`]) and run configuration
//! ([`config`]).

pub mod error;
pub mod graph;
pub mod gradcheck;
pub mod param;
pub mod tensor;

pub mod encoder;
pub mod layers;
pub mod model;
pub mod tokenizer;

pub mod augment;
pub mod bench;
pub mod centrality;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod metrics;
pub mod optim;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use param::{ParamId, ParamStore};
pub use tensor::Tensor;

/// Portable seeded generator used for every random draw in the crate.
pub type SeedRng = rand_chacha::ChaCha8Rng;
