//! Personalized soft-prompt adapters over a toy frozen decoder LM.
//!
//! The pipeline: encode a user's natural-language interaction history into
//! per-item embeddings, compress them through a soft-prompt adapter (MLP,
//! Transformer, or Perceiver resampler) into prompt tokens in decoder space,
//! and steer a small frozen decoder-only LM to generate liked/disliked genre
//! predictions, which are scored with class-weighted precision/recall/F1.
//!
//! Numeric modules are generic over the scalar type ([`scalar::Scalar`],
//! `f32`/`f64`); the aliases below pin the default `f64` pipeline.

pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod adapter;
pub mod experiment;
pub mod genres;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod params;
pub mod sampling;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod vocab;

pub use error::{Error, Result};
pub use genres::{Genre, GenreLabelSet, ALL_GENRES, GENRE_COUNT};
pub use ops::Reduction;
pub use params::ParamId;
pub use scalar::Scalar;
pub use tape::NodeId;

/// Default-precision tensor.
pub type Tensor = tensor::Tensor<f64>;
/// Default-precision recording tape.
pub type Tape = tape::Tape<f64>;
/// Default-precision parameter store.
pub type Params = params::Params<f64>;
/// Default-precision optimizer.
pub type Adam = optim::Adam<f64>;

/// Single-precision variants, for forward-only work.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape32 = tape::Tape<f32>;
pub type Params32 = params::Params<f32>;
pub type Adam32 = optim::Adam<f32>;
