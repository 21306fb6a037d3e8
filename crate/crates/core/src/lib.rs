//! Compression-aware training of small feed-forward networks.
//!
//! Masks on neurons, ranks, weight entries and bit-widths are trained jointly
//! with the weights under a scale-invariant `ℓ1/ℓ2` cost surrogate (FLOPs or a
//! measured latency table). A projected optimizer keeps masks nonnegative, so
//! exact zeros appear during training and [`model::Model::extract`] can
//! materialize the smaller architecture without thresholding.

pub mod data;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod latency;
pub mod layers;
pub mod model;
pub mod optim;
pub mod params;
pub mod stats;
pub mod surrogates;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
