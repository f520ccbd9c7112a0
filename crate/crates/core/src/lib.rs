//! Energy estimation and energy-aware pruning for small convolutional networks.
//!
//! The tensor engine and solver are generic over [`Scalar`]; the aliases at
//! the crate root fix the working precision at `f32`.

pub mod conv;
pub mod dataset;
pub mod energy;
mod error;
pub mod layer;
pub mod linalg;
pub mod network;
pub mod prune;
mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use layer::{LayerKind, LayerShape, PostOp};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f32>;
pub type FilterBank = layer::FilterBank<f32>;
pub type Network = network::Network<f32>;
pub type NetLayer = network::NetLayer<f32>;
pub type Dataset = dataset::Dataset<f32>;
