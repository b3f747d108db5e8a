//! Evolutionary architecture search for continual learning.
//!
//! Architectures are encoded as twelve-code [`Genotype`]s, decoded into
//! ResNet-style convolutional networks, trained on class-incremental task
//! streams and scored by their average incremental accuracy. The numeric
//! engine is generic over [`Scalar`]; training runs in `f32` and gradient
//! checks in `f64`.

pub mod analysis;
pub mod builder;
pub mod checkpoint;
pub mod error;
pub mod genotype;
pub mod harness;
pub mod numerics;
pub mod records;
pub mod scalar;
pub mod search;
pub mod seed;

pub use builder::{ArchitecturePlan, ComponentConfig, DownsampleKind, InputShape};
pub use error::{Error, Result};
pub use genotype::{Bounds, Genotype, SearchSpace};
pub use scalar::Scalar;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type Network32 = builder::Network<f32>;
pub type Network64 = builder::Network<f64>;
pub type Tape32 = numerics::Tape<f32>;
pub type Tape64 = numerics::Tape<f64>;
