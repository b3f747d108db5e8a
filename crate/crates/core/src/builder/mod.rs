//! Decoding genotypes into layer plans and trainable networks.

mod network;
mod plan;

pub use network::{Head, HeadLayout, HeadSelector, Mode, Network};
pub use plan::{
    decode, ArchitecturePlan, ComponentConfig, DownsampleKind, InputShape, LayerKind, LayerSpec,
    Preset,
};
