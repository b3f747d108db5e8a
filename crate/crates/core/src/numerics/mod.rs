//! Dense tensors, reverse-mode differentiation and SGD.

pub mod ops;
pub mod param;
pub mod tape;
pub mod tensor;

pub use ops::{BnStats, PoolKind};
pub use param::{ParamId, ParamRole, ParamStore, Parameter, Sgd};
pub use tape::{backward_into, BnMode, Gradients, Tape, Var};
pub use tensor::Tensor;
