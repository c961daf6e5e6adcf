//! Layers, parameter registry, optimizer and checkpoints.

mod arch;
pub mod checkpoint;
mod layers;
mod optim;
mod registry;

pub use arch::ArchConfig;
pub use layers::{conv, group_norm, kaiming_normal, residual_block_forward, BlockWeights, ConvWeight, NORM_EPS};
pub use optim::{cosine_lr, sgd_step, sgd_step_where, SgdState, Snapshot};
pub use registry::{BoundParams, Group, Param, ParamGrads, ParamRegistry};
