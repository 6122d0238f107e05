//! Deterministic CPU engine: the four reference architectures, masked
//! forward/backward passes and the two optimizers.

pub mod arch;
pub mod engine;
pub mod network;
pub mod optim;
pub mod params;

pub use arch::{ArchKind, DatasetKind, InputShape, KernelSpec, LayerClass, NetworkArch, Op};
pub use engine::Gradients;
pub use network::{evaluate, forward, loss_and_grads, Evaluation};
pub use optim::{Optimizer, OptimizerKind, Slot};
pub use params::{glorot_normal_init, LayerParams, ParameterSet};
