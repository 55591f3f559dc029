//! Dense and convolutional network core with hand-derived gradients.

mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod losses;
mod model;
mod network;
mod optim;
mod real;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{
    he_uniform, Architecture, Batch, ConvSharing, ForwardCache, GradientBuffer, Head, Mode, Network, NetworkSpec, ParamBlock,
    ParamLayout, Parameters,
};
pub use losses::{policy_objective, value_loss};
pub use model::{LinearCache, LinearModel, Model};
pub use optim::{optimizer_step, Adam, Optimizer, OptimizerKind, UpdateDirection};
pub use real::Real;
pub use tensor::Tensor;
