//! A small convolutional super-resolution network with its own training
//! machinery: tensors, GEMM-backed kernels, a gradient tape, Adam and a
//! checkpoint format.

mod adam;
mod checkpoint;
mod model;
pub mod ops;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use model::{forward, forward_tape, init_params, ModelConfig, ParamSpec, MIN_INPUT};
pub use tape::{backward_pass_count, Tape, Var};
pub use tensor::{Shape, Tensor};
