//! Minimal reverse-mode differentiable numerical core.
//!
//! Dense `f64` tensors, a tape that records the handful of operations the
//! trajectory policy needs, named parameter storage with layer-group tags,
//! an adaptive-moment optimiser and a bit-exact checkpoint container.

pub mod checkpoint;
pub mod error;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{DiffError, Result};
pub use layers::{sinusoidal_embed, Linear};
pub use optim::{Adam, AdamConfig};
pub use params::{hex, init_fan_in, Param, ParamGroup, ParamId, ParamStore};
pub use tape::{gelu, gelu_grad, Gradients, Tape, Var};
pub use tensor::{gemm, Tensor};
