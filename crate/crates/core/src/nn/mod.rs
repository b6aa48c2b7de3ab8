//! A small reverse-mode autodiff engine and the networks built on it.

pub mod adam;
pub mod ddm;
pub mod layers;
pub mod network;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use ddm::{embed_limited, DdmForward, DdmModel};
pub use layers::{BatchStats, Mode};
pub use network::{Layer, NetOutput, Network, NetworkSpec, RunningStats};
pub use tape::{Backward, Gradients, Tape, Var};
pub use tensor::Tensor;
