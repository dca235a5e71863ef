//! Differentiable-computation substrate: parameter stores, a reverse-mode
//! tape, dense and recurrent layers, RMSProp, checkpointing, and gradient
//! verification. All arithmetic is 64-bit.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod param;
pub mod tape;

pub use layers::{masked_softmax, Activation, Dense, GruCell};
pub use param::{Block, ParamStore};
pub use tape::{Node, Tape};
