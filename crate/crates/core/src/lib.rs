//! Learnable second-order similarity between trained convolutional networks.
//!
//! The crate builds a population of small task-labelled CNN checkpoints
//! ([`forge`], [`store`]), aligns their filters against learnable
//! second-order filters so that filter and channel order no longer matter
//! ([`align`]), trains a branch-per-layer metric network over those aligned
//! representations ([`second_order`]), and runs task classification,
//! retrieval, transferability and ablation protocols ([`eval`]).
//!
//! Everything is deterministic given explicit seeds and runs in 64-bit
//! floating point on the CPU.

pub mod align;
pub mod cli;
pub mod error;
pub mod eval;
pub mod forge;
pub mod rng;
pub mod second_order;
pub mod store;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ArchDescriptor, ConvSpec, Tensor};
