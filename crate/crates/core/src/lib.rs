//! Lottery-ticket pruning laboratory.
//!
//! Trains small dense and convolutional networks, prunes them with a family
//! of mask criteria, applies mask-1 / mask-0 actions between rounds, and
//! evaluates heuristic and learned Supermasks on untrained weights.

pub mod actions;
pub mod bitpack;
pub mod criteria;
pub mod data;
pub mod error;
pub mod mask;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod supermask;
pub mod tensor;

pub use error::{Error, Result};
pub use mask::{LayerMask, Mask};
pub use rng::RngStream;
pub use tensor::{Real, Tensor};
