//! Camouflaged-object segmentation with cross-level fusion: a small tensor
//! and autodiff substrate, the network blocks, boundary-weighted losses,
//! evaluation metrics, a synthetic dataset and a training loop.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod ops;
mod par;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use config::Config;
pub use error::{Error, Result};
pub use network::{NetworkConfig, NetworkParams, Variant};
pub use rng::Rng;
pub use tape::{Tape, Var};
pub use tensor::{Real, Shape, Tensor};
