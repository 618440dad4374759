//! Semantic-aware representation learning head for multi-label image
//! classification.
//!
//! The crate is `no_std` (with `alloc`). Everything runs in `f64` on a small
//! reverse-mode [`tape`]. IO, the CLI and file formats live in the `sarl`
//! companion crate.

#![no_std]

extern crate alloc;

pub mod error;
pub mod gradcheck;
pub mod head;
pub mod init;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
mod params;
pub mod representation;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod transport;

pub use error::{Error, Result};
pub use model::{Ablation, ModelBundle, ModelConfig, ModelParams};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
