//! File formats, configuration, the training loop and the CLI plumbing for
//! [`sarl_core`].

mod bytes;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod kv;
pub mod manifest;
pub mod pgm;
pub mod predictions;
pub mod trainer;

pub use error::{Error, Result};
