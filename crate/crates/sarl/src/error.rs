use std::io;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Core(#[from] sarl_core::Error),
    #[error("format: bad magic {found:?}, expected {expected:?}")]
    Magic { found: Vec<u8>, expected: &'static [u8] },
    #[error("format: unsupported version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("format: truncated at byte {offset}: expected {expected} bytes, found {actual}")]
    Truncated { offset: usize, expected: usize, actual: usize },
    #[error("format: {0}")]
    Format(String),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
