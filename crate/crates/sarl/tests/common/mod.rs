#![allow(dead_code)]

use sarl::config::TrainConfig;
use sarl::trainer::{self, TrainResult};
use sarl_core::synthetic::{self, Dataset, SyntheticConfig};

/// A small synthetic split pair for fast trainer tests.
pub fn small_data(seed: u64) -> (Dataset, Dataset) {
    let cfg = SyntheticConfig { seed, n_train: 48, n_test: 24, ..SyntheticConfig::default() };
    synthetic::generate(&cfg).unwrap()
}

/// The synthetic preset shrunk so a run takes a fraction of a second.
pub fn quick_config() -> TrainConfig {
    TrainConfig { epochs: 3, batch_size: 16, d_v: 8, n_heads: 2, d_t: 4, d_1: 4, d_2: 4, ..TrainConfig::synthetic() }
}

/// Trains and returns the result together with the log text.
pub fn run(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> (TrainResult, String) {
    let mut log = Vec::new();
    let res = trainer::train(cfg, train, Some(test), &mut log).unwrap();
    (res, String::from_utf8(log).unwrap())
}

pub fn epoch_lines(log: &str) -> Vec<&str> {
    log.lines().filter(|l| l.starts_with("epoch=")).collect()
}
