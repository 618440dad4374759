//! Seeded synthetic multi-label data.
//!
//! Every class owns a fixed 3×3 "blob" signature (or, for precomputed
//! features, a single feature vector). A sample picks a label subset, stamps
//! the signature of each chosen class at a random location, and adds Gaussian
//! noise. Labels are exactly the stamped classes, so the task is solvable.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::init::{self, SeededRng};
use crate::tensor::Tensor;

/// Side of the square blob stamped into images.
pub const BLOB: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    /// `H × W × channels` image, fed to the tiny conv encoder.
    Image,
    /// `(H·W) × channels` patch features, used as-is.
    Features,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kind: PayloadKind,
    /// Norm of each class signature.
    pub strength: f64,
    pub noise: f64,
    /// Target mean number of labels per sample.
    pub cardinality: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            n_train: 500,
            n_test: 200,
            num_classes: 6,
            height: 8,
            width: 8,
            channels: 3,
            kind: PayloadKind::Image,
            strength: 5.0,
            noise: 0.3,
            cardinality: 1.5,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [self.n_train, self.n_test, self.num_classes, self.height, self.width, self.channels];
        if counts.contains(&0) {
            return Err(Error::Config(format!("synthetic counts must be at least 1: {self:?}")));
        }
        if self.kind == PayloadKind::Image && (self.height < BLOB || self.width < BLOB) {
            return Err(Error::Config(format!(
                "a {}x{} image cannot hold a {BLOB}x{BLOB} blob",
                self.height, self.width
            )));
        }
        if !(self.cardinality >= 1.0 && self.cardinality <= self.num_classes as f64) {
            return Err(Error::Config(format!(
                "cardinality {} is infeasible for {} classes",
                self.cardinality, self.num_classes
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.strength.is_finite()) {
            return Err(Error::Config(format!("bad noise {} or strength {}", self.noise, self.strength)));
        }
        Ok(())
    }

    /// Values per sample.
    pub fn payload_len(&self) -> usize {
        self.height * self.width * self.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub payload: Vec<f32>,
    pub labels: Vec<u8>,
}

impl LabeledSample {
    pub fn label_vec(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| l as f64).collect()
    }
}

/// One split of samples sharing a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: PayloadKind,
    pub height: usize,
    pub width: usize,
    /// Image channels, or feature width.
    pub depth: usize,
    pub num_classes: usize,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match self.kind {
            PayloadKind::Image => vec![self.height, self.width, self.depth],
            PayloadKind::Features => vec![self.height * self.width, self.depth],
        }
    }

    /// Sample `i` as a model input tensor.
    pub fn input(&self, i: usize) -> Tensor {
        let data = self.samples[i].payload.iter().map(|&v| v as f64).collect();
        Tensor::new(&self.input_shape(), data).expect("payload length checked at construction")
    }

    /// Checks every payload and label vector against the layout.
    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width * self.depth;
        for (i, s) in self.samples.iter().enumerate() {
            if s.payload.len() != n || s.labels.len() != self.num_classes {
                return Err(Error::Shape(format!(
                    "sample {i}: {} values and {} labels, expected {n} and {}",
                    s.payload.len(),
                    s.labels.len(),
                    self.num_classes
                )));
            }
            if s.labels.iter().any(|&l| l > 1) {
                return Err(Error::Contract(format!("sample {i} has a non-binary label")));
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> Result<DatasetStats> {
        DatasetStats::from_labels(self.num_classes, self.samples.iter().map(|s| s.labels.as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub samples: usize,
    pub num_classes: usize,
    pub positives: usize,
    /// Mean positives per sample.
    pub cardinality: f64,
    /// Positives per class.
    pub class_counts: Vec<usize>,
}

impl DatasetStats {
    pub fn from_labels<'a>(num_classes: usize, labels: impl Iterator<Item = &'a [u8]>) -> Result<Self> {
        let mut class_counts = vec![0usize; num_classes];
        let mut samples = 0;
        for y in labels {
            if y.len() != num_classes {
                return Err(Error::Shape(format!("{} labels for {num_classes} classes", y.len())));
            }
            samples += 1;
            for (c, &l) in y.iter().enumerate() {
                class_counts[c] += (l != 0) as usize;
            }
        }
        if samples == 0 {
            return Err(Error::Contract("statistics of an empty dataset".into()));
        }
        let positives = class_counts.iter().sum();
        Ok(DatasetStats {
            samples,
            num_classes,
            positives,
            cardinality: positives as f64 / samples as f64,
            class_counts,
        })
    }

    /// Fraction of samples carrying each class.
    pub fn class_frequency(&self) -> Vec<f64> {
        self.class_counts.iter().map(|&c| c as f64 / self.samples as f64).collect()
    }
}

/// Class signatures: `C` blobs of `BLOB·BLOB·channels` values (image) or `C`
/// vectors of `channels` values (features), each with norm `strength`.
pub fn signatures(cfg: &SyntheticConfig, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let len = match cfg.kind {
        PayloadKind::Image => BLOB * BLOB * cfg.channels,
        PayloadKind::Features => cfg.channels,
    };
    (0..cfg.num_classes)
        .map(|_| {
            let mut v: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            for x in &mut v {
                *x *= cfg.strength / norm;
            }
            v
        })
        .collect()
}

fn draw_labels(cfg: &SyntheticConfig, rng: &mut SeededRng) -> Vec<usize> {
    let c = cfg.num_classes;
    // 1 + Binomial(C-1, q) has mean exactly the target cardinality
    let extra = if c > 1 {
        let q = (cfg.cardinality - 1.0) / (c - 1) as f64;
        (0..c - 1).filter(|_| rng.gen_bool(q)).count()
    } else {
        0
    };
    let mut picked = index::sample(rng, c, 1 + extra).into_vec();
    picked.sort_unstable();
    picked
}

fn draw_sample(cfg: &SyntheticConfig, sigs: &[Vec<f64>], rng: &mut SeededRng) -> LabeledSample {
    let (h, w, ch) = (cfg.height, cfg.width, cfg.channels);
    let classes = draw_labels(cfg, rng);
    let mut x = vec![0.0f64; h * w * ch];
    for &c in &classes {
        match cfg.kind {
            PayloadKind::Image => {
                let r0 = rng.gen_range(0..=h - BLOB);
                let c0 = rng.gen_range(0..=w - BLOB);
                for dr in 0..BLOB {
                    for dc in 0..BLOB {
                        for k in 0..ch {
                            x[((r0 + dr) * w + c0 + dc) * ch + k] += sigs[c][(dr * BLOB + dc) * ch + k];
                        }
                    }
                }
            }
            PayloadKind::Features => {
                let cell = rng.gen_range(0..h * w);
                for k in 0..ch {
                    x[cell * ch + k] += sigs[c][k];
                }
            }
        }
    }
    for v in &mut x {
        *v += cfg.noise * rng.sample::<f64, _>(StandardNormal);
    }
    let mut labels = vec![0u8; cfg.num_classes];
    for &c in &classes {
        labels[c] = 1;
    }
    LabeledSample { payload: x.into_iter().map(|v| v as f32).collect(), labels }
}

/// Generates `(train, test)`. Both splits share the class signatures.
pub fn generate(cfg: &SyntheticConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut rng = init::rng(cfg.seed);
    let sigs = signatures(cfg, &mut rng);
    let mut split = |n: usize| Dataset {
        kind: cfg.kind,
        height: cfg.height,
        width: cfg.width,
        depth: cfg.channels,
        num_classes: cfg.num_classes,
        samples: (0..n).map(|_| draw_sample(cfg, &sigs, &mut rng)).collect(),
    };
    let train = split(cfg.n_train);
    let test = split(cfg.n_test);
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_sample_has_a_label() {
        let cfg = SyntheticConfig { n_train: 300, n_test: 10, ..SyntheticConfig::default() };
        let (train, test) = generate(&cfg).unwrap();
        for s in train.samples.iter().chain(&test.samples) {
            assert!(s.labels.contains(&1));
        }
        train.validate().unwrap();
    }

    #[test]
    fn same_seed_same_bits() {
        let cfg = SyntheticConfig { n_train: 20, n_test: 5, ..SyntheticConfig::default() };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SyntheticConfig { seed: 1, ..cfg };
        assert_ne!(generate(&cfg).unwrap().0, generate(&other).unwrap().0);
    }

    #[test]
    fn infeasible_cardinality() {
        for k in [0.5, 6.5, f64::NAN] {
            let cfg = SyntheticConfig { cardinality: k, ..SyntheticConfig::default() };
            assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        }
        let cfg = SyntheticConfig { num_classes: 1, cardinality: 1.0, n_train: 3, ..SyntheticConfig::default() };
        assert!(generate(&cfg).is_ok());
    }

    #[test]
    fn cardinality_matches_target() {
        let cfg = SyntheticConfig { n_train: 1000, n_test: 1, ..SyntheticConfig::default() };
        let (train, _) = generate(&cfg).unwrap();
        let st = train.stats().unwrap();
        assert!((st.cardinality - 1.5).abs() <= 0.1, "{}", st.cardinality);
    }

    #[test]
    fn hand_counted_stats() {
        let ys: [&[u8]; 2] = [&[1, 0], &[1, 1]];
        let st = DatasetStats::from_labels(2, ys.into_iter()).unwrap();
        assert_eq!(st.cardinality, 1.5);
        assert_eq!(st.class_counts, vec![2, 1]);
        assert_eq!(st.class_counts.iter().sum::<usize>(), st.positives);
        assert_eq!(st.class_frequency(), vec![1.0, 0.5]);
    }

    #[test]
    fn features_payload_shape() {
        let cfg = SyntheticConfig {
            kind: PayloadKind::Features,
            height: 2,
            width: 2,
            channels: 8,
            n_train: 4,
            n_test: 1,
            ..SyntheticConfig::default()
        };
        let (train, _) = generate(&cfg).unwrap();
        assert_eq!(train.input(0).shape(), &[4, 8]);
    }
}
