//! Training configuration: presets, `key=value` files and overrides.

use std::fs;
use std::path::Path;

use sarl_core::losses::{AslConfig, LossWeights};
use sarl_core::model::{Ablation, ModelConfig};
use sarl_core::optim::AdamWConfig;
use sarl_core::representation::{EncoderConfig, PoolMode};
use sarl_core::synthetic::{Dataset, PayloadKind};

use crate::checkpoint::{parse_pool, pool_name};
use crate::error::{Error, Result};
use crate::kv::{parse_bool, KeyValues};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub preset: String,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub clip: f64,
    pub weight_decay: f64,
    pub pooling: PoolMode,
    pub n_heads: usize,
    pub d_v: usize,
    pub d_t: usize,
    pub d_1: usize,
    pub d_2: usize,
    pub ema: bool,
    pub ema_decay: f64,
    pub seed: u64,
    pub disable_self_attn: bool,
    /// Drops the transport term and feeds `F` straight to the classifier.
    pub disable_ot: bool,
    pub disable_gsp_fusion: bool,
    pub threshold: f64,
    pub top_k: usize,
}

/// Every key a config file may set, in echo order.
pub const KEYS: &[&str] = &[
    "preset",
    "lr",
    "batch_size",
    "epochs",
    "lambda1",
    "lambda2",
    "gamma_pos",
    "gamma_neg",
    "clip",
    "weight_decay",
    "pooling",
    "n_heads",
    "d_v",
    "d_t",
    "d_1",
    "d_2",
    "ema",
    "ema_decay",
    "seed",
    "disable_self_attn",
    "disable_ot",
    "disable_gsp_fusion",
    "threshold",
    "top_k",
];

pub const PRESETS: &[&str] = &["synthetic", "voc", "coco"];

impl TrainConfig {
    /// Desk-scale defaults for the synthetic blob task.
    pub fn synthetic() -> Self {
        TrainConfig {
            preset: "synthetic".into(),
            lr: 1e-2,
            batch_size: 32,
            epochs: 50,
            lambda1: 0.04,
            lambda2: 0.5,
            gamma_pos: 0.0,
            gamma_neg: 2.0,
            clip: 0.05,
            weight_decay: 1e-4,
            pooling: PoolMode::Avg,
            n_heads: 8,
            d_v: 32,
            d_t: 8,
            d_1: 8,
            d_2: 8,
            ema: true,
            ema_decay: 0.99,
            seed: 0,
            disable_self_attn: false,
            disable_ot: false,
            disable_gsp_fusion: false,
            threshold: 0.5,
            top_k: 3,
        }
    }

    /// Optimization settings published for the VOC 2007 benchmark.
    pub fn voc() -> Self {
        TrainConfig {
            preset: "voc".into(),
            lr: 9e-5,
            batch_size: 64,
            lambda1: 0.04,
            lambda2: 0.5,
            ema_decay: 0.9997,
            n_heads: 8,
            d_v: 64,
            d_t: 32,
            d_1: 32,
            d_2: 32,
            ..Self::synthetic()
        }
    }

    /// Optimization settings published for MS-COCO.
    pub fn coco() -> Self {
        TrainConfig { preset: "coco".into(), lr: 5e-5, batch_size: 52, lambda1: 0.2, ..Self::voc() }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "synthetic" => Ok(Self::synthetic()),
            "voc" => Ok(Self::voc()),
            "coco" => Ok(Self::coco()),
            _ => Err(Error::Config(format!("unknown preset {name:?}, expected one of {PRESETS:?}"))),
        }
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key:?}")))
        }
        match key {
            "preset" => *self = Self { preset: v.to_string(), ..Self::preset(v)? },
            "lr" => self.lr = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "lambda1" => self.lambda1 = num(key, v)?,
            "lambda2" => self.lambda2 = num(key, v)?,
            "gamma_pos" => self.gamma_pos = num(key, v)?,
            "gamma_neg" => self.gamma_neg = num(key, v)?,
            "clip" => self.clip = num(key, v)?,
            "weight_decay" => self.weight_decay = num(key, v)?,
            "pooling" => self.pooling = parse_pool(v)?,
            "n_heads" => self.n_heads = num(key, v)?,
            "d_v" => self.d_v = num(key, v)?,
            "d_t" => self.d_t = num(key, v)?,
            "d_1" => self.d_1 = num(key, v)?,
            "d_2" => self.d_2 = num(key, v)?,
            "ema" => self.ema = parse_bool(key, v)?,
            "ema_decay" => self.ema_decay = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "disable_self_attn" => self.disable_self_attn = parse_bool(key, v)?,
            "disable_ot" => self.disable_ot = parse_bool(key, v)?,
            "disable_gsp_fusion" => self.disable_gsp_fusion = parse_bool(key, v)?,
            "threshold" => self.threshold = num(key, v)?,
            "top_k" => self.top_k = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Builds a config from file contents, then applies `overrides` in order.
    /// A `preset` key (in either place) is applied before anything else.
    pub fn from_sources(file: Option<&KeyValues>, overrides: &KeyValues) -> Result<Self> {
        let preset = overrides.get("preset").or(file.and_then(|f| f.get("preset"))).unwrap_or("synthetic");
        let mut cfg = Self::preset(preset)?;
        for kv in file.into_iter().chain([overrides]) {
            for k in kv.keys().filter(|&k| k != "preset") {
                cfg.set(k, kv.get(k).unwrap_or_default())?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &KeyValues) -> Result<Self> {
        let kv = KeyValues::parse(&fs::read_to_string(path)?)?;
        Self::from_sources(Some(&kv), overrides)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("preset", &self.preset);
        kv.set("lr", self.lr);
        kv.set("batch_size", self.batch_size);
        kv.set("epochs", self.epochs);
        kv.set("lambda1", self.lambda1);
        kv.set("lambda2", self.lambda2);
        kv.set("gamma_pos", self.gamma_pos);
        kv.set("gamma_neg", self.gamma_neg);
        kv.set("clip", self.clip);
        kv.set("weight_decay", self.weight_decay);
        kv.set("pooling", pool_name(self.pooling));
        kv.set("n_heads", self.n_heads);
        kv.set("d_v", self.d_v);
        kv.set("d_t", self.d_t);
        kv.set("d_1", self.d_1);
        kv.set("d_2", self.d_2);
        kv.set("ema", self.ema);
        kv.set("ema_decay", self.ema_decay);
        kv.set("seed", self.seed);
        kv.set("disable_self_attn", self.disable_self_attn);
        kv.set("disable_ot", self.disable_ot);
        kv.set("disable_gsp_fusion", self.disable_gsp_fusion);
        kv.set("threshold", self.threshold);
        kv.set("top_k", self.top_k);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr > 0.0 && self.lr.is_finite()),
            ("batch_size", self.batch_size > 0),
            ("n_heads", self.n_heads > 0),
            ("d_v", self.d_v > 0),
            ("d_t", self.d_t > 0),
            ("d_1", self.d_1 > 0),
            ("d_2", self.d_2 > 0),
            ("top_k", self.top_k > 0),
            ("weight_decay", self.weight_decay >= 0.0),
            ("ema_decay", (0.0..=1.0).contains(&self.ema_decay)),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, ok)| !ok) {
            return Err(Error::Config(format!("{k} out of range")));
        }
        self.asl().validate()?;
        self.loss_weights().validate()?;
        Ok(())
    }

    pub fn asl(&self) -> AslConfig {
        AslConfig { gamma_pos: self.gamma_pos, gamma_neg: self.gamma_neg, clip: self.clip }
    }

    /// `λ2` is forced to zero when transport is disabled.
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda1: self.lambda1, lambda2: if self.disable_ot { 0.0 } else { self.lambda2 } }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            self_attention: !self.disable_self_attn,
            transport: !self.disable_ot,
            gsp_fusion: !self.disable_gsp_fusion,
        }
    }

    /// Model dimensions for a dataset layout.
    pub fn model_config(&self, ds: &Dataset) -> Result<ModelConfig> {
        let encoder = match ds.kind {
            PayloadKind::Image => EncoderConfig::tiny_conv(ds.height, ds.width, ds.depth),
            PayloadKind::Features => {
                if ds.depth != self.d_v {
                    return Err(Error::Config(format!(
                        "precomputed features are {} wide but d_v is {}",
                        ds.depth, self.d_v
                    )));
                }
                EncoderConfig::precomputed(ds.height, ds.width, ds.depth)
            }
        };
        let cfg = ModelConfig {
            num_classes: ds.num_classes,
            encoder,
            d_v: self.d_v,
            d_t: self.d_t,
            n_heads: self.n_heads,
            d_1: self.d_1,
            d_2: self.d_2,
            pooling: self.pooling,
            ablation: self.ablation(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_published_values() {
        let v = TrainConfig::voc();
        assert_eq!((v.lr, v.batch_size, v.lambda1, v.lambda2, v.ema_decay), (9e-5, 64, 0.04, 0.5, 0.9997));
        let c = TrainConfig::coco();
        assert_eq!((c.lr, c.batch_size, c.lambda1, c.lambda2), (5e-5, 52, 0.2, 0.5));
        assert_eq!((v.gamma_pos, v.gamma_neg, v.n_heads, v.pooling), (0.0, 2.0, 8, PoolMode::Avg));
    }

    #[test]
    fn overrides_beat_file() {
        let file = KeyValues::parse("preset=voc\nlr=0.5\nepochs=3").unwrap();
        let mut over = KeyValues::new();
        over.set("lr", "0.25");
        let cfg = TrainConfig::from_sources(Some(&file), &over).unwrap();
        assert_eq!((cfg.lr, cfg.epochs, cfg.batch_size), (0.25, 3, 64));
    }

    #[test]
    fn echo_round_trips() {
        let cfg = TrainConfig { disable_ot: true, seed: 7, ..TrainConfig::coco() };
        let back = TrainConfig::from_sources(Some(&cfg.to_kv()), &KeyValues::new()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.loss_weights().lambda2, 0.0);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let file = KeyValues::parse("learning_rate=1").unwrap();
        assert!(TrainConfig::from_sources(Some(&file), &KeyValues::new()).is_err());
    }
}
