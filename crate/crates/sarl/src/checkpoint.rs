//! Checkpoints: model hyperparameters plus named `f32` tensors.
//!
//! ```text
//! magic "SARLCKPT", version u32 = 1
//! manifest length u32, manifest (key=value UTF-8 text)
//! tensor count u32
//! per tensor: name length u32, name, rank u32, dims u32 × rank, f32 values
//! ```
//! Little-endian throughout. Tensors appear in the model's fixed parameter
//! order and are matched by name on load.

use std::fs;
use std::path::Path;

use sarl_core::model::{Ablation, ModelBundle, ModelConfig, ModelParams};
use sarl_core::representation::{EncoderConfig, EncoderMode, PoolMode};
use sarl_core::Tensor;

use crate::bytes::{put_f32s, put_u32, Reader};
use crate::error::{Error, Result};
use crate::kv::{parse_bool, KeyValues};

pub const MAGIC: &[u8; 8] = b"SARLCKPT";
pub const VERSION: u32 = 1;

pub fn pool_name(p: PoolMode) -> &'static str {
    match p {
        PoolMode::Avg => "avg",
        PoolMode::Max => "max",
    }
}

pub fn parse_pool(v: &str) -> Result<PoolMode> {
    match v {
        "avg" | "gap" => Ok(PoolMode::Avg),
        "max" | "gmp" => Ok(PoolMode::Max),
        _ => Err(Error::Config(format!("unknown pooling {v:?}, expected avg or max"))),
    }
}

pub fn model_to_kv(cfg: &ModelConfig, kv: &mut KeyValues) {
    let e = &cfg.encoder;
    kv.set("classes", cfg.num_classes);
    kv.set(
        "encoder",
        match e.mode {
            EncoderMode::TinyConv => "tiny_conv",
            EncoderMode::Precomputed => "precomputed",
        },
    );
    kv.set("height", e.height);
    kv.set("width", e.width);
    kv.set("channels", e.in_channels);
    kv.set("blocks", e.blocks);
    kv.set("d_v", cfg.d_v);
    kv.set("d_t", cfg.d_t);
    kv.set("n_heads", cfg.n_heads);
    kv.set("d_1", cfg.d_1);
    kv.set("d_2", cfg.d_2);
    kv.set("pooling", pool_name(cfg.pooling));
    kv.set("self_attention", cfg.ablation.self_attention);
    kv.set("transport", cfg.ablation.transport);
    kv.set("gsp_fusion", cfg.ablation.gsp_fusion);
}

pub fn model_from_kv(kv: &KeyValues) -> Result<ModelConfig> {
    let mode = match kv.require("encoder")? {
        "tiny_conv" => EncoderMode::TinyConv,
        "precomputed" => EncoderMode::Precomputed,
        m => return Err(Error::Config(format!("unknown encoder {m:?}"))),
    };
    let flag = |k: &str| parse_bool(k, kv.require(k)?);
    let cfg = ModelConfig {
        num_classes: kv.require_as("classes")?,
        encoder: EncoderConfig {
            mode,
            in_channels: kv.require_as("channels")?,
            height: kv.require_as("height")?,
            width: kv.require_as("width")?,
            blocks: kv.require_as("blocks")?,
        },
        d_v: kv.require_as("d_v")?,
        d_t: kv.require_as("d_t")?,
        n_heads: kv.require_as("n_heads")?,
        d_1: kv.require_as("d_1")?,
        d_2: kv.require_as("d_2")?,
        pooling: parse_pool(kv.require("pooling")?)?,
        ablation: Ablation {
            self_attention: flag("self_attention")?,
            transport: flag("transport")?,
            gsp_fusion: flag("gsp_fusion")?,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

/// A loaded checkpoint: the model and every manifest entry (including any
/// extra keys the writer stored).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub bundle: ModelBundle,
    pub manifest: KeyValues,
}

/// Serializes `bundle`. Values are rounded to `f32`. `extra` pairs are stored
/// after the model keys.
pub fn encode(bundle: &ModelBundle, extra: &KeyValues) -> Result<Vec<u8>> {
    let mut kv = KeyValues::new();
    model_to_kv(&bundle.config, &mut kv);
    for k in extra.keys() {
        if kv.get(k).is_none() {
            kv.set(k, extra.get(k).unwrap_or_default());
        }
    }
    let text = kv.to_text();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    let names = bundle.params.names();
    put_u32(&mut out, names.len())?;
    for (name, t) in names.iter().zip(bundle.params.slots()) {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        put_f32s(&mut out, t.data().iter().map(|&v| v as f32));
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let len = r.u32()? as usize;
    let at = r.pos();
    let text = std::str::from_utf8(r.take(len)?)
        .map_err(|e| Error::Format(format!("manifest at byte {at} is not UTF-8: {e}")))?;
    let manifest = KeyValues::parse(text)?;
    let config = model_from_kv(&manifest)?;

    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let at = r.pos();
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|e| Error::Format(format!("tensor name at byte {at} is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let len: usize = dims.iter().product();
        let data = r.f32s(len)?.into_iter().map(f64::from).collect();
        tensors.push((name, Tensor::new(&dims, data)?));
    }
    r.expect_end()?;

    let shapes = ModelParams::shapes(&config);
    let expected = shapes.names();
    let found: Vec<&str> = tensors.iter().map(|(n, _)| n.as_str()).collect();
    if expected.iter().map(String::as_str).ne(found.iter().copied()) {
        return Err(Error::Format(format!("tensor names {found:?} do not match the model layout {expected:?}")));
    }
    let mut it = tensors.into_iter().map(|(_, t)| t);
    let params = shapes.map(&mut |_, _| it.next().expect("count checked above"));
    let bundle = ModelBundle::from_parts(config, params)?;
    Ok(Checkpoint { bundle, manifest })
}

pub fn save(bundle: &ModelBundle, extra: &KeyValues, path: &Path) -> Result<()> {
    fs::write(path, encode(bundle, extra)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}
