//! Image features, global feature, and semantic-related class features.
//!
//! The encoder turns an input into a `P × d_v` patch feature matrix. A single
//! multi-head self-attention layer mixes patches, global pooling summarizes
//! them, and the pooled vector is fused with every label embedding to give
//! one `d_v`-dimensional feature per class.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::param_group;
use crate::tape::{ConvGeometry, Tape, Var};
use crate::tensor::Tensor;

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PADDING: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    /// Strided 3×3 conv blocks over an `H × W × channels` image.
    TinyConv,
    /// Input already is the `P × d_v` feature grid.
    Precomputed,
}

/// Shape of the encoder input and how it is turned into patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub mode: EncoderMode,
    /// Image channels (tiny-conv) or feature width (precomputed).
    pub in_channels: usize,
    /// Input height: image rows, or grid rows when precomputed.
    pub height: usize,
    /// Input width: image columns, or grid columns when precomputed.
    pub width: usize,
    /// Number of stride-2 conv blocks (tiny-conv only).
    pub blocks: usize,
}

impl EncoderConfig {
    pub fn tiny_conv(height: usize, width: usize, in_channels: usize) -> Self {
        EncoderConfig { mode: EncoderMode::TinyConv, in_channels, height, width, blocks: 2 }
    }

    pub fn precomputed(height: usize, width: usize, d_v: usize) -> Self {
        EncoderConfig { mode: EncoderMode::Precomputed, in_channels: d_v, height, width, blocks: 0 }
    }

    pub fn validate(&self, d_v: usize) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.in_channels == 0 || d_v == 0 {
            return Err(Error::Config(format!("encoder dims must be positive: {self:?}, d_v={d_v}")));
        }
        match self.mode {
            EncoderMode::Precomputed if self.in_channels != d_v => Err(Error::Config(format!(
                "precomputed features have width {} but d_v is {d_v}",
                self.in_channels
            ))),
            EncoderMode::TinyConv if self.blocks == 0 => {
                Err(Error::Config("tiny-conv encoder needs at least one block".into()))
            }
            _ => Ok(()),
        }
    }

    /// Patch grid `(H, W)` after encoding.
    pub fn grid(&self) -> (usize, usize) {
        match self.mode {
            EncoderMode::Precomputed => (self.height, self.width),
            EncoderMode::TinyConv => {
                let (mut h, mut w) = (self.height, self.width);
                for _ in 0..self.blocks {
                    h = (h + 2 * PADDING - KERNEL) / STRIDE + 1;
                    w = (w + 2 * PADDING - KERNEL) / STRIDE + 1;
                }
                (h, w)
            }
        }
    }

    pub fn num_patches(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    /// Shape the raw input tensor must have.
    pub fn input_shape(&self) -> Vec<usize> {
        match self.mode {
            EncoderMode::Precomputed => alloc::vec![self.height * self.width, self.in_channels],
            EncoderMode::TinyConv => alloc::vec![self.height, self.width, self.in_channels],
        }
    }

    /// `(in, out)` channels of each conv block.
    pub fn block_channels(&self, d_v: usize) -> Vec<(usize, usize)> {
        match self.mode {
            EncoderMode::Precomputed => Vec::new(),
            EncoderMode::TinyConv => (0..self.blocks)
                .map(|i| (if i == 0 { self.in_channels } else { d_v }, d_v))
                .collect(),
        }
    }

    fn geometry(&self, block: usize, channels: usize) -> ConvGeometry {
        let (mut h, mut w) = (self.height, self.width);
        for _ in 0..block {
            h = (h + 2 * PADDING - KERNEL) / STRIDE + 1;
            w = (w + 2 * PADDING - KERNEL) / STRIDE + 1;
        }
        ConvGeometry { height: h, width: w, channels, kernel: KERNEL, stride: STRIDE, padding: PADDING }
    }
}

/// Patch features with the grid they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub features: Tensor,
    pub height: usize,
    pub width: usize,
}

impl FeatureMap {
    pub fn new(features: Tensor, height: usize, width: usize) -> Result<Self> {
        let (p, _) = features.dims2()?;
        if p != height * width {
            return Err(Error::Shape(format!("{p} patches for a {height}x{width} grid")));
        }
        Ok(FeatureMap { features, height, width })
    }

    pub fn num_patches(&self) -> usize {
        self.height * self.width
    }
}

param_group! {
    /// One conv block: `weight` is `(3·3·in) × out`, applied to im2col patches.
    ConvBlock { weight, bias }
}

param_group! {
    /// Query/key/value projections, each `d_v × d_v`. Head `h` uses columns
    /// `h·d .. (h+1)·d` of every matrix.
    SelfAttentionParams { w_q, w_k, w_v }
}

param_group! {
    /// `Linear(concat(F^G, l_c))`: `weight` is `(d_v + d_t) × d_v`.
    FusionParams { weight, bias }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Runs the encoder. Returns the `P × d_v` feature matrix.
pub fn encode(tape: &mut Tape, input: Var, cfg: &EncoderConfig, blocks: &[ConvBlock<Var>]) -> Result<Var> {
    let expected = cfg.input_shape();
    if tape.shape(input) != expected.as_slice() {
        return Err(Error::Config(format!(
            "encoder input has shape {:?}, expected {:?}",
            tape.shape(input),
            expected
        )));
    }
    match cfg.mode {
        EncoderMode::Precomputed => Ok(input),
        EncoderMode::TinyConv => {
            if blocks.len() != cfg.blocks {
                return Err(Error::Config(format!(
                    "{} conv blocks configured, {} given",
                    cfg.blocks,
                    blocks.len()
                )));
            }
            let mut x = input;
            let mut channels = cfg.in_channels;
            for (i, block) in blocks.iter().enumerate() {
                let geom = cfg.geometry(i, channels);
                let cols = tape.im2col(x, geom)?;
                let y = affine(tape, cols, block.weight, block.bias)?;
                channels = tape.shape(block.weight)[1];
                // the last block stays linear so features keep their sign
                let y = if i + 1 < blocks.len() { tape.relu(y) } else { y };
                x = if i + 1 < blocks.len() {
                    tape.reshape(y, &[geom.out_height(), geom.out_width(), channels])?
                } else {
                    y
                };
            }
            Ok(x)
        }
    }
}

/// `x · weight + bias`, bias broadcast over rows.
pub fn affine(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let xw = tape.matmul(x, weight)?;
    let rows = tape.shape(xw)[0];
    if tape.shape(bias) != [tape.shape(xw)[1]] {
        return Err(Error::Shape(format!(
            "bias {:?} for output {:?}",
            tape.shape(bias),
            tape.shape(xw)
        )));
    }
    let b = tape.broadcast_rows(bias, rows)?;
    tape.add(xw, b)
}

/// Multi-head scaled dot-product self-attention over patch rows, heads
/// concatenated, no output projection.
pub fn self_attention(tape: &mut Tape, f: Var, p: &SelfAttentionParams<Var>, n_heads: usize) -> Result<Var> {
    let (_, d_v) = tape.value(f).dims2()?;
    for w in [p.w_q, p.w_k, p.w_v] {
        if tape.shape(w) != [d_v, d_v] {
            return Err(Error::Shape(format!("projection {:?} for d_v={d_v}", tape.shape(w))));
        }
    }
    if n_heads == 0 || d_v % n_heads != 0 {
        return Err(Error::Config(format!("d_v={d_v} not divisible into {n_heads} heads")));
    }
    let d = d_v / n_heads;
    let q = tape.matmul(f, p.w_q)?;
    let k = tape.matmul(f, p.w_k)?;
    let v = tape.matmul(f, p.w_v)?;
    let scale = 1.0 / libm::sqrt(d as f64);
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (lo, hi) = (h * d, (h + 1) * d);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let kt = tape.transpose(kh)?;
        let logits = tape.matmul(qh, kt)?;
        let logits = tape.scale(logits, scale);
        let attn = tape.softmax(logits, 1)?;
        heads.push(tape.matmul(attn, vh)?);
    }
    if heads.len() == 1 {
        Ok(heads[0])
    } else {
        tape.concat(&heads, 1)
    }
}

/// Column-wise mean or max over patches.
pub fn global_spatial_pool(tape: &mut Tape, f: Var, mode: PoolMode) -> Result<Var> {
    let (p, _) = tape.value(f).dims2()?;
    if p == 0 {
        return Err(Error::Shape("pooling over zero patches".into()));
    }
    match mode {
        PoolMode::Avg => tape.mean_axis(f, 0),
        PoolMode::Max => tape.max_axis(f, 0),
    }
}

/// Row `c` of the result is `Linear(concat(f_g, l_c))`.
pub fn fuse_semantic(tape: &mut Tape, f_g: Var, labels: Var, p: &FusionParams<Var>) -> Result<Var> {
    let (c, d_t) = tape.value(labels).dims2()?;
    let d_v = tape.value(f_g).len();
    let (rows, _) = tape.value(p.weight).dims2()?;
    if tape.shape(f_g).len() != 1 || rows != d_v + d_t {
        return Err(Error::Shape(format!(
            "fusion weight {:?} for d_v={d_v}, d_t={d_t}",
            tape.shape(p.weight)
        )));
    }
    let g = tape.broadcast_rows(f_g, c)?;
    let joined = tape.concat(&[g, labels], 1)?;
    affine(tape, joined, p.weight, p.bias)
}
