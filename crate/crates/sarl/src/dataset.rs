//! Binary dataset files.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SARL"
//!      4     4  version (u32) = 1
//!      8     4  payload kind: 0 image, 1 features
//!     12     4  sample count N
//!     16     4  class count C
//!     20     4  height H
//!     24     4  width W
//!     28     4  depth (channels or feature width)
//!     32    32  reserved, zero
//!     64     …  N·H·W·depth f32 values, sample-major, row-major within a sample
//!      …     …  N·C label bytes (0 or 1)
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use sarl_core::synthetic::{Dataset, LabeledSample, PayloadKind};

use crate::bytes::{put_f32s, put_u32, Reader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SARL";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;

/// The fixed-size header, decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub kind: PayloadKind,
    pub samples: usize,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub depth: usize,
}

impl Header {
    pub fn payload_len(&self) -> usize {
        self.height * self.width * self.depth
    }

    /// Total file length the header implies.
    pub fn file_len(&self) -> usize {
        HEADER_LEN + self.samples * (self.payload_len() * 4 + self.num_classes)
    }
}

fn kind_code(kind: PayloadKind) -> usize {
    match kind {
        PayloadKind::Image => 0,
        PayloadKind::Features => 1,
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut r = Reader::new(bytes);
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let kind = match r.u32()? {
        0 => PayloadKind::Image,
        1 => PayloadKind::Features,
        k => return Err(Error::Format(format!("unknown payload kind {k} at byte 8"))),
    };
    let mut next = || r.u32().map(|v| v as usize);
    let (samples, num_classes, height, width, depth) = (next()?, next()?, next()?, next()?, next()?);
    r.take(HEADER_LEN - r.pos())?;
    Ok(Header { kind, samples, num_classes, height, width, depth })
}

pub fn encode(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let h = Header {
        kind: ds.kind,
        samples: ds.len(),
        num_classes: ds.num_classes,
        height: ds.height,
        width: ds.width,
        depth: ds.depth,
    };
    let mut out = Vec::with_capacity(h.file_len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize)?;
    for v in [kind_code(h.kind), h.samples, h.num_classes, h.height, h.width, h.depth] {
        put_u32(&mut out, v)?;
    }
    out.resize(HEADER_LEN, 0);
    for s in &ds.samples {
        put_f32s(&mut out, s.payload.iter().copied());
    }
    for s in &ds.samples {
        out.extend_from_slice(&s.labels);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let h = parse_header(bytes)?;
    let expected = h.file_len();
    if bytes.len() < expected {
        return Err(Error::Truncated { offset: bytes.len(), expected, actual: bytes.len() });
    }
    let mut r = Reader::new(bytes);
    r.take(HEADER_LEN)?;
    let mut payloads = Vec::with_capacity(h.samples);
    for _ in 0..h.samples {
        payloads.push(r.f32s(h.payload_len())?);
    }
    let mut samples = Vec::with_capacity(h.samples);
    for payload in payloads {
        let at = r.pos();
        let labels = r.take(h.num_classes)?.to_vec();
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(Error::Format(format!("label byte {} at offset {} is not 0 or 1", labels[i], at + i)));
        }
        samples.push(LabeledSample { payload, labels });
    }
    r.expect_end()?;
    Ok(Dataset {
        kind: h.kind,
        height: h.height,
        width: h.width,
        depth: h.depth,
        num_classes: h.num_classes,
        samples,
    })
}

pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode(ds)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset> {
    decode(&fs::read(path)?)
}
