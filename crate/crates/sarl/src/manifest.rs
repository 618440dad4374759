//! Dataset manifests: which splits exist and how large they are.
//!
//! ```text
//! name=voc2007
//! classes=20
//! splits=trainval,test
//! trainval.samples=5011
//! test.samples=4952
//! cardinality=1.5
//! ```
//!
//! A split may also name its file (`<split>.file`) and its positive label
//! count (`<split>.positives`). Cardinality is taken from `cardinality` when
//! given, otherwise from the positive counts.

use std::fs;
use std::path::Path;

use sarl_core::synthetic::DatasetStats;

use crate::error::{Error, Result};
use crate::kv::KeyValues;

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub name: String,
    pub samples: usize,
    pub file: Option<String>,
    pub positives: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub num_classes: usize,
    pub splits: Vec<Split>,
    pub cardinality: Option<f64>,
}

/// Table-style summary of a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestStats {
    pub name: String,
    pub num_classes: usize,
    pub split_counts: Vec<(String, usize)>,
    pub cardinality: f64,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let names: Vec<&str> = kv.require("splits")?.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if names.is_empty() {
            return Err(Error::Config("manifest lists no splits".into()));
        }
        let mut splits = Vec::new();
        for n in names {
            splits.push(Split {
                name: n.to_string(),
                samples: kv.require_as(&format!("{n}.samples"))?,
                file: kv.get(&format!("{n}.file")).map(str::to_string),
                positives: kv.parse_as(&format!("{n}.positives"))?,
            });
        }
        Ok(Manifest {
            name: kv.get("name").unwrap_or("unnamed").to_string(),
            num_classes: kv.require_as("classes")?,
            splits,
            cardinality: kv.parse_as("cardinality")?,
        })
    }

    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::new();
        kv.set("name", &self.name);
        kv.set("classes", self.num_classes);
        kv.set("splits", self.splits.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(","));
        for s in &self.splits {
            kv.set(&format!("{}.samples", s.name), s.samples);
            if let Some(f) = &s.file {
                kv.set(&format!("{}.file", s.name), f);
            }
            if let Some(p) = s.positives {
                kv.set(&format!("{}.positives", s.name), p);
            }
        }
        if let Some(c) = self.cardinality {
            kv.set("cardinality", c);
        }
        kv.to_text()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Manifest entry for a split whose statistics are known.
    pub fn split_from_stats(name: &str, file: Option<&str>, st: &DatasetStats) -> Split {
        Split {
            name: name.to_string(),
            samples: st.samples,
            file: file.map(str::to_string),
            positives: Some(st.positives),
        }
    }

    pub fn split(&self, name: &str) -> Option<&Split> {
        self.splits.iter().find(|s| s.name == name)
    }

    pub fn stats(&self) -> Result<ManifestStats> {
        let cardinality = match self.cardinality {
            Some(c) => c,
            None => {
                let mut pos = 0;
                let mut n = 0;
                for s in &self.splits {
                    pos += s.positives.ok_or_else(|| {
                        Error::Config(format!("split {:?} has no positive count and no cardinality is given", s.name))
                    })?;
                    n += s.samples;
                }
                if n == 0 {
                    return Err(Error::Config("manifest has no samples".into()));
                }
                pos as f64 / n as f64
            }
        };
        Ok(ManifestStats {
            name: self.name.clone(),
            num_classes: self.num_classes,
            split_counts: self.splits.iter().map(|s| (s.name.clone(), s.samples)).collect(),
            cardinality,
        })
    }
}

impl ManifestStats {
    pub fn table(&self) -> String {
        let mut s = format!("{:<12}", "dataset");
        for (n, _) in &self.split_counts {
            s += &format!(" {n:>10}");
        }
        s += &format!(" {:>8} {:>11}\n{:<12}", "classes", "cardinality", self.name);
        for (_, c) in &self.split_counts {
            s += &format!(" {c:>10}");
        }
        s += &format!(" {:>8} {:>11.2}\n", self.num_classes, self.cardinality);
        s
    }
}
