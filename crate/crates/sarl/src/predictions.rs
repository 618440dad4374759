//! Prediction files.
//!
//! First line `N C`; then one line per sample with `C` sigmoid scores
//! followed by `C` binary labels, space separated. Scores use Rust's
//! shortest round-trip formatting, so reading a file back gives the exact
//! values that were written.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sarl_core::metrics::PredictionSet;

use crate::error::{Error, Result};

pub fn to_text(preds: &PredictionSet) -> String {
    let (n, c) = (preds.num_samples(), preds.num_classes());
    let mut s = format!("{n} {c}\n");
    for i in 0..n {
        let scores = &preds.scores()[i * c..(i + 1) * c];
        let labels = &preds.labels()[i * c..(i + 1) * c];
        let fields: Vec<String> =
            scores.iter().map(|v| v.to_string()).chain(labels.iter().map(|l| l.to_string())).collect();
        let _ = writeln!(s, "{}", fields.join(" "));
    }
    s
}

pub fn parse(text: &str) -> Result<PredictionSet> {
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, msg: String| Error::Format(format!("prediction file line {}: {msg}", line + 1));
    let (_, head) = lines.next().ok_or_else(|| Error::Format("empty prediction file".into()))?;
    let dims: Vec<usize> = head
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(0, format!("bad header {head:?}"))))
        .collect::<Result<_>>()?;
    let [n, c] = dims[..] else {
        return Err(bad(0, format!("header must be `N C`, got {head:?}")));
    };
    let mut scores = Vec::with_capacity(n * c);
    let mut labels = Vec::with_capacity(n * c);
    let mut rows = 0;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 * c {
            return Err(bad(i, format!("{} fields, expected {}", toks.len(), 2 * c)));
        }
        for t in &toks[..c] {
            scores.push(t.parse::<f64>().map_err(|_| bad(i, format!("bad score {t:?}")))?);
        }
        for t in &toks[c..] {
            labels.push(match *t {
                "0" => 0,
                "1" => 1,
                _ => return Err(bad(i, format!("bad label {t:?}"))),
            });
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Format(format!("header announces {n} samples, file has {rows}")));
    }
    Ok(PredictionSet::new(n, c, scores, labels)?)
}

pub fn save(preds: &PredictionSet, path: &Path) -> Result<()> {
    fs::write(path, to_text(preds))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<PredictionSet> {
    parse(&fs::read_to_string(path)?)
}
