//! Multi-label evaluation: per-class AP, mAP, and the CP/CR/CF1/OP/OR/OF1
//! family under a score threshold or a forced top-k.
//!
//! Rankings sort by descending score; equal scores keep ascending index
//! order, so results are deterministic.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::tensor::top_k_indices;

/// Scores and binary labels for `n` samples over `c` classes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    n: usize,
    c: usize,
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl PredictionSet {
    pub fn new(n: usize, c: usize, scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != n * c || labels.len() != n * c {
            return Err(Error::Shape(format!(
                "{} scores and {} labels for {n}x{c}",
                scores.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Contract("labels must be 0 or 1".into()));
        }
        Ok(PredictionSet { n, c, scores, labels })
    }

    pub fn num_samples(&self) -> usize {
        self.n
    }

    pub fn num_classes(&self) -> usize {
        self.c
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn class_scores(&self, class: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.scores[i * self.c + class]).collect()
    }

    pub fn class_labels(&self, class: usize) -> Vec<u8> {
        (0..self.n).map(|i| self.labels[i * self.c + class]).collect()
    }
}

/// Mean of precision@k over the ranks holding a positive.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("average precision with no positive labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanAp {
    pub map: f64,
    /// AP per class; `None` for classes with no positive sample.
    pub per_class: Vec<Option<f64>>,
}

impl MeanAp {
    pub fn skipped_classes(&self) -> Vec<usize> {
        self.per_class.iter().enumerate().filter(|(_, a)| a.is_none()).map(|(i, _)| i).collect()
    }
}

/// Mean AP over classes that have at least one positive.
pub fn mean_ap(preds: &PredictionSet) -> Result<MeanAp> {
    let mut per_class = Vec::with_capacity(preds.c);
    let (mut sum, mut valid) = (0.0, 0usize);
    for class in 0..preds.c {
        let labels = preds.class_labels(class);
        if labels.contains(&1) {
            let ap = average_precision(&preds.class_scores(class), &labels)?;
            sum += ap;
            valid += 1;
            per_class.push(Some(ap));
        } else {
            per_class.push(None);
        }
    }
    if valid == 0 {
        return Err(Error::UndefinedMetric("no class has a positive label".into()));
    }
    Ok(MeanAp { map: sum / valid as f64, per_class })
}

/// How binary predictions are derived from scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictionRule {
    /// Predict a class when its score is at least the threshold.
    Threshold(f64),
    /// Predict exactly the `k` highest-scoring classes of each sample.
    TopK(usize),
}

/// Per-class and overall precision, recall and F1.
#[derive(Debug, Clone, PartialEq)]
pub struct PrfMetrics {
    pub rule: PredictionRule,
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub op: f64,
    pub or: f64,
    pub of1: f64,
    /// Classes never predicted; their precision counted as 0.
    pub unpredicted_classes: Vec<usize>,
    /// Per-class `(correct, predicted, ground truth)` counts.
    pub counts: Vec<(usize, usize, usize)>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Binary predictions under `rule`, row-major like the scores.
pub fn predictions(preds: &PredictionSet, rule: PredictionRule) -> Result<Vec<u8>> {
    let (n, c) = (preds.n, preds.c);
    let mut out = vec![0u8; n * c];
    match rule {
        PredictionRule::Threshold(t) => {
            for (o, &s) in out.iter_mut().zip(&preds.scores) {
                *o = u8::from(s >= t);
            }
        }
        PredictionRule::TopK(k) => {
            if k > c {
                return Err(Error::Config(format!("top-{k} with only {c} classes")));
            }
            for i in 0..n {
                for j in top_k_indices(&preds.scores[i * c..(i + 1) * c], k) {
                    out[i * c + j] = 1;
                }
            }
        }
    }
    Ok(out)
}

/// Computes the CP/CR/CF1/OP/OR/OF1 family from per-class counts.
pub fn prf_from_counts(rule: PredictionRule, counts: Vec<(usize, usize, usize)>) -> PrfMetrics {
    let c = counts.len().max(1) as f64;
    let cp = counts.iter().map(|&(nc, np, _)| ratio(nc, np)).sum::<f64>() / c;
    let cr = counts.iter().map(|&(nc, _, ng)| ratio(nc, ng)).sum::<f64>() / c;
    let (sc, sp, sg) = counts.iter().fold((0, 0, 0), |(a, b, d), &(x, y, z)| (a + x, b + y, d + z));
    let op = ratio(sc, sp);
    let or = ratio(sc, sg);
    let unpredicted_classes = counts.iter().enumerate().filter(|(_, c)| c.1 == 0).map(|(i, _)| i).collect();
    PrfMetrics { rule, cp, cr, cf1: harmonic(cp, cr), op, or, of1: harmonic(op, or), unpredicted_classes, counts }
}

pub fn prf_metrics(preds: &PredictionSet, rule: PredictionRule) -> Result<PrfMetrics> {
    let predicted = predictions(preds, rule)?;
    let (n, c) = (preds.n, preds.c);
    let mut counts = vec![(0usize, 0usize, 0usize); c];
    for i in 0..n {
        for (j, slot) in counts.iter_mut().enumerate() {
            let (p, g) = (predicted[i * c + j] == 1, preds.labels[i * c + j] == 1);
            slot.0 += usize::from(p && g);
            slot.1 += usize::from(p);
            slot.2 += usize::from(g);
        }
    }
    Ok(prf_from_counts(rule, counts))
}

/// Everything reported for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub map: MeanAp,
    pub all: PrfMetrics,
    pub top_k: PrfMetrics,
    pub threshold: f64,
    pub k: usize,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 3;

/// mAP plus the threshold and top-k tables. `k` is capped at the class count.
pub fn evaluate(preds: &PredictionSet, threshold: f64, k: usize) -> Result<MetricReport> {
    let k = k.min(preds.c);
    Ok(MetricReport {
        map: mean_ap(preds)?,
        all: prf_metrics(preds, PredictionRule::Threshold(threshold))?,
        top_k: prf_metrics(preds, PredictionRule::TopK(k))?,
        threshold,
        k,
    })
}

impl MetricReport {
    /// Aligned text table, values in percent.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let pct = |v: f64| 100.0 * v;
        let _ = writeln!(s, "mAP {:6.2}", pct(self.map.map));
        let _ = writeln!(
            s,
            "{:<10} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
            "mode", "CP", "CR", "CF1", "OP", "OR", "OF1"
        );
        let all_label = format!("all@{}", self.threshold);
        let top_label = format!("top-{}", self.k);
        for (label, m) in [(all_label, &self.all), (top_label, &self.top_k)] {
            let _ = writeln!(
                s,
                "{:<10} {:>6.2} {:>6.2} {:>6.2} {:>6.2} {:>6.2} {:>6.2}",
                label,
                pct(m.cp),
                pct(m.cr),
                pct(m.cf1),
                pct(m.op),
                pct(m.or),
                pct(m.of1)
            );
        }
        let _ = write!(s, "AP");
        for (i, ap) in self.map.per_class.iter().enumerate() {
            match ap {
                Some(v) => {
                    let _ = write!(s, " c{i}={:.2}", pct(*v));
                }
                None => {
                    let _ = write!(s, " c{i}=n/a");
                }
            }
        }
        s.push('\n');
        s
    }

    /// One `key=value` per line, full precision.
    pub fn key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mAP={}", self.map.map);
        for (prefix, m) in [("all", &self.all), ("top", &self.top_k)] {
            for (name, v) in [("CP", m.cp), ("CR", m.cr), ("CF1", m.cf1), ("OP", m.op), ("OR", m.or), ("OF1", m.of1)] {
                let _ = writeln!(s, "{prefix}.{name}={v}");
            }
        }
        for (i, ap) in self.map.per_class.iter().enumerate() {
            match ap {
                Some(v) => {
                    let _ = writeln!(s, "AP.{i}={v}");
                }
                None => {
                    let _ = writeln!(s, "AP.{i}=skipped");
                }
            }
        }
        let _ = writeln!(s, "threshold={}", self.threshold);
        let _ = writeln!(s, "top_k={}", self.k);
        s
    }
}
