//! Region score aggregation.
//!
//! Each patch feature is scored for every class by one fully connected layer.
//! A softmax over patches, taken separately per class, turns the scores into
//! weights, and the image logit for a class is the weighted sum of its patch
//! scores: `z_c = Σ_p w_pc · s_pc`.

use alloc::format;

use crate::error::{Error, Result};
use crate::params::param_group;
use crate::representation::affine;
use crate::tape::{Tape, Var};

param_group! {
    /// Multi-label classifier: `weight` is `d_v × C`, `bias` is `C`.
    ClassifierParams { weight, bias }
}

/// Patch scores `P × C`, their per-class patch weights `P × C`, and the
/// aggregated logits `C`.
#[derive(Debug, Clone, Copy)]
pub struct Aggregation {
    pub scores: Var,
    pub weights: Var,
    pub logits: Var,
}

pub fn region_score_aggregate(tape: &mut Tape, f_r: Var, cls: &ClassifierParams<Var>) -> Result<Aggregation> {
    let (p, _) = tape.value(f_r).dims2()?;
    if p == 0 {
        return Err(Error::Shape(format!("aggregating {p} patches")));
    }
    let scores = affine(tape, f_r, cls.weight, cls.bias)?;
    let weights = tape.softmax(scores, 0)?;
    let weighted = tape.mul(weights, scores)?;
    let logits = tape.sum_axis(weighted, 0)?;
    Ok(Aggregation { scores, weights, logits })
}
