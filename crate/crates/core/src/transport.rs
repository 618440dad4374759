//! Conditional-transport alignment between patch features and class features.
//!
//! A learnable semantic map `M = F · W_m` scores every patch for every class.
//! During training it shapes the source mass `θ` over patches, while the
//! target mass `β` comes from the labels. A low-rank bilinear form gives the
//! transport mass `A` (`P × C`), which is normalized three ways:
//!
//! * forward plan: `θ_p · softmax_c(a_p·)`, row sums equal `θ`;
//! * backward plan: `β_c · softmax_p(a_·c)`, column sums equal `β`;
//! * attention `B = softmax_c(A)`, used at inference to rebuild each patch as
//!   a mixture of class features.
//!
//! Plans are differentiable functions of `A`, so the transport cost is
//! minimized by gradient descent on whatever produces `A`; there is no inner
//! solver.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::param_group;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Floor on every feature norm before dividing.
pub const NORM_EPS: f64 = 1e-8;

param_group! {
    /// `a_pc = w(tanh((f_p U) ⊙ (f^S_c V)) · P_b + b)`.
    ///
    /// Shapes: `u`, `v` are `d_v × d_1`, `p_b` is `d_1 × d_2`, `b` is `d_2`,
    /// `w` is `d_2 × 1`.
    TransportMassParams { u, v, p_b, b, w }
}

/// Patch-to-class evidence, `P × C` pre-sigmoid logits.
pub fn semantic_map(tape: &mut Tape, f: Var, weights: Var) -> Result<Var> {
    tape.matmul(f, weights)
}

/// Cosine distance `1 − cos(f_p, f^S_c)`, kept inside `[0, 2]`. Norms are
/// floored at `NORM_EPS`, so a zero row costs exactly 1 against anything.
pub fn cost_matrix(tape: &mut Tape, f: Var, f_s: Var) -> Result<Var> {
    let (p, d) = tape.value(f).dims2()?;
    let (c, d2) = tape.value(f_s).dims2()?;
    if d != d2 {
        return Err(Error::Shape(format!("cost between {p}x{d} and {c}x{d2}")));
    }
    let f_st = tape.transpose(f_s)?;
    let dots = tape.matmul(f, f_st)?;
    let nf = tape.row_norm(f)?;
    let nf = tape.clamp(nf, NORM_EPS, f64::INFINITY);
    let inv_f = tape.powf(nf, -1.0);
    let ns = tape.row_norm(f_s)?;
    let ns = tape.clamp(ns, NORM_EPS, f64::INFINITY);
    let inv_s = tape.powf(ns, -1.0);
    let inv_f = tape.broadcast_cols(inv_f, c)?;
    let inv_s = tape.broadcast_rows(inv_s, p)?;
    let cos = tape.mul(dots, inv_f)?;
    let cos = tape.mul(cos, inv_s)?;
    let neg = tape.scale(cos, -1.0);
    let co = tape.add_scalar(neg, 1.0);
    Ok(tape.clamp(co, 0.0, 2.0))
}

/// `θ = softmax_p(M · y / Σ_c y_c)`. Needs at least one positive label.
pub fn source_distribution(tape: &mut Tape, m: Var, y: &[f64]) -> Result<Var> {
    let (p, c) = tape.value(m).dims2()?;
    if y.len() != c {
        return Err(Error::Shape(format!("{} labels for a {p}x{c} semantic map", y.len())));
    }
    let total: f64 = y.iter().sum();
    if total <= 0.0 {
        return Err(Error::Contract("source distribution needs at least one positive label".into()));
    }
    let w = Tensor::new(&[c, 1], y.iter().map(|v| v / total).collect())?;
    let w = tape.constant(w);
    let logits = tape.matmul(m, w)?;
    let logits = tape.reshape(logits, &[p])?;
    tape.softmax(logits, 0)
}

/// `β = softmax(y)`.
pub fn target_distribution(tape: &mut Tape, y: &[f64]) -> Result<Var> {
    let y = tape.constant(Tensor::vector(y.to_vec()));
    tape.softmax(y, 0)
}

/// Transport mass `A` for every (patch, class) pair.
pub fn bilinear_mass(tape: &mut Tape, f: Var, f_s: Var, p: &TransportMassParams<Var>) -> Result<Var> {
    let (n_p, _) = tape.value(f).dims2()?;
    let (n_c, _) = tape.value(f_s).dims2()?;
    let (d_2, one) = tape.value(p.w).dims2()?;
    if one != 1 || tape.shape(p.b) != [d_2] {
        return Err(Error::Shape(format!(
            "bilinear output map {:?} with bias {:?}",
            tape.shape(p.w),
            tape.shape(p.b)
        )));
    }
    let fu = tape.matmul(f, p.u)?;
    let sv = tape.matmul(f_s, p.v)?;
    let joint = tape.pairwise_mul(fu, sv)?;
    let joint = tape.tanh(joint);
    let hidden = crate::representation::affine(tape, joint, p.p_b, p.b)?;
    let a = tape.matmul(hidden, p.w)?;
    tape.reshape(a, &[n_p, n_c])
}

/// `t→_pc = θ_p · softmax_c(a_p·)`.
pub fn forward_plan(tape: &mut Tape, a: Var, theta: Var) -> Result<Var> {
    let (p, c) = tape.value(a).dims2()?;
    if tape.shape(theta) != [p] {
        return Err(Error::Shape(format!("θ {:?} for {p}x{c} mass", tape.shape(theta))));
    }
    let rows = tape.softmax(a, 1)?;
    let th = tape.broadcast_cols(theta, c)?;
    tape.mul(rows, th)
}

/// `t←_cp = β_c · softmax_p(a_·c)`, stored `P × C` like `A`.
pub fn backward_plan(tape: &mut Tape, a: Var, beta: Var) -> Result<Var> {
    let (p, c) = tape.value(a).dims2()?;
    if tape.shape(beta) != [c] {
        return Err(Error::Shape(format!("β {:?} for {p}x{c} mass", tape.shape(beta))));
    }
    let cols = tape.softmax(a, 0)?;
    let be = tape.broadcast_rows(beta, p)?;
    tape.mul(cols, be)
}

/// Bidirectional transport cost `Σ t→ ⊙ CO + Σ t← ⊙ CO`.
pub fn ct_loss(tape: &mut Tape, fwd: Var, bwd: Var, cost: Var) -> Result<Var> {
    let a = tape.mul(fwd, cost)?;
    let b = tape.mul(bwd, cost)?;
    let both = tape.add(a, b)?;
    Ok(tape.sum(both))
}

/// `B = softmax_c(A)`.
pub fn semantic_attention(tape: &mut Tape, a: Var) -> Result<Var> {
    tape.softmax(a, 1)
}

/// `f^R_p = Σ_c b_pc f^S_c`.
pub fn semantic_repr(tape: &mut Tape, b: Var, f_s: Var) -> Result<Var> {
    tape.matmul(b, f_s)
}

/// A probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MassDistribution(pub Tensor);

impl MassDistribution {
    /// Largest violation of non-negativity or of the unit sum.
    pub fn simplex_error(&self) -> f64 {
        let d = self.0.data();
        let neg = d.iter().fold(0.0f64, |m, &v| m.max(-v));
        neg.max(libm::fabs(d.iter().sum::<f64>() - 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanDirection {
    Forward,
    Backward,
}

/// A conditional transport plan, always laid out `P × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: Tensor,
    pub direction: PlanDirection,
}

impl TransportPlan {
    /// The marginal this direction constrains: row sums (forward) or column
    /// sums (backward).
    pub fn marginal(&self) -> Vec<f64> {
        let (p, c) = (self.plan.shape()[0], self.plan.shape()[1]);
        match self.direction {
            PlanDirection::Forward => (0..p).map(|i| self.plan.row(i).iter().sum()).collect(),
            PlanDirection::Backward => (0..c).map(|j| (0..p).map(|i| self.plan.get2(i, j)).sum()).collect(),
        }
    }

    /// Max deviation between the constrained marginal and `target`, or
    /// infinity on a length mismatch or a negative entry.
    pub fn marginal_error(&self, target: &MassDistribution) -> f64 {
        let m = self.marginal();
        if m.len() != target.0.len() || self.plan.data().iter().any(|&v| v < 0.0) {
            return f64::INFINITY;
        }
        m.iter().zip(target.0.data()).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max)
    }
}

/// Cosine-distance costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(pub Tensor);

impl CostMatrix {
    pub fn in_range(&self) -> bool {
        self.0.data().iter().all(|&v| (0.0..=2.0).contains(&v))
    }
}
