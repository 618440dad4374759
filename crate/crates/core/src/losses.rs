//! Asymmetric loss and the training objective built on it.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{sigmoid, Tape, Var};
use crate::tensor::Tensor;

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Asymmetric loss settings: focusing exponents for positives and negatives
/// and the probability shift applied to negatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AslConfig {
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub clip: f64,
}

impl Default for AslConfig {
    fn default() -> Self {
        AslConfig { gamma_pos: 0.0, gamma_neg: 2.0, clip: 0.05 }
    }
}

impl AslConfig {
    /// Plain binary cross-entropy.
    pub const BCE: AslConfig = AslConfig { gamma_pos: 0.0, gamma_neg: 0.0, clip: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_pos >= 0.0 && self.gamma_neg >= 0.0 && (0.0..1.0).contains(&self.clip)) {
            return Err(Error::Config(format!("invalid ASL settings {self:?}")));
        }
        Ok(())
    }
}

/// Weights of the semantic-map and transport terms in the total loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossWeights {
    pub const VOC: LossWeights = LossWeights { lambda1: 0.04, lambda2: 0.5 };
    pub const COCO: LossWeights = LossWeights { lambda1: 0.2, lambda2: 0.5 };

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

fn check_labels(tape: &Tape, p: Var, y: &[f64]) -> Result<()> {
    if tape.shape(p) != [y.len()] {
        return Err(Error::Shape(format!("{:?} predictions for {} labels", tape.shape(p), y.len())));
    }
    Ok(())
}

/// Mean over classes of
/// `-(1-p)^γ+ · log p` for positives and `-p_m^γ− · log(1-p_m)` for
/// negatives, `p_m = max(p - clip, 0)`.
pub fn asl(tape: &mut Tape, p: Var, y: &[f64], cfg: &AslConfig) -> Result<Var> {
    check_labels(tape, p, y)?;
    let p = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);

    let log_p = tape.log(p);
    let neg_p = tape.scale(p, -1.0);
    let one_minus_p = tape.add_scalar(neg_p, 1.0);
    let focus_pos = tape.powf(one_minus_p, cfg.gamma_pos);
    let pos = tape.mul(focus_pos, log_p)?;

    let shifted = tape.add_scalar(p, -cfg.clip);
    let p_m = tape.relu(shifted);
    let neg_pm = tape.scale(p_m, -1.0);
    let one_minus_pm = tape.add_scalar(neg_pm, 1.0);
    let log_q = tape.log(one_minus_pm);
    let focus_neg = tape.powf(p_m, cfg.gamma_neg);
    let neg = tape.mul(focus_neg, log_q)?;

    let pos_mask = tape.constant(Tensor::vector(y.to_vec()));
    let neg_mask = tape.constant(Tensor::vector(y.iter().map(|v| 1.0 - v).collect()));
    let pos = tape.mul(pos, pos_mask)?;
    let neg = tape.mul(neg, neg_mask)?;
    let both = tape.add(pos, neg)?;
    let mean = tape.mean(both);
    Ok(tape.scale(mean, -1.0))
}

/// ASL on the per-class maximum of the semantic map over patches.
pub fn semantic_map_loss(tape: &mut Tape, m: Var, y: &[f64], cfg: &AslConfig) -> Result<Var> {
    let peak = tape.max_axis(m, 0)?;
    let p = tape.sigmoid(peak);
    asl(tape, p, y, cfg)
}

/// ASL on sigmoid of the image logits.
pub fn classification_loss(tape: &mut Tape, z: Var, y: &[f64], cfg: &AslConfig) -> Result<Var> {
    let p = tape.sigmoid(z);
    asl(tape, p, y, cfg)
}

/// `L_cls + λ1·L_m + λ2·L_OT`. A missing transport term counts as zero.
pub fn total_loss(tape: &mut Tape, cls: Var, map: Var, ot: Option<Var>, w: &LossWeights) -> Result<Var> {
    let m = tape.scale(map, w.lambda1);
    let mut total = tape.add(cls, m)?;
    if let Some(ot) = ot {
        let o = tape.scale(ot, w.lambda2);
        total = tape.add(total, o)?;
    }
    Ok(total)
}

/// Scalar form of [`total_loss`].
pub fn total(l_cls: f64, l_m: f64, l_ot: f64, w: &LossWeights) -> f64 {
    l_cls + w.lambda1 * l_m + w.lambda2 * l_ot
}

/// Untracked ASL on plain probabilities, for logging and evaluation.
pub fn asl_value(p: &[f64], y: &[f64], cfg: &AslConfig) -> f64 {
    let mut tape = Tape::new();
    let pv = tape.constant(Tensor::vector(p.to_vec()));
    asl(&mut tape, pv, y, cfg).map(|l| tape.value(l).item()).unwrap_or(f64::NAN)
}

/// Sigmoid of every logit.
pub fn probabilities(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| sigmoid(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn eval_asl(p: &[f64], y: &[f64], cfg: AslConfig) -> f64 {
        asl_value(p, y, &cfg)
    }

    #[test]
    fn positive_saturation_is_zero() {
        let l = eval_asl(&[1.0], &[1.0], AslConfig::default());
        assert!(l < 1e-6);
    }

    #[test]
    fn negative_below_clip_is_zero() {
        let l = eval_asl(&[0.03, 0.05], &[0.0, 0.0], AslConfig::default());
        assert_eq!(l, 0.0);
    }

    #[test]
    fn half_probability_positive() {
        let cfg = AslConfig { gamma_pos: 0.0, ..AslConfig::default() };
        let l = eval_asl(&[0.5], &[1.0], cfg);
        assert!((l - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(alloc::format!("{l:.4}"), "0.6931");
    }

    #[test]
    fn bce_reduction() {
        let p = [0.1, 0.7, 0.35, 0.9];
        let y = [1.0, 0.0, 1.0, 0.0];
        let bce: f64 = p
            .iter()
            .zip(&y)
            .map(|(&p, &y)| -(y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p)))
            .sum::<f64>()
            / 4.0;
        assert!((eval_asl(&p, &y, AslConfig::BCE) - bce).abs() < 1e-12);
    }

    #[test]
    fn semantic_map_loss_saturated() {
        let mut t = Tape::new();
        let m = t.constant(Tensor::matrix(2, 2, vec![20.0, -25.0, -3.0, -20.0]).unwrap());
        let l = semantic_map_loss(&mut t, m, &[1.0, 0.0], &AslConfig::default()).unwrap();
        assert!(t.value(l).item() < 1e-6);
    }

    #[test]
    fn semantic_map_loss_single_patch_is_asl_of_row() {
        let row = [0.3, -1.2, 2.0];
        let y = [1.0, 0.0, 0.0];
        let mut t = Tape::new();
        let m = t.constant(Tensor::matrix(1, 3, row.to_vec()).unwrap());
        let l = semantic_map_loss(&mut t, m, &y, &AslConfig::default()).unwrap();
        let expect = asl_value(&probabilities(&row), &y, &AslConfig::default());
        assert_eq!(t.value(l).item(), expect);
    }

    #[test]
    fn classification_loss_examples() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::vector(vec![20.0, -20.0, 20.0]));
        let l = classification_loss(&mut t, z, &[1.0, 0.0, 1.0], &AslConfig::default()).unwrap();
        assert!(t.value(l).item() < 1e-6);
        let z = t.constant(Tensor::vector(vec![0.0]));
        let l = classification_loss(&mut t, z, &[1.0], &AslConfig::default()).unwrap();
        assert!((t.value(l).item() - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn total_loss_weights() {
        let w0 = LossWeights { lambda1: 0.0, lambda2: 0.0 };
        assert_eq!(total(1.25, 2.0, 3.0, &w0), 1.25);
        assert!((total(1.0, 2.0, 3.0, &LossWeights::VOC) - 2.58).abs() < 1e-12);
        assert!((total(1.0, 2.0, 3.0, &LossWeights::COCO) - 2.9).abs() < 1e-12);

        let mut t = Tape::new();
        let (a, b, c) = (t.constant(Tensor::scalar(1.0)), t.constant(Tensor::scalar(2.0)), t.constant(Tensor::scalar(3.0)));
        let l = total_loss(&mut t, a, b, Some(c), &LossWeights::VOC).unwrap();
        assert!((t.value(l).item() - 2.58).abs() < 1e-12);
        let l = total_loss(&mut t, a, b, None, &LossWeights::VOC).unwrap();
        assert!((t.value(l).item() - 1.08).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(AslConfig { clip: 1.0, ..AslConfig::default() }.validate().is_err());
        assert!(AslConfig { gamma_neg: -1.0, ..AslConfig::default() }.validate().is_err());
        assert!(LossWeights { lambda1: -0.1, lambda2: 0.0 }.validate().is_err());
        assert!(AslConfig::default().validate().is_ok());
    }

    #[test]
    fn label_length_mismatch() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::vector(vec![0.5, 0.5]));
        assert!(matches!(asl(&mut t, p, &[1.0], &AslConfig::default()), Err(Error::Shape(_))));
    }
}
