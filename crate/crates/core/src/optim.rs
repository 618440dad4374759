//! AdamW with decoupled weight decay, and an exponential moving average of
//! parameters.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &[&Tensor]) -> Self {
        OptimizerState {
            m: params.iter().map(|p| alloc::vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| alloc::vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }
}

fn check_mirror(params: &[&mut Tensor], grads: &[&Tensor], state: &OptimizerState) -> Result<()> {
    let ok = params.len() == grads.len()
        && params.len() == state.m.len()
        && params
            .iter()
            .zip(grads)
            .zip(&state.m)
            .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if ok {
        Ok(())
    } else {
        Err(Error::Shape(format!("optimizer state does not mirror {} parameters", params.len())))
    }
}

/// One AdamW update, in place:
/// `p ← p − lr·wd·p − lr · m̂ / (√v̂ + eps)`.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut OptimizerState,
    cfg: &AdamWConfig,
) -> Result<()> {
    check_mirror(params, grads, state)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (k, (x, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
            *x -= cfg.lr * cfg.weight_decay * *x;
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *x -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(())
}

/// `shadow ← decay·shadow + (1 − decay)·params`.
pub fn ema_update(shadow: &mut [&mut Tensor], params: &[&Tensor], decay: f64) -> Result<()> {
    if shadow.len() != params.len() || shadow.iter().zip(params).any(|(s, p)| s.len() != p.len()) {
        return Err(Error::Shape("EMA shadow does not mirror parameters".into()));
    }
    for (s, p) in shadow.iter_mut().zip(params) {
        for (sv, &pv) in s.data_mut().iter_mut().zip(p.data()) {
            *sv = decay * *sv + (1.0 - decay) * pv;
        }
    }
    Ok(())
}
