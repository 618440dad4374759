//! Central finite-difference gradient checks.
//!
//! The relative error of one tensor is `‖a − n‖ / max(‖a‖, ‖n‖, FLOOR)`
//! (Euclidean norms), where `a` is the tape gradient and `n` the numerical
//! one. A check reports the worst tensor.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::head::{region_score_aggregate, ClassifierParams};
use crate::init::{self, SeededRng};
use crate::losses::{self, AslConfig, LossWeights};
use crate::model::{batch_objective, Ablation, ModelConfig, ModelParams};
use crate::representation::{
    encode, fuse_semantic, global_spatial_pool, self_attention, ConvBlock, EncoderConfig, FusionParams,
    PoolMode, SelfAttentionParams,
};
use crate::tape::{ConvGeometry, Tape, Var};
use crate::tensor::Tensor;
use crate::transport::{
    backward_plan, bilinear_mass, cost_matrix, ct_loss, forward_plan, source_distribution,
    target_distribution, TransportMassParams,
};

pub const STEP: f64 = 1e-5;
pub const COMPONENT_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;
/// Gradient norms below this are treated as zero.
pub const FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub rel_err: f64,
    pub tol: f64,
    /// Index of the worst input tensor.
    pub worst: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.rel_err < self.tol
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed() { "ok  " } else { "FAIL" };
        write!(f, "{tag} {:<36} rel_err={:.3e} tol={:.0e}", self.name, self.rel_err, self.tol)
    }
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    libm::sqrt(v.map(|x| x * x).sum::<f64>())
}

pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let diff = norm(analytic.data().iter().zip(numeric.data()).map(|(a, b)| a - b));
    let scale = norm(analytic.data().iter().copied())
        .max(norm(numeric.data().iter().copied()))
        .max(FLOOR);
    diff / scale
}

/// Compares tape gradients of the scalar `f(inputs)` against central
/// differences with step `h`.
pub fn check(
    name: &str,
    inputs: &[Tensor],
    f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    h: f64,
    tol: f64,
) -> Result<CheckResult> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).item())
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut rel_err = 0.0;
    let mut worst = 0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, inputs[i].shape());
        let mut numeric = vec![0.0; inputs[i].len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let x0 = inputs[i].data()[k];
            work[i].data_mut()[k] = x0 + h;
            let up = eval(&work)?;
            work[i].data_mut()[k] = x0 - h;
            let down = eval(&work)?;
            work[i].data_mut()[k] = x0;
            *slot = (up - down) / (2.0 * h);
        }
        let numeric = Tensor::new(inputs[i].shape(), numeric)?;
        let e = relative_error(&analytic, &numeric);
        if !e.is_finite() {
            return Err(Error::NonFinite(format!("{name}: gradient of input {i}")));
        }
        if e > rel_err {
            rel_err = e;
            worst = i;
        }
    }
    Ok(CheckResult { name: String::from(name), rel_err, tol, worst })
}

type CheckFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    name: &'static str,
    inputs: Vec<Tensor>,
    f: CheckFn,
    tol: f64,
}

fn case(name: &'static str, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Case {
    Case { name, inputs, f: Box::new(f), tol: COMPONENT_TOL }
}

/// Uniform values with magnitude in `[0.1, 1]` and random sign, which keeps
/// kinks (relu, clamp, max) out of reach of the finite-difference step.
fn away_from_zero(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Reduces `x` to a scalar with fixed random weights, so every output entry
/// contributes a distinct gradient.
fn project(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let mut rng = init::rng(seed);
    let w = tape.constant(init::gaussian(&mut rng, tape.shape(x), 1.0));
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

fn gauss(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    init::gaussian(rng, shape, 1.0)
}

fn op_cases(rng: &mut SeededRng) -> Vec<Case> {
    let a = gauss(rng, &[3, 4]);
    let b = gauss(rng, &[3, 4]);
    let c = gauss(rng, &[4, 5]);
    let r3 = gauss(rng, &[2, 3, 4]);
    let v = gauss(rng, &[4]);
    let pos = init::uniform(rng, &[3, 4], 0.2, 2.0);
    let kinked = away_from_zero(rng, &[3, 4]);
    let img = gauss(rng, &[5, 4, 2]);
    let geom = ConvGeometry { height: 5, width: 4, channels: 2, kernel: 3, stride: 2, padding: 1 };

    vec![
        case("add", vec![a.clone(), b.clone()], |t, x| {
            let y = t.add(x[0], x[1])?;
            project(t, y, 1)
        }),
        case("sub", vec![a.clone(), b.clone()], |t, x| {
            let y = t.sub(x[0], x[1])?;
            project(t, y, 2)
        }),
        case("mul", vec![a.clone(), b.clone()], |t, x| {
            let y = t.mul(x[0], x[1])?;
            project(t, y, 3)
        }),
        case("scale/add_scalar", vec![a.clone()], |t, x| {
            let y = t.scale(x[0], -1.7);
            let y = t.add_scalar(y, 0.3);
            project(t, y, 4)
        }),
        case("matmul", vec![a.clone(), c], |t, x| {
            let y = t.matmul(x[0], x[1])?;
            project(t, y, 5)
        }),
        case("transpose", vec![a.clone()], |t, x| {
            let y = t.transpose(x[0])?;
            project(t, y, 6)
        }),
        case("reshape", vec![r3.clone()], |t, x| {
            let y = t.reshape(x[0], &[6, 4])?;
            project(t, y, 7)
        }),
        case("tanh", vec![a.clone()], |t, x| {
            let y = t.tanh(x[0]);
            project(t, y, 8)
        }),
        case("sigmoid", vec![a.clone()], |t, x| {
            let y = t.sigmoid(x[0]);
            project(t, y, 9)
        }),
        case("exp", vec![a.clone()], |t, x| {
            let y = t.exp(x[0]);
            project(t, y, 10)
        }),
        case("log", vec![pos.clone()], |t, x| {
            let y = t.log(x[0]);
            project(t, y, 11)
        }),
        case("relu", vec![kinked.clone()], |t, x| {
            let y = t.relu(x[0]);
            project(t, y, 12)
        }),
        case("clamp", vec![kinked.clone()], |t, x| {
            let y = t.clamp(x[0], -0.05, 0.05);
            let z = t.clamp(x[0], -2.0, 2.0);
            let s = t.add(y, z)?;
            project(t, s, 13)
        }),
        case("powf", vec![pos], |t, x| {
            let y = t.powf(x[0], 2.5);
            let z = t.powf(x[0], 0.0);
            let s = t.add(y, z)?;
            project(t, s, 14)
        }),
        case("softmax axis 0", vec![a.clone()], |t, x| {
            let y = t.softmax(x[0], 0)?;
            project(t, y, 15)
        }),
        case("softmax axis 1", vec![a.clone()], |t, x| {
            let y = t.softmax(x[0], 1)?;
            project(t, y, 16)
        }),
        case("softmax rank 3", vec![r3.clone()], |t, x| {
            let y = t.softmax(x[0], 1)?;
            project(t, y, 17)
        }),
        case("concat", vec![a.clone(), b.clone()], |t, x| {
            let r = t.concat(&[x[0], x[1]], 0)?;
            let c = t.concat(&[x[0], x[1]], 1)?;
            let r = project(t, r, 18)?;
            let c = project(t, c, 19)?;
            t.add(r, c)
        }),
        case("sum/mean", vec![a.clone()], |t, x| {
            let s = t.sum(x[0]);
            let sq = t.mul(x[0], x[0])?;
            let m = t.mean(sq);
            t.add(s, m)
        }),
        case("sum_axis/mean_axis", vec![r3.clone()], |t, x| {
            let s = t.sum_axis(x[0], 2)?;
            let m = t.mean_axis(x[0], 0)?;
            let s = project(t, s, 20)?;
            let m = project(t, m, 21)?;
            t.add(s, m)
        }),
        case("row_norm", vec![a.clone()], |t, x| {
            let y = t.row_norm(x[0])?;
            project(t, y, 22)
        }),
        case("max_axis", vec![kinked], |t, x| {
            let y0 = t.max_axis(x[0], 0)?;
            let y1 = t.max_axis(x[0], 1)?;
            let y0 = project(t, y0, 23)?;
            let y1 = project(t, y1, 24)?;
            t.add(y0, y1)
        }),
        case("broadcast", vec![v], |t, x| {
            let r = t.broadcast_rows(x[0], 3)?;
            let c = t.broadcast_cols(x[0], 2)?;
            let r = project(t, r, 25)?;
            let c = project(t, c, 26)?;
            t.add(r, c)
        }),
        case("pairwise_mul", vec![a.clone(), gauss(rng, &[2, 4])], |t, x| {
            let y = t.pairwise_mul(x[0], x[1])?;
            project(t, y, 27)
        }),
        case("slice_cols", vec![a], |t, x| {
            let y = t.slice_cols(x[0], 1, 3)?;
            project(t, y, 28)
        }),
        case("im2col", vec![img], move |t, x| {
            let y = t.im2col(x[0], geom)?;
            project(t, y, 29)
        }),
    ]
}

fn layer_cases(rng: &mut SeededRng) -> Vec<Case> {
    let (p, d, c, dt, d1, d2) = (4, 8, 3, 4, 4, 4);
    let f = gauss(rng, &[p, d]);
    let fs = gauss(rng, &[c, d]);
    let w = |rng: &mut SeededRng, r, k| init::gaussian(rng, &[r, k], 0.5);
    let att = vec![w(rng, d, d), w(rng, d, d), w(rng, d, d)];
    let enc_cfg = EncoderConfig::tiny_conv(8, 8, 3);
    let img = gauss(rng, &[8, 8, 3]);
    let conv = vec![w(rng, 27, d), gauss(rng, &[d]), w(rng, 9 * d, d), gauss(rng, &[d])];
    let tm = vec![w(rng, d, d1), w(rng, d, d1), w(rng, d1, d2), gauss(rng, &[d2]), w(rng, d2, 1)];
    let fuse = vec![gauss(rng, &[d]), gauss(rng, &[c, dt]), w(rng, d + dt, d), gauss(rng, &[d])];
    let cls = vec![f.clone(), w(rng, d, c), gauss(rng, &[c])];

    let mut bilinear_inputs = vec![f.clone(), fs.clone()];
    bilinear_inputs.extend(tm);

    let mut conv_inputs = vec![img];
    conv_inputs.extend(conv);

    let mut att_inputs = vec![f.clone()];
    att_inputs.extend(att);

    vec![
        case("encode (tiny conv)", conv_inputs, move |t, x| {
            let blocks = [
                ConvBlock { weight: x[1], bias: x[2] },
                ConvBlock { weight: x[3], bias: x[4] },
            ];
            let y = encode(t, x[0], &enc_cfg, &blocks)?;
            project(t, y, 40)
        }),
        case("self_attention", att_inputs, |t, x| {
            let p = SelfAttentionParams { w_q: x[1], w_k: x[2], w_v: x[3] };
            let y = self_attention(t, x[0], &p, 2)?;
            project(t, y, 41)
        }),
        case("global pool avg/max", vec![f.clone()], |t, x| {
            let a = global_spatial_pool(t, x[0], PoolMode::Avg)?;
            let m = global_spatial_pool(t, x[0], PoolMode::Max)?;
            let a = project(t, a, 42)?;
            let m = project(t, m, 43)?;
            t.add(a, m)
        }),
        case("fuse_semantic", fuse, |t, x| {
            let p = FusionParams { weight: x[2], bias: x[3] };
            let y = fuse_semantic(t, x[0], x[1], &p)?;
            project(t, y, 44)
        }),
        case("bilinear_mass", bilinear_inputs, |t, x| {
            let p = TransportMassParams { u: x[2], v: x[3], p_b: x[4], b: x[5], w: x[6] };
            let y = bilinear_mass(t, x[0], x[1], &p)?;
            project(t, y, 45)
        }),
        case("cost_matrix", vec![f.clone(), fs], |t, x| {
            let y = cost_matrix(t, x[0], x[1])?;
            project(t, y, 46)
        }),
        case("source_distribution", vec![gauss(rng, &[p, c])], |t, x| {
            let y = source_distribution(t, x[0], &[1.0, 0.0, 1.0])?;
            project(t, y, 47)
        }),
        case("region_score_aggregate", cls, |t, x| {
            let p = ClassifierParams { weight: x[1], bias: x[2] };
            let agg = region_score_aggregate(t, x[0], &p)?;
            project(t, agg.logits, 48)
        }),
    ]
}

fn loss_cases(rng: &mut SeededRng) -> Vec<Case> {
    let (p, d, c, d1, d2) = (4, 8, 3, 4, 4);
    let y = [1.0, 0.0, 1.0];
    let probs = init::uniform(rng, &[c], 0.1, 0.9);
    let z = gauss(rng, &[c]);
    let m = gauss(rng, &[p, c]);
    let f = gauss(rng, &[p, d]);
    let fs = gauss(rng, &[c, d]);
    let w = |rng: &mut SeededRng, r, k| init::gaussian(rng, &[r, k], 0.5);
    let mut ct_inputs = vec![f, fs, m.clone()];
    ct_inputs.extend([w(rng, d, d1), w(rng, d, d1), w(rng, d1, d2), gauss(rng, &[d2]), w(rng, d2, 1)]);
    let asl = AslConfig::default();
    let focal = AslConfig { gamma_pos: 1.0, gamma_neg: 4.0, clip: 0.05 };

    let ct = move |t: &mut Tape, x: &[Var]| -> Result<Var> {
        let p = TransportMassParams { u: x[3], v: x[4], p_b: x[5], b: x[6], w: x[7] };
        let a = bilinear_mass(t, x[0], x[1], &p)?;
        let theta = source_distribution(t, x[2], &y)?;
        let beta = target_distribution(t, &y)?;
        let co = cost_matrix(t, x[0], x[1])?;
        let fwd = forward_plan(t, a, theta)?;
        let bwd = backward_plan(t, a, beta)?;
        ct_loss(t, fwd, bwd, co)
    };

    vec![
        case("asl (default)", vec![probs.clone()], move |t, x| losses::asl(t, x[0], &y, &asl)),
        case("asl (gamma+=1, gamma-=4)", vec![probs.clone()], move |t, x| losses::asl(t, x[0], &y, &focal)),
        case("asl (bce)", vec![probs], move |t, x| losses::asl(t, x[0], &y, &AslConfig::BCE)),
        case("semantic_map_loss", vec![m], move |t, x| losses::semantic_map_loss(t, x[0], &y, &asl)),
        case("classification_loss", vec![z.clone()], move |t, x| losses::classification_loss(t, x[0], &y, &asl)),
        case("ct_loss", ct_inputs.clone(), ct),
        case("total_loss", {
            let mut v = ct_inputs;
            v.push(z);
            v
        }, move |t, x| {
            let ot = ct(t, x)?;
            let cls = losses::classification_loss(t, x[8], &y, &asl)?;
            let map = losses::semantic_map_loss(t, x[2], &y, &asl)?;
            losses::total_loss(t, cls, map, Some(ot), &LossWeights { lambda1: 0.3, lambda2: 0.7 })
        }),
    ]
}

/// The tiny model the full-composite check runs on: an 8×8×3 image through
/// two conv blocks gives a 2×2 grid.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        num_classes: 3,
        encoder: EncoderConfig::tiny_conv(8, 8, 3),
        d_v: 8,
        d_t: 4,
        n_heads: 2,
        d_1: 4,
        d_2: 4,
        pooling: PoolMode::Avg,
        ablation: Ablation::default(),
    }
}

fn model_case(rng: &mut SeededRng) -> Case {
    let cfg = tiny_model_config();
    let params = ModelParams::init(&cfg, rng);
    let shapes = ModelParams::shapes(&cfg);
    let inputs: Vec<Tensor> = params.slots().into_iter().cloned().collect();
    let batch = [
        (gauss(rng, &[8, 8, 3]), vec![1.0, 0.0, 1.0]),
        (gauss(rng, &[8, 8, 3]), vec![0.0, 1.0, 0.0]),
    ];
    Case {
        name: "full model total loss",
        inputs,
        f: Box::new(move |t, x| {
            let mut i = 0;
            let bound = shapes.map(&mut |_, _| {
                i += 1;
                x[i - 1]
            });
            let b: Vec<(&Tensor, &[f64])> = batch.iter().map(|(x, y)| (x, y.as_slice())).collect();
            let (loss, _) = batch_objective(t, &cfg, &bound, &b, &AslConfig::default(), &LossWeights::VOC)?;
            Ok(loss)
        }),
        tol: MODEL_TOL,
    }
}

/// Runs every check: each tape op, each layer, each loss, and the full model.
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = init::rng(seed);
    let mut cases = op_cases(&mut rng);
    cases.extend(layer_cases(&mut rng));
    cases.extend(loss_cases(&mut rng));
    cases.push(model_case(&mut rng));
    cases.iter().map(|c| check(c.name, &c.inputs, &*c.f, STEP, c.tol)).collect()
}
