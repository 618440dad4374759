//! The full model: parameter bundle and the end-to-end forward pass.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::head::{region_score_aggregate, Aggregation, ClassifierParams};
use crate::init::{self, SeededRng};
use crate::losses::{self, AslConfig, LossWeights};
use crate::params::join;
use crate::representation::{
    encode, fuse_semantic, global_spatial_pool, self_attention, ConvBlock, EncoderConfig, FusionParams,
    PoolMode, SelfAttentionParams,
};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::transport::{
    backward_plan, bilinear_mass, cost_matrix, ct_loss, forward_plan, semantic_attention, semantic_map,
    semantic_repr, source_distribution, target_distribution, CostMatrix, MassDistribution, PlanDirection,
    TransportMassParams, TransportPlan,
};

/// Components that can be switched off for ablations. `true` means enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub self_attention: bool,
    /// Transport alignment: when off, the classifier reads `F` directly and
    /// no transport term is computed.
    pub transport: bool,
    /// Fusing the pooled global feature into the class features.
    pub gsp_fusion: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation { self_attention: true, transport: true, gsp_fusion: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub encoder: EncoderConfig,
    pub d_v: usize,
    pub d_t: usize,
    pub n_heads: usize,
    pub d_1: usize,
    pub d_2: usize,
    pub pooling: PoolMode,
    pub ablation: Ablation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate(self.d_v)?;
        let dims = [self.num_classes, self.d_v, self.d_t, self.n_heads, self.d_1, self.d_2];
        if dims.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if !self.d_v.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!("d_v={} not divisible by n_heads={}", self.d_v, self.n_heads)));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        self.encoder.num_patches()
    }
}

/// Every trainable tensor of the model, generic over the slot type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub encoder: Vec<ConvBlock<T>>,
    pub label_embeddings: T,
    pub attention: SelfAttentionParams<T>,
    pub fusion: FusionParams<T>,
    pub semantic_map: T,
    pub transport: TransportMassParams<T>,
    pub classifier: ClassifierParams<T>,
}

impl<T> ModelParams<T> {
    pub fn try_map<U, E>(
        &self,
        f: &mut dyn FnMut(&str, &T) -> core::result::Result<U, E>,
    ) -> core::result::Result<ModelParams<U>, E> {
        let mut encoder = Vec::with_capacity(self.encoder.len());
        for (i, b) in self.encoder.iter().enumerate() {
            encoder.push(b.try_map(&format!("encoder.{i}"), f)?);
        }
        Ok(ModelParams {
            encoder,
            label_embeddings: f("label_embeddings", &self.label_embeddings)?,
            attention: self.attention.try_map("attention", f)?,
            fusion: self.fusion.try_map("fusion", f)?,
            semantic_map: f("semantic_map", &self.semantic_map)?,
            transport: self.transport.try_map("transport", f)?,
            classifier: self.classifier.try_map("classifier", f)?,
        })
    }

    pub fn map<U>(&self, f: &mut dyn FnMut(&str, &T) -> U) -> ModelParams<U> {
        let r: core::result::Result<_, core::convert::Infallible> = self.try_map(&mut |n, t| Ok(f(n, t)));
        match r {
            Ok(p) => p,
            Err(e) => match e {},
        }
    }

    /// Visits every slot in a fixed order, with its dotted name.
    pub fn visit(&self, f: &mut dyn FnMut(&str, &T)) {
        for (i, b) in self.encoder.iter().enumerate() {
            b.visit(&join("encoder", &format!("{i}")), f);
        }
        f("label_embeddings", &self.label_embeddings);
        self.attention.visit("attention", f);
        self.fusion.visit("fusion", f);
        f("semantic_map", &self.semantic_map);
        self.transport.visit("transport", f);
        self.classifier.visit("classifier", f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut T)) {
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_mut(&join("encoder", &format!("{i}")), f);
        }
        f("label_embeddings", &mut self.label_embeddings);
        self.attention.visit_mut("attention", f);
        self.fusion.visit_mut("fusion", f);
        f("semantic_map", &mut self.semantic_map);
        self.transport.visit_mut("transport", f);
        self.classifier.visit_mut("classifier", f);
    }

    /// Every slot, in [`visit`](Self::visit) order.
    pub fn slots(&self) -> Vec<&T> {
        let mut out = Vec::new();
        for b in &self.encoder {
            out.extend(b.slots());
        }
        out.push(&self.label_embeddings);
        out.extend(self.attention.slots());
        out.extend(self.fusion.slots());
        out.push(&self.semantic_map);
        out.extend(self.transport.slots());
        out.extend(self.classifier.slots());
        out
    }

    pub fn slots_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for b in &mut self.encoder {
            out.extend(b.slots_mut());
        }
        out.push(&mut self.label_embeddings);
        out.extend(self.attention.slots_mut());
        out.extend(self.fusion.slots_mut());
        out.push(&mut self.semantic_map);
        out.extend(self.transport.slots_mut());
        out.extend(self.classifier.slots_mut());
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |n, _| out.push(String::from(n)));
        out
    }
}

impl ModelParams<Vec<usize>> {
    /// Shapes implied by a configuration.
    pub fn shapes(cfg: &ModelConfig) -> Self {
        use alloc::vec;
        let (d_v, d_t, c) = (cfg.d_v, cfg.d_t, cfg.num_classes);
        ModelParams {
            encoder: cfg
                .encoder
                .block_channels(d_v)
                .into_iter()
                .map(|(i, o)| ConvBlock { weight: vec![9 * i, o], bias: vec![o] })
                .collect(),
            label_embeddings: vec![c, d_t],
            attention: SelfAttentionParams { w_q: vec![d_v, d_v], w_k: vec![d_v, d_v], w_v: vec![d_v, d_v] },
            fusion: FusionParams { weight: vec![d_v + d_t, d_v], bias: vec![d_v] },
            semantic_map: vec![d_v, c],
            transport: TransportMassParams {
                u: vec![d_v, cfg.d_1],
                v: vec![d_v, cfg.d_1],
                p_b: vec![cfg.d_1, cfg.d_2],
                b: vec![cfg.d_2],
                w: vec![cfg.d_2, 1],
            },
            classifier: ClassifierParams { weight: vec![d_v, c], bias: vec![c] },
        }
    }
}

/// Standard deviation of the label embedding table at initialization.
pub const LABEL_EMBED_STD: f64 = 0.02;

impl ModelParams<Tensor> {
    /// Xavier-uniform matrices, zero biases, Gaussian label embeddings.
    pub fn init(cfg: &ModelConfig, rng: &mut SeededRng) -> Self {
        ModelParams::shapes(cfg).map(&mut |name, shape| {
            if name == "label_embeddings" {
                init::gaussian(rng, shape, LABEL_EMBED_STD)
            } else if shape.len() == 1 {
                Tensor::zeros(shape)
            } else {
                init::xavier_uniform(rng, shape[0], shape[1])
            }
        })
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        ModelParams::shapes(cfg).map(&mut |_, s| Tensor::zeros(s))
    }

    /// Registers every tensor as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(&mut |_, t| tape.leaf(t.clone()))
    }

    /// Registers every tensor as a constant.
    pub fn bind_constant(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(&mut |_, t| tape.constant(t.clone()))
    }

    pub fn num_values(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    /// Fails if any tensor deviates from the shapes `cfg` implies.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = ModelParams::shapes(cfg);
        let want: Vec<(String, Vec<usize>)> = {
            let mut v = Vec::new();
            expected.visit(&mut |n, s| v.push((String::from(n), s.clone())));
            v
        };
        let mut have = Vec::new();
        self.visit(&mut |n, t| have.push((String::from(n), t.shape().to_vec())));
        if want != have {
            return Err(Error::Config(format!("parameter layout mismatch: expected {want:?}, found {have:?}")));
        }
        Ok(())
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut bad = None;
        self.visit(&mut |n, t| {
            if bad.is_none() && !t.is_finite() {
                bad = Some(String::from(n));
            }
        });
        bad
    }
}

/// Transport quantities only computed when labels are available.
#[derive(Debug, Clone, Copy)]
pub struct TransportVars {
    pub theta: Var,
    pub beta: Var,
    pub cost: Var,
    pub forward: Var,
    pub backward: Var,
    pub loss: Var,
}

/// Handles to the intermediate results of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// Patch features after self-attention, `P × d_v`.
    pub features: Var,
    /// Semantic-related class features, `C × d_v`.
    pub semantic: Var,
    /// Semantic map `M`, `P × C`.
    pub semantic_map: Var,
    /// Transport mass `A`, absent when transport is ablated.
    pub mass: Option<Var>,
    /// Attention `B = softmax_c(A)`.
    pub attention: Option<Var>,
    /// What the classifier consumed: `F^R`, or `F` when transport is ablated.
    pub repr: Var,
    pub aggregation: Aggregation,
    pub transport: Option<TransportVars>,
}

/// Runs the model on one sample. Passing `labels` adds the training-only
/// transport quantities; inference never looks at labels.
pub fn forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    params: &ModelParams<Var>,
    input: Var,
    labels: Option<&[f64]>,
) -> Result<ForwardVars> {
    let encoded = encode(tape, input, &cfg.encoder, &params.encoder)?;
    let features = if cfg.ablation.self_attention {
        self_attention(tape, encoded, &params.attention, cfg.n_heads)?
    } else {
        encoded
    };
    let pooled = if cfg.ablation.gsp_fusion {
        global_spatial_pool(tape, features, cfg.pooling)?
    } else {
        tape.constant(Tensor::zeros(&[cfg.d_v]))
    };
    let semantic = fuse_semantic(tape, pooled, params.label_embeddings, &params.fusion)?;
    let m = semantic_map(tape, features, params.semantic_map)?;

    let (mass, attention, repr) = if cfg.ablation.transport {
        let a = bilinear_mass(tape, features, semantic, &params.transport)?;
        let b = semantic_attention(tape, a)?;
        let r = semantic_repr(tape, b, semantic)?;
        (Some(a), Some(b), r)
    } else {
        (None, None, features)
    };
    let aggregation = region_score_aggregate(tape, repr, &params.classifier)?;

    let transport = match (labels, mass) {
        (Some(y), Some(a)) => {
            if y.len() != cfg.num_classes {
                return Err(Error::Shape(format!("{} labels for {} classes", y.len(), cfg.num_classes)));
            }
            let theta = source_distribution(tape, m, y)?;
            let beta = target_distribution(tape, y)?;
            let cost = cost_matrix(tape, features, semantic)?;
            let fwd = forward_plan(tape, a, theta)?;
            let bwd = backward_plan(tape, a, beta)?;
            let loss = ct_loss(tape, fwd, bwd, cost)?;
            Some(TransportVars { theta, beta, cost, forward: fwd, backward: bwd, loss })
        }
        _ => None,
    };

    Ok(ForwardVars { features, semantic, semantic_map: m, mass, attention, repr, aggregation, transport })
}

/// Per-sample loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub cls: Var,
    pub map: Var,
    pub ot: Option<Var>,
    pub total: Var,
}

pub fn sample_loss(
    tape: &mut Tape,
    fv: &ForwardVars,
    labels: &[f64],
    asl: &AslConfig,
    weights: &LossWeights,
) -> Result<LossVars> {
    let cls = losses::classification_loss(tape, fv.aggregation.logits, labels, asl)?;
    let map = losses::semantic_map_loss(tape, fv.semantic_map, labels, asl)?;
    let ot = fv.transport.map(|t| t.loss);
    let total = losses::total_loss(tape, cls, map, ot, weights)?;
    Ok(LossVars { cls, map, ot, total })
}

/// Mean loss terms over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub map: f64,
    pub ot: f64,
}

/// Builds the mean objective over `batch` on `tape`. Returns the scalar to
/// differentiate and the per-term means.
pub fn batch_objective(
    tape: &mut Tape,
    cfg: &ModelConfig,
    params: &ModelParams<Var>,
    batch: &[(&Tensor, &[f64])],
    asl: &AslConfig,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut totals = Vec::with_capacity(batch.len());
    let mut parts = LossBreakdown::default();
    for &(x, y) in batch {
        let input = tape.constant(x.clone());
        let fv = forward(tape, cfg, params, input, Some(y))?;
        let l = sample_loss(tape, &fv, y, asl, weights)?;
        parts.cls += tape.value(l.cls).item() / n;
        parts.map += tape.value(l.map).item() / n;
        parts.ot += l.ot.map_or(0.0, |o| tape.value(o).item()) / n;
        totals.push(tape.reshape(l.total, &[1])?);
    }
    let stacked = if totals.len() == 1 { totals[0] } else { tape.concat(&totals, 0)? };
    let mean = tape.mean(stacked);
    parts.total = tape.value(mean).item();
    Ok((mean, parts))
}

/// Plain-tensor view of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub logits: Tensor,
    pub patch_weights: Tensor,
    pub semantic_map: Tensor,
    pub attention: Option<Tensor>,
    pub theta: Option<MassDistribution>,
    pub beta: Option<MassDistribution>,
    pub cost: Option<CostMatrix>,
    pub forward_plan: Option<TransportPlan>,
    pub backward_plan: Option<TransportPlan>,
    pub losses: LossBreakdown,
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl ModelBundle {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = init::rng(seed);
        let params = ModelParams::init(&config, &mut rng);
        Ok(ModelBundle { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(ModelBundle { config, params })
    }

    /// Image logits for one input. Touches no label data.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.params.bind_constant(&mut tape);
        let x = tape.constant(input.clone());
        let fv = forward(&mut tape, &self.config, &params, x, None)?;
        Ok(tape.value(fv.aggregation.logits).clone())
    }

    /// Semantic map `M` and attention `B` (if transport is enabled) for one input.
    pub fn attention_maps(&self, input: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let mut tape = Tape::new();
        let params = self.params.bind_constant(&mut tape);
        let x = tape.constant(input.clone());
        let fv = forward(&mut tape, &self.config, &params, x, None)?;
        Ok((tape.value(fv.semantic_map).clone(), fv.attention.map(|b| tape.value(b).clone())))
    }

    pub fn train_outputs(
        &self,
        input: &Tensor,
        labels: &[f64],
        asl: &AslConfig,
        weights: &LossWeights,
    ) -> Result<TrainOutputs> {
        let mut tape = Tape::new();
        let params = self.params.bind_constant(&mut tape);
        let x = tape.constant(input.clone());
        let fv = forward(&mut tape, &self.config, &params, x, Some(labels))?;
        let l = sample_loss(&mut tape, &fv, labels, asl, weights)?;
        let v = |var: Var| tape.value(var).clone();
        let t = fv.transport;
        Ok(TrainOutputs {
            logits: v(fv.aggregation.logits),
            patch_weights: v(fv.aggregation.weights),
            semantic_map: v(fv.semantic_map),
            attention: fv.attention.map(v),
            theta: t.map(|t| MassDistribution(v(t.theta))),
            beta: t.map(|t| MassDistribution(v(t.beta))),
            cost: t.map(|t| CostMatrix(v(t.cost))),
            forward_plan: t.map(|t| TransportPlan { plan: v(t.forward), direction: PlanDirection::Forward }),
            backward_plan: t.map(|t| TransportPlan { plan: v(t.backward), direction: PlanDirection::Backward }),
            losses: LossBreakdown {
                total: v(l.total).item(),
                cls: v(l.cls).item(),
                map: v(l.map).item(),
                ot: l.ot.map_or(0.0, |o| tape.value(o).item()),
            },
        })
    }

    /// Rounds every parameter through `f32`, the checkpoint precision.
    pub fn quantized(&self) -> ModelBundle {
        ModelBundle {
            config: self.config,
            params: self.params.map(&mut |_, t| t.map(|v| v as f32 as f64)),
        }
    }
}
