//! The training loop and evaluation.

use std::io::Write;

use rand::seq::SliceRandom;
use sarl_core::losses;
use sarl_core::metrics::{self, MetricReport, PredictionSet};
use sarl_core::model::{batch_objective, LossBreakdown, ModelBundle, ModelParams};
use sarl_core::optim::{adamw_step, ema_update, OptimizerState};
use sarl_core::synthetic::Dataset;
use sarl_core::{init, Tape, Tensor};

use crate::config::TrainConfig;
use crate::error::{Error, Result};

/// Offset between the init seed and the shuffling stream seed.
const SHUFFLE_STREAM: u64 = 0x5eed_0001;

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Weights used for evaluation (the EMA shadow when enabled), rounded to
    /// checkpoint precision.
    pub model: ModelBundle,
    /// Raw optimizer weights after the last step, full precision.
    pub raw: ModelBundle,
    /// Sample-weighted mean loss terms per epoch.
    pub epochs: Vec<LossBreakdown>,
    pub predictions: Option<PredictionSet>,
    pub report: Option<MetricReport>,
}

pub fn format_epoch(epoch: usize, l: &LossBreakdown) -> String {
    format!("epoch={epoch} total={:.9e} cls={:.9e} map={:.9e} ot={:.9e}", l.total, l.cls, l.map, l.ot)
}

fn check_layout(bundle: &ModelBundle, ds: &Dataset) -> Result<()> {
    let cfg = &bundle.config;
    if ds.num_classes != cfg.num_classes || ds.input_shape() != cfg.encoder.input_shape() {
        return Err(Error::Config(format!(
            "dataset has {} classes and inputs {:?}, model expects {} and {:?}",
            ds.num_classes,
            ds.input_shape(),
            cfg.num_classes,
            cfg.encoder.input_shape()
        )));
    }
    Ok(())
}

/// Sigmoid scores of `bundle` on every sample of `ds`.
pub fn predict(bundle: &ModelBundle, ds: &Dataset) -> Result<PredictionSet> {
    check_layout(bundle, ds)?;
    let c = ds.num_classes;
    let mut scores = Vec::with_capacity(ds.len() * c);
    let mut labels = Vec::with_capacity(ds.len() * c);
    for (i, s) in ds.samples.iter().enumerate() {
        let z = bundle.infer(&ds.input(i))?;
        scores.extend(losses::probabilities(z.data()));
        labels.extend_from_slice(&s.labels);
    }
    Ok(PredictionSet::new(ds.len(), c, scores, labels)?)
}

pub fn evaluate(bundle: &ModelBundle, ds: &Dataset, threshold: f64, k: usize) -> Result<(PredictionSet, MetricReport)> {
    let preds = predict(bundle, ds)?;
    let report = metrics::evaluate(&preds, threshold, k)?;
    Ok((preds, report))
}

fn first_bad_gradient(names: &[String], grads: &[Tensor]) -> Option<String> {
    names.iter().zip(grads).find(|(_, g)| !g.is_finite()).map(|(n, _)| format!("grad.{n}"))
}

/// Trains on `train`, logging the effective config and one line per epoch to
/// `log`, and evaluates on `test` when given.
pub fn train(cfg: &TrainConfig, train: &Dataset, test: Option<&Dataset>, log: &mut dyn Write) -> Result<TrainResult> {
    cfg.validate()?;
    train.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let model_cfg = cfg.model_config(train)?;
    let mut bundle = ModelBundle::new(model_cfg, cfg.seed)?;
    check_layout(&bundle, train)?;
    for line in cfg.to_kv().to_text().lines() {
        writeln!(log, "config {line}")?;
    }

    let inputs: Vec<Tensor> = (0..train.len()).map(|i| train.input(i)).collect();
    let labels: Vec<Vec<f64>> = train.samples.iter().map(|s| s.label_vec()).collect();
    let (asl, weights, adamw) = (cfg.asl(), cfg.loss_weights(), cfg.adamw());
    let names = bundle.params.names();
    let mut state = OptimizerState::new(&bundle.params.slots());
    let mut shadow: Option<ModelParams> = cfg.ema.then(|| bundle.params.clone());
    let mut rng = init::rng(cfg.seed.wrapping_add(SHUFFLE_STREAM));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&Tensor, &[f64])> = chunk.iter().map(|&i| (&inputs[i], labels[i].as_slice())).collect();
            let mut tape = Tape::new();
            let vars = bundle.params.bind(&mut tape);
            let (loss, parts) = batch_objective(&mut tape, &model_cfg, &vars, &batch, &asl, &weights)?;
            let grads_all = tape.backward(loss)?;
            let grads: Vec<Tensor> = vars
                .slots()
                .iter()
                .zip(bundle.params.slots())
                .map(|(&&v, p)| grads_all.get_or_zeros(v, p.shape()))
                .collect();

            if !parts.total.is_finite() {
                let culprit = bundle
                    .params
                    .first_non_finite()
                    .or_else(|| first_bad_gradient(&names, &grads))
                    .unwrap_or_else(|| "loss".into());
                return Err(Error::Core(sarl_core::Error::NonFinite(format!(
                    "epoch {epoch} step {step}: loss is {}; first non-finite tensor: {culprit}",
                    parts.total
                ))));
            }
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            adamw_step(&mut bundle.params.slots_mut(), &grad_refs, &mut state, &adamw)?;
            if let Some(bad) = bundle.params.first_non_finite().or_else(|| first_bad_gradient(&names, &grads)) {
                return Err(Error::Core(sarl_core::Error::NonFinite(format!(
                    "epoch {epoch} step {step}: first non-finite tensor: {bad}"
                ))));
            }
            if let Some(sh) = shadow.as_mut() {
                ema_update(&mut sh.slots_mut(), &bundle.params.slots(), cfg.ema_decay)?;
            }
            let n = chunk.len() as f64;
            sums.total += parts.total * n;
            sums.cls += parts.cls * n;
            sums.map += parts.map * n;
            sums.ot += parts.ot * n;
        }
        let n = train.len() as f64;
        let mean = LossBreakdown { total: sums.total / n, cls: sums.cls / n, map: sums.map / n, ot: sums.ot / n };
        writeln!(log, "{}", format_epoch(epoch, &mean))?;
        history.push(mean);
    }

    let eval_params = shadow.unwrap_or_else(|| bundle.params.clone());
    let model = ModelBundle::from_parts(model_cfg, eval_params)?.quantized();
    let (predictions, report) = match test {
        Some(ds) => {
            let (p, r) = evaluate(&model, ds, cfg.threshold, cfg.top_k)?;
            for line in r.key_values().lines() {
                writeln!(log, "final {line}")?;
            }
            (Some(p), Some(r))
        }
        None => (None, None),
    };
    Ok(TrainResult { model, raw: bundle, epochs: history, predictions, report })
}
