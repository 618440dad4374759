mod common;

use sarl::config::TrainConfig;
use sarl::{checkpoint, predictions, trainer};
use sarl_core::metrics::{self, PredictionRule};

#[test]
fn runs_are_deterministic() {
    let (train, test) = common::small_data(1);
    let cfg = common::quick_config();
    let (a, log_a) = common::run(&cfg, &train, &test);
    let (b, log_b) = common::run(&cfg, &train, &test);
    assert_eq!(log_a, log_b);
    assert_eq!(common::epoch_lines(&log_a).len(), cfg.epochs);
    let extra = cfg.to_kv();
    assert_eq!(checkpoint::encode(&a.model, &extra).unwrap(), checkpoint::encode(&b.model, &extra).unwrap());

    let other = TrainConfig { seed: 5, ..cfg };
    let (_, log_c) = common::run(&other, &train, &test);
    assert_ne!(common::epoch_lines(&log_a), common::epoch_lines(&log_c));
}

#[test]
fn zero_weights_log_total_equal_to_cls() {
    let (train, test) = common::small_data(2);
    let cfg = TrainConfig { lambda1: 0.0, lambda2: 0.0, ..common::quick_config() };
    let (res, log) = common::run(&cfg, &train, &test);
    for e in &res.epochs {
        assert_eq!(e.total, e.cls);
    }
    for line in common::epoch_lines(&log) {
        let field = |k: &str| line.split(' ').find_map(|f| f.strip_prefix(k)).unwrap().to_string();
        assert_eq!(field("total="), field("cls="));
    }
}

#[test]
fn divergence_names_a_tensor() {
    let (train, test) = common::small_data(2);
    let cfg = TrainConfig { lr: 1e300, ema: false, ..common::quick_config() };
    let mut log = Vec::new();
    let err = trainer::train(&cfg, &train, Some(&test), &mut log).unwrap_err().to_string();
    assert!(err.contains("non-finite") || err.contains("loss is"), "{err}");
    assert!(err.contains("epoch 1"), "{err}");
}

#[test]
fn prediction_file_rescores_to_the_report() {
    let (train, test) = common::small_data(4);
    let cfg = common::quick_config();
    let (res, _) = common::run(&cfg, &train, &test);
    let (preds, report) = (res.predictions.unwrap(), res.report.unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("predictions.txt");
    predictions::save(&preds, &path).unwrap();
    let back = predictions::load(&path).unwrap();
    let rescored = metrics::evaluate(&back, cfg.threshold, cfg.top_k).unwrap();
    assert!((rescored.map.map - report.map.map).abs() < 1e-12);
    for (a, b) in [(&rescored.all, &report.all), (&rescored.top_k, &report.top_k)] {
        for (x, y) in [(a.cp, b.cp), (a.cr, b.cr), (a.cf1, b.cf1), (a.op, b.op), (a.or, b.or), (a.of1, b.of1)] {
            assert!((x - y).abs() < 1e-12);
        }
    }

    let top = metrics::predictions(&back, PredictionRule::TopK(3)).unwrap();
    for row in top.chunks(back.num_classes()) {
        assert_eq!(row.iter().filter(|&&v| v == 1).count(), 3);
    }
}

#[test]
fn evaluating_the_checkpoint_reproduces_final_metrics() {
    let (train, test) = common::small_data(5);
    let cfg = common::quick_config();
    let (res, log) = common::run(&cfg, &train, &test);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.bin");
    checkpoint::save(&res.model, &cfg.to_kv(), &path).unwrap();
    let ck = checkpoint::load(&path).unwrap();
    let (_, report) = trainer::evaluate(&ck.bundle, &test, cfg.threshold, cfg.top_k).unwrap();
    assert_eq!(Some(&report), res.report.as_ref());
    assert!(log.contains(&format!("final mAP={}", report.map.map)));
}

#[test]
fn disabled_transport_logs_zero_ot() {
    let (train, test) = common::small_data(6);
    let cfg = TrainConfig { disable_ot: true, ..common::quick_config() };
    let (res, _) = common::run(&cfg, &train, &test);
    // the semantic map term stays; only the transport term is dropped
    assert!(res.epochs.iter().all(|e| e.ot == 0.0 && e.map > 0.0));
    assert!(res.epochs.iter().all(|e| (e.total - (e.cls + cfg.lambda1 * e.map)).abs() < 1e-12));
}
