mod oracle;

use oracle::{mat, max_diff, Mat};
use sarl_core::head::{region_score_aggregate, ClassifierParams};
use sarl_core::init;
use sarl_core::losses::{self, AslConfig};
use sarl_core::metrics::{self, PredictionSet};
use sarl_core::model::{Ablation, ModelBundle, ModelConfig};
use sarl_core::representation::{self_attention, fuse_semantic, EncoderConfig, FusionParams, PoolMode, SelfAttentionParams};
use sarl_core::transport::{
    backward_plan, bilinear_mass, cost_matrix, ct_loss, forward_plan, source_distribution, target_distribution,
    TransportMassParams,
};
use sarl_core::{Tape, Tensor};

use rand::Rng;

fn gauss(rng: &mut init::SeededRng, shape: &[usize]) -> Tensor {
    init::gaussian(rng, shape, 1.0)
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = init::rng(11);
    for (m, k, n) in [(1, 1, 1), (3, 4, 5), (8, 2, 7), (6, 6, 6)] {
        let a = gauss(&mut rng, &[m, k]);
        let b = gauss(&mut rng, &[k, n]);
        let expect = oracle::matmul(&mat(&a), &mat(&b));
        assert!(max_diff(&expect, &a.matmul(&b).unwrap()) < 1e-12);
        let mut t = Tape::new();
        let (va, vb) = (t.constant(a), t.constant(b));
        let c = t.matmul(va, vb).unwrap();
        assert!(max_diff(&expect, t.value(c)) < 1e-12);
    }
}

#[test]
fn self_attention_matches_double_loop() {
    let mut rng = init::rng(12);
    for (p, d, heads) in [(4, 8, 2), (6, 8, 4), (5, 6, 1), (9, 12, 3)] {
        let f = gauss(&mut rng, &[p, d]);
        let w: Vec<Tensor> = (0..3).map(|_| init::gaussian(&mut rng, &[d, d], 0.5)).collect();
        let mut t = Tape::new();
        let fv = t.constant(f.clone());
        let params = SelfAttentionParams {
            w_q: t.constant(w[0].clone()),
            w_k: t.constant(w[1].clone()),
            w_v: t.constant(w[2].clone()),
        };
        let out = self_attention(&mut t, fv, &params, heads).unwrap();
        let expect = oracle::self_attention(&mat(&f), &mat(&w[0]), &mat(&w[1]), &mat(&w[2]), heads);
        assert!(max_diff(&expect, t.value(out)) < 1e-10);
    }
}

#[test]
fn bilinear_mass_matches_double_loop() {
    let mut rng = init::rng(13);
    for (p, c, d, d1, d2) in [(4, 3, 8, 4, 4), (6, 5, 7, 3, 6), (1, 1, 2, 1, 1)] {
        let f = gauss(&mut rng, &[p, d]);
        let fs = gauss(&mut rng, &[c, d]);
        let u = gauss(&mut rng, &[d, d1]);
        let v = gauss(&mut rng, &[d, d1]);
        let pb = gauss(&mut rng, &[d1, d2]);
        let b = gauss(&mut rng, &[d2]);
        let w = gauss(&mut rng, &[d2, 1]);
        let mut t = Tape::new();
        let (fv, fsv) = (t.constant(f.clone()), t.constant(fs.clone()));
        let params = TransportMassParams {
            u: t.constant(u.clone()),
            v: t.constant(v.clone()),
            p_b: t.constant(pb.clone()),
            b: t.constant(b.clone()),
            w: t.constant(w.clone()),
        };
        let a = bilinear_mass(&mut t, fv, fsv, &params).unwrap();
        let expect = oracle::bilinear_mass(&mat(&f), &mat(&fs), &mat(&u), &mat(&v), &mat(&pb), b.data(), &mat(&w));
        assert_eq!(t.shape(a), &[p, c]);
        assert!(max_diff(&expect, t.value(a)) < 1e-10);
    }
}

#[test]
fn fusion_matches_per_class_loop() {
    let mut rng = init::rng(14);
    let (c, dv, dt) = (5, 6, 4);
    let g = gauss(&mut rng, &[dv]);
    let l = gauss(&mut rng, &[c, dt]);
    let w = gauss(&mut rng, &[dv + dt, dv]);
    let b = gauss(&mut rng, &[dv]);
    let mut t = Tape::new();
    let (gv, lv) = (t.constant(g.clone()), t.constant(l.clone()));
    let p = FusionParams { weight: t.constant(w.clone()), bias: t.constant(b.clone()) };
    let fs = fuse_semantic(&mut t, gv, lv, &p).unwrap();
    let expect = oracle::fuse(g.data(), &mat(&l), &mat(&w), b.data());
    assert!(max_diff(&expect, t.value(fs)) < 1e-12);
}

#[test]
fn ct_loss_matches_double_sum() {
    let mut rng = init::rng(15);
    for _ in 0..20 {
        let (p, c, d) = (rng.gen_range(1..7), rng.gen_range(1..6), rng.gen_range(1..6));
        let f = gauss(&mut rng, &[p, d]);
        let fs = gauss(&mut rng, &[c, d]);
        let a = gauss(&mut rng, &[p, c]);
        let m = gauss(&mut rng, &[p, c]);
        let mut y: Vec<f64> = (0..c).map(|_| rng.gen_range(0..2) as f64).collect();
        y[rng.gen_range(0..c)] = 1.0;

        let mut t = Tape::new();
        let (fv, fsv, av, mv) = (t.constant(f.clone()), t.constant(fs.clone()), t.constant(a.clone()), t.constant(m.clone()));
        let th = source_distribution(&mut t, mv, &y).unwrap();
        let be = target_distribution(&mut t, &y).unwrap();
        let co = cost_matrix(&mut t, fv, fsv).unwrap();
        let fw = forward_plan(&mut t, av, th).unwrap();
        let bw = backward_plan(&mut t, av, be).unwrap();
        let l = ct_loss(&mut t, fw, bw, co).unwrap();

        let co_o = oracle::cosine_cost(&mat(&f), &mat(&fs));
        assert!(max_diff(&co_o, t.value(co)) < 1e-12);
        let th_o = oracle::theta(&mat(&m), &y);
        let be_o = oracle::beta(&y);
        let expect = oracle::ct_loss(&mat(&a), &th_o, &be_o, &co_o);
        assert!((expect - t.value(l).item()).abs() < 1e-12);
    }
}

#[test]
fn region_aggregation_matches_loop() {
    let mut rng = init::rng(16);
    let (p, d, c) = (5, 4, 3);
    let f = gauss(&mut rng, &[p, d]);
    let w = gauss(&mut rng, &[d, c]);
    let b = gauss(&mut rng, &[c]);
    let mut t = Tape::new();
    let fv = t.constant(f.clone());
    let cls = ClassifierParams { weight: t.constant(w.clone()), bias: t.constant(b.clone()) };
    let agg = region_score_aggregate(&mut t, fv, &cls).unwrap();
    let expect = oracle::aggregate(&mat(&f), &mat(&w), b.data());
    for (e, z) in expect.iter().zip(t.value(agg.logits).data()) {
        assert!((e - z).abs() < 1e-12);
    }
}

#[test]
fn asl_without_focusing_is_bce() {
    let mut rng = init::rng(17);
    for _ in 0..200 {
        let c = rng.gen_range(1..10);
        let p: Vec<f64> = (0..c).map(|_| rng.gen_range(0.001..0.999)).collect();
        let y: Vec<f64> = (0..c).map(|_| rng.gen_range(0..2) as f64).collect();
        let got = losses::asl_value(&p, &y, &AslConfig::BCE);
        assert!((got - oracle::bce(&p, &y)).abs() < 1e-12);
    }
}

#[test]
fn average_precision_matches_rank_walk() {
    let mut rng = init::rng(18);
    for _ in 0..1000 {
        let n = rng.gen_range(1..40);
        // coarse scores so ties are common
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 8.0).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[rng.gen_range(0..n)] = 1;
        let got = metrics::average_precision(&scores, &labels).unwrap();
        assert_eq!(got, oracle::average_precision(&scores, &labels));
    }
}

#[test]
fn mean_ap_matches_rank_walk() {
    let mut rng = init::rng(19);
    for _ in 0..200 {
        let (n, c) = (rng.gen_range(1..20), rng.gen_range(1..6));
        let scores: Vec<f64> = (0..n * c).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<u8> = (0..n * c).map(|_| rng.gen_range(0..2)).collect();
        let preds = PredictionSet::new(n, c, scores, labels).unwrap();
        let aps: Vec<f64> = (0..c)
            .filter(|&k| preds.class_labels(k).contains(&1))
            .map(|k| oracle::average_precision(&preds.class_scores(k), &preds.class_labels(k)))
            .collect();
        match metrics::mean_ap(&preds) {
            Ok(m) => assert_eq!(m.map, aps.iter().sum::<f64>() / aps.len() as f64),
            Err(_) => assert!(aps.is_empty()),
        }
    }
}

fn tiny(ablation: Ablation, pooling: PoolMode) -> ModelConfig {
    ModelConfig {
        num_classes: 3,
        encoder: EncoderConfig::tiny_conv(8, 8, 3),
        d_v: 8,
        d_t: 4,
        n_heads: 2,
        d_1: 4,
        d_2: 4,
        pooling,
        ablation,
    }
}

/// The whole inference path rebuilt from the loop oracles.
fn oracle_logits(bundle: &ModelBundle, x: &Tensor) -> Vec<f64> {
    let cfg = &bundle.config;
    let p = &bundle.params;
    let (h, w, cin) = (8, 8, 3);
    let (y1, h1, w1) = oracle::conv(x.data(), h, w, cin, &mat(&p.encoder[0].weight), p.encoder[0].bias.data());
    let y1: Vec<f64> = y1.into_iter().map(|v| v.max(0.0)).collect();
    let (y2, h2, w2) = oracle::conv(&y1, h1, w1, cfg.d_v, &mat(&p.encoder[1].weight), p.encoder[1].bias.data());
    let enc: Mat = (0..h2 * w2).map(|i| y2[i * cfg.d_v..(i + 1) * cfg.d_v].to_vec()).collect();
    let f = if cfg.ablation.self_attention {
        let a = &p.attention;
        oracle::self_attention(&enc, &mat(&a.w_q), &mat(&a.w_k), &mat(&a.w_v), cfg.n_heads)
    } else {
        enc
    };
    if !cfg.ablation.transport {
        return oracle::aggregate(&f, &mat(&p.classifier.weight), p.classifier.bias.data());
    }
    let g: Vec<f64> = if !cfg.ablation.gsp_fusion {
        vec![0.0; cfg.d_v]
    } else {
        (0..cfg.d_v)
            .map(|j| match cfg.pooling {
                PoolMode::Avg => f.iter().map(|r| r[j]).sum::<f64>() / f.len() as f64,
                PoolMode::Max => f.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max),
            })
            .collect()
    };
    let fs = oracle::fuse(&g, &mat(&p.label_embeddings), &mat(&p.fusion.weight), p.fusion.bias.data());
    let t = &p.transport;
    let a = oracle::bilinear_mass(&f, &fs, &mat(&t.u), &mat(&t.v), &mat(&t.p_b), t.b.data(), &mat(&t.w));
    let f_r: Mat = a
        .iter()
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..cfg.d_v).map(|j| (0..fs.len()).map(|c| e[c] / z * fs[c][j]).sum()).collect()
        })
        .collect();
    oracle::aggregate(&f_r, &mat(&p.classifier.weight), p.classifier.bias.data())
}

#[test]
fn forward_matches_composed_oracles() {
    let variants = [
        (Ablation::default(), PoolMode::Avg),
        (Ablation::default(), PoolMode::Max),
        (Ablation { transport: false, ..Ablation::default() }, PoolMode::Avg),
        (Ablation { self_attention: false, transport: false, gsp_fusion: true }, PoolMode::Avg),
        (Ablation { gsp_fusion: false, ..Ablation::default() }, PoolMode::Avg),
    ];
    let mut rng = init::rng(20);
    for (i, (ab, pool)) in variants.into_iter().enumerate() {
        let bundle = ModelBundle::new(tiny(ab, pool), i as u64).unwrap();
        for _ in 0..3 {
            let x = gauss(&mut rng, &[8, 8, 3]);
            let z = bundle.infer(&x).unwrap();
            let expect = oracle_logits(&bundle, &x);
            for (e, g) in expect.iter().zip(z.data()) {
                assert!((e - g).abs() < 1e-9, "variant {i}: {e} vs {g}");
            }
        }
    }
}
