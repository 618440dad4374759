mod common;

use sarl::error::Error;
use sarl::kv::KeyValues;
use sarl::manifest::Manifest;
use sarl::{checkpoint, dataset, pgm, predictions, trainer};
use sarl_core::metrics::PredictionSet;
use sarl_core::synthetic::{self, PayloadKind, SyntheticConfig};
use sarl_core::ModelBundle;

fn header(kind: u32, dims: [u32; 5]) -> Vec<u8> {
    let mut b = b"SARL".to_vec();
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&kind.to_le_bytes());
    for d in dims {
        b.extend_from_slice(&d.to_le_bytes());
    }
    b.resize(64, 0);
    b
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    for kind in [PayloadKind::Image, PayloadKind::Features] {
        let cfg = SyntheticConfig { kind, channels: 4, n_train: 30, n_test: 5, ..SyntheticConfig::default() };
        let (train, _) = synthetic::generate(&cfg).unwrap();
        let bytes = dataset::encode(&train).unwrap();
        let back = dataset::decode(&bytes).unwrap();
        assert_eq!(back, train);
        assert_eq!(dataset::encode(&back).unwrap(), bytes);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        dataset::save(&train, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(dataset::load(&path).unwrap(), train);
    }
}

#[test]
fn hand_built_header_decodes() {
    let bytes = header(1, [0, 2, 3, 4, 5]);
    assert_eq!(bytes.len(), 64);
    let h = dataset::parse_header(&bytes).unwrap();
    assert_eq!((h.kind, h.samples, h.num_classes, h.height, h.width, h.depth), (PayloadKind::Features, 0, 2, 3, 4, 5));
    assert_eq!(h.file_len(), 64);
    let ds = dataset::decode(&bytes).unwrap();
    assert!(ds.is_empty());

    // one 1x1x1 sample with two labels
    let mut one = header(0, [1, 2, 1, 1, 1]);
    one.extend_from_slice(&1.5f32.to_le_bytes());
    one.extend_from_slice(&[0, 1]);
    let ds = dataset::decode(&one).unwrap();
    assert_eq!(ds.samples[0].payload, vec![1.5]);
    assert_eq!(ds.samples[0].labels, vec![0, 1]);
}

#[test]
fn truncated_file_names_both_lengths() {
    let (train, _) = common::small_data(0);
    let bytes = dataset::encode(&train).unwrap();
    let cut = &bytes[..bytes.len() - 7];
    match dataset::decode(cut) {
        Err(Error::Truncated { expected, actual, .. }) => {
            assert_eq!((expected, actual), (bytes.len(), bytes.len() - 7));
            let msg = dataset::decode(cut).unwrap_err().to_string();
            assert!(msg.contains(&bytes.len().to_string()) && msg.contains(&(bytes.len() - 7).to_string()), "{msg}");
        }
        other => panic!("expected truncation error, got {other:?}"),
    }
    assert!(matches!(dataset::decode(&bytes[..10]), Err(Error::Truncated { .. })));
}

#[test]
fn bad_magic_version_and_trailing_bytes() {
    let mut b = header(0, [0, 1, 1, 1, 1]);
    b[0] = b'X';
    assert!(matches!(dataset::decode(&b), Err(Error::Magic { .. })));
    let mut b = header(0, [0, 1, 1, 1, 1]);
    b[4] = 2;
    assert!(matches!(dataset::decode(&b), Err(Error::Version { found: 2, expected: 1 })));
    let mut b = header(0, [0, 1, 1, 1, 1]);
    b.push(0);
    assert!(matches!(dataset::decode(&b), Err(Error::Format(_))));
    let mut b = header(0, [1, 1, 1, 1, 1]);
    b.extend_from_slice(&0f32.to_le_bytes());
    b.push(2);
    assert!(matches!(dataset::decode(&b), Err(Error::Format(_))));
}

#[test]
fn voc_manifest_fixture() {
    let text = "# PASCAL VOC 2007\nname=VOC2007\nclasses=20\nsplits=trainval,test\n\
                trainval.samples=5011\ntest.samples=4952\ncardinality=1.5\n";
    let m = Manifest::parse(text).unwrap();
    let st = m.stats().unwrap();
    assert_eq!(st.num_classes, 20);
    assert_eq!(st.split_counts, vec![("trainval".to_string(), 5011), ("test".to_string(), 4952)]);
    assert_eq!(st.cardinality, 1.5);
    assert!(st.table().contains("VOC2007"));
    assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);

    let coco = Manifest::parse("name=MS-COCO\nclasses=80\nsplits=train,val\ntrain.samples=82783\nval.samples=40504\ncardinality=2.9\n")
        .unwrap()
        .stats()
        .unwrap();
    assert_eq!((coco.num_classes, coco.cardinality), (80, 2.9));
}

#[test]
fn manifest_cardinality_from_positive_counts() {
    let m = Manifest::parse("classes=3\nsplits=a,b\na.samples=4\na.positives=6\nb.samples=6\nb.positives=9\n").unwrap();
    assert_eq!(m.stats().unwrap().cardinality, 1.5);
    let missing = Manifest::parse("classes=3\nsplits=a\na.samples=4\n").unwrap();
    assert!(missing.stats().is_err());
}

#[test]
fn pgm_two_by_two_fixture() {
    let bytes = pgm::encode(&[0.0, 1.0, 2.0, 3.0], 2, 2).unwrap();
    let mut expect = b"P5\n2 2\n255\n".to_vec();
    expect.extend_from_slice(&[0, 85, 170, 255]);
    assert_eq!(bytes, expect);
    assert!(pgm::encode(&[0.0; 3], 2, 2).is_err());
}

#[test]
fn checkpoint_round_trip_evaluates_identically() {
    let (train, test) = common::small_data(3);
    let cfg = common::quick_config();
    let (res, _) = common::run(&cfg, &train, &test);
    let bytes = checkpoint::encode(&res.model, &cfg.to_kv()).unwrap();
    let ck = checkpoint::decode(&bytes).unwrap();
    assert_eq!(ck.bundle, res.model);
    assert_eq!(ck.manifest.get("lr"), Some(cfg.to_kv().get("lr").unwrap()));
    let (p1, r1) = trainer::evaluate(&res.model, &test, 0.5, 3).unwrap();
    let (p2, r2) = trainer::evaluate(&ck.bundle, &test, 0.5, 3).unwrap();
    assert_eq!((p1, r1), (p2, r2));
    assert_eq!(checkpoint::encode(&ck.bundle, &ck.manifest).unwrap(), bytes);
}

#[test]
fn checkpoint_rejects_wrong_layout() {
    let bundle = ModelBundle::new(common::quick_config().model_config(&common::small_data(0).0).unwrap(), 1).unwrap();
    let bytes = checkpoint::encode(&bundle, &KeyValues::new()).unwrap();
    assert!(matches!(checkpoint::decode(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(matches!(checkpoint::decode(&bad), Err(Error::Version { .. })));
}

#[test]
fn prediction_file_round_trip() {
    let preds = PredictionSet::new(2, 3, vec![0.1, 0.25, 1.0 / 3.0, 0.0, 1.0, 0.7], vec![0, 1, 1, 1, 0, 0]).unwrap();
    let text = predictions::to_text(&preds);
    assert!(text.starts_with("2 3\n"));
    assert_eq!(predictions::parse(&text).unwrap(), preds);
    assert!(predictions::parse("2 3\n0.1 0.2 0.3 0 1 1\n").is_err());
    assert!(predictions::parse("1 2\n0.1 0.2 0 2\n").is_err());
}
