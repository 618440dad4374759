use proptest::prelude::*;

use sarl::kv::KeyValues;
use sarl::{dataset, pgm, predictions};
use sarl_core::metrics::PredictionSet;
use sarl_core::synthetic::{Dataset, LabeledSample, PayloadKind};

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (1usize..4, 1usize..4, 1usize..4, 1usize..5, 0usize..6, any::<bool>()).prop_flat_map(|(h, w, d, c, n, feat)| {
        let sample = (prop::collection::vec(any::<f32>(), h * w * d), prop::collection::vec(0u8..2, c))
            .prop_map(|(payload, labels)| LabeledSample { payload, labels });
        prop::collection::vec(sample, n).prop_map(move |samples| Dataset {
            kind: if feat { PayloadKind::Features } else { PayloadKind::Image },
            height: h,
            width: w,
            depth: d,
            num_classes: c,
            samples,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // compare encoded bytes, since NaN payloads defeat PartialEq
    #[test]
    fn dataset_bytes_survive_decode(ds in arb_dataset()) {
        let bytes = dataset::encode(&ds).unwrap();
        prop_assert_eq!(bytes.len(), dataset::parse_header(&bytes).unwrap().file_len());
        prop_assert_eq!(dataset::encode(&dataset::decode(&bytes).unwrap()).unwrap(), bytes.clone());
        if !bytes.is_empty() {
            let cut = bytes.len() - 1;
            prop_assert!(dataset::decode(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn prediction_text_round_trips(n in 1usize..6, c in 1usize..5, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n * c).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<u8> = (0..n * c).map(|_| rng.gen_range(0..2)).collect();
        let p = PredictionSet::new(n, c, scores, labels).unwrap();
        prop_assert_eq!(predictions::parse(&predictions::to_text(&p)).unwrap(), p);
    }

    #[test]
    fn pgm_spans_full_range(values in prop::collection::vec(-1e6f64..1e6, 1..30)) {
        let bytes = pgm::normalize(&values);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            prop_assert_eq!(bytes.iter().min(), Some(&0));
            prop_assert_eq!(bytes.iter().max(), Some(&255));
        } else {
            prop_assert!(bytes.iter().all(|&b| b == 0));
        }
        for (i, j) in (0..values.len()).flat_map(|i| (0..values.len()).map(move |j| (i, j))) {
            if values[i] <= values[j] {
                prop_assert!(bytes[i] <= bytes[j]);
            }
        }
    }

    #[test]
    fn key_values_round_trip(pairs in prop::collection::btree_map("[a-z][a-z0-9_.]{0,8}", "[A-Za-z0-9_.,-]{0,12}", 0..8)) {
        let mut kv = KeyValues::new();
        for (k, v) in &pairs {
            kv.set(k, v);
        }
        let back = KeyValues::parse(&kv.to_text()).unwrap();
        prop_assert_eq!(back, kv);
    }
}
