mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use leakaudit::dataset::{Annotation, BBox, DatasetManifest, ImageRecord};
use leakaudit::detmetrics::{evaluate, Detection, EvalConfig, Metric};
use leakaudit::runner::MockParams;
use leakaudit::simindex::build_index;

use common::hamming_oracle;

fn arb_box() -> impl Strategy<Value = BBox> {
    (0u32..40, 0u32..40, 1u32..20, 1u32..20)
        .prop_map(|(x, y, w, h)| BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64))
}

fn scale(b: &BBox, k: f64, dx: f64) -> BBox {
    BBox::new(b.x_min * k + dx, b.y_min * k, b.x_max * k + dx, b.y_max * k)
}

type Scene = (Vec<(usize, BBox)>, Vec<(usize, BBox, f64)>);

fn arb_scene() -> impl Strategy<Value = Scene> {
    (
        prop::collection::vec((0usize..2, arb_box()), 1..8),
        prop::collection::vec((0usize..2, arb_box(), 0.01f64..1.0), 0..12),
    )
}

fn eval_scene(gts: &[(usize, BBox)], dets: &[(usize, BBox, f64)], k: f64, dx: f64, conf: impl Fn(f64) -> f64) -> [f64; 4] {
    let annotations = gts.iter().map(|(c, b)| Annotation { class_index: *c, bbox: scale(b, k, dx) }).collect();
    let rec = ImageRecord {
        id: "x".into(),
        sequence: String::new(),
        width: 10_000,
        height: 10_000,
        annotations,
        ignore_regions: vec![],
        image_path: None,
        labels_path: None,
    };
    let manifest = DatasetManifest::new("p", vec!["a".into(), "b".into()], vec![rec]).unwrap();
    let preds: Vec<Detection> = dets
        .iter()
        .map(|(c, b, s)| Detection { image_id: "x".into(), class_index: *c, bbox: scale(b, k, dx), confidence: conf(*s) })
        .collect();
    let m = evaluate(&preds, &manifest, &manifest.ids(), &EvalConfig::default()).unwrap();
    Metric::ALL.map(|metric| m.get(metric))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    // IoU is invariant to a common similarity transform; AP and the F1 cut only
    // see the ranking of confidences.
    #[test]
    fn metrics_invariant_to_rescaling((gts, dets) in arb_scene(), k in prop::sample::select(vec![0.5, 2.0, 4.0]), dx in 0.0f64..100.0) {
        let base = eval_scene(&gts, &dets, 1.0, 0.0, |s| s);
        let scaled = eval_scene(&gts, &dets, k, dx.round(), |s| s);
        let squashed = eval_scene(&gts, &dets, 1.0, 0.0, |s| s * s * 0.5);
        for i in 0..4 {
            prop_assert!((base[i] - scaled[i]).abs() < 1e-9, "{:?} vs {:?}", base, scaled);
            prop_assert!((base[i] - squashed[i]).abs() < 1e-12, "{:?} vs {:?}", base, squashed);
        }
    }

    #[test]
    fn metrics_stay_in_unit_interval((gts, dets) in arb_scene()) {
        let m = eval_scene(&gts, &dets, 1.0, 0.0, |s| s);
        prop_assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn mock_is_monotone_in_leakage(lambda in 0.0f64..=1.0, alpha in 0.05f64..3.0, f in 0.0f64..1.0, df in 0.0f64..0.5) {
        let p = MockParams { lambda, alpha, noise_eps: 0.0, ..MockParams::clean() };
        let g = (f + df).min(1.0);
        let (lo, hi) = (p.expected(f), p.expected(g));
        for m in Metric::ALL {
            prop_assert!(hi.get(m) >= lo.get(m) - 1e-15, "{} at {} vs {}", m, f, g);
        }
        prop_assert!((p.expected(1.0).map50 - p.pmax[&Metric::Map50]).abs() < 1e-12);
    }

    #[test]
    fn index_query_matches_linear_scan(
        codes in prop::collection::vec(any::<u64>(), 1..300),
        probe_flips in prop::collection::vec(0u8..64, 0..6),
        pick in any::<prop::sample::Index>(),
        radius in 0u32..=16,
        bands in 1usize..=64,
    ) {
        let corpus: BTreeMap<String, u64> = codes.iter().enumerate().map(|(i, c)| (format!("{i:04}"), *c)).collect();
        let probe = probe_flips.iter().fold(codes[pick.index(codes.len())], |acc, b| acc ^ (1u64 << b));
        let idx = build_index(&corpus, bands).unwrap();
        let got = idx.query_within(probe, radius).unwrap();
        let mut want: Vec<(String, u32)> = corpus
            .iter()
            .map(|(id, c)| (id.clone(), hamming_oracle(*c, probe)))
            .filter(|(_, d)| *d <= radius)
            .collect();
        want.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
        prop_assert_eq!(got, want);
    }
}
