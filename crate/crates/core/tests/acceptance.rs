//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, RgbImage};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use leakaudit::audit::{build_report, detect_leakage, summarize, AuditConfig, VerdictRule};
use leakaudit::dataset::{make_split, DatasetManifest, ImageRecord, SplitSpec, SplitStrategy, StrategyKind};
use leakaudit::detmetrics::{average_precision, evaluate, ApMode, EvalConfig, EvalMetrics, Metric};
use leakaudit::leakage::{apply_step, make_leakage_plan};
use leakaudit::phash::{hamming, phash_bits, to_grayscale, GrayscaleRaster, FLAT_NONBLACK_HASH};
use leakaudit::runner::{load_records, run_plan, MockParams, RunConfig, RunMode, RunRecord, RunSource};
use leakaudit::simindex::{choose_bands, cross_split_scan, ScanMethod, ScanOptions};

use common::*;

type Outcome = Result<String, String>;

const PERCENTS: [u32; 11] = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

// Cirrus leakage sweep: mean metrics per step and the reported rates (%).
const CIRRUS_MAP: [f64; 11] = [0.486, 0.595, 0.701, 0.701, 0.736, 0.760, 0.783, 0.791, 0.815, 0.829, 0.835];
const CIRRUS_F1: [f64; 11] = [0.49, 0.57, 0.64, 0.67, 0.70, 0.72, 0.74, 0.75, 0.77, 0.78, 0.79];
const CIRRUS_P: [f64; 11] = [0.553, 0.622, 0.690, 0.761, 0.764, 0.831, 0.786, 0.787, 0.820, 0.843, 0.831];
const CIRRUS_R: [f64; 11] = [0.469, 0.563, 0.628, 0.641, 0.669, 0.680, 0.722, 0.739, 0.757, 0.769, 0.800];
const CIRRUS_REL_MAP: [f64; 10] = [22.4, 14.1, 3.2, 5.0, 3.3, 3.0, 1.0, 3.0, 1.7, 0.7];
const CIRRUS_REL_F1: [f64; 10] = [16.3, 12.3, 4.7, 4.5, 2.9, 2.8, 1.4, 2.7, 1.3, 1.3];
const CIRRUS_TOL_PP: f64 = 0.1;

// Kitti leakage sweep.
const KITTI_MAP: [f64; 11] = [0.852, 0.856, 0.866, 0.873, 0.881, 0.889, 0.898, 0.901, 0.905, 0.913, 0.921];
const KITTI_F1: [f64; 11] = [0.839, 0.842, 0.850, 0.855, 0.862, 0.869, 0.878, 0.879, 0.885, 0.892, 0.902];
const KITTI_REL_MAP: [f64; 10] = [0.47, 1.17, 0.81, 0.92, 0.91, 1.01, 0.33, 0.44, 0.88, 0.88];
const KITTI_REL_F1: [f64; 10] = [0.36, 0.95, 0.59, 0.82, 0.81, 1.04, 0.11, 0.68, 0.79, 1.12];
const KITTI_TOL_PP: f64 = 0.05;

const REPLAY_BUDGET: Duration = Duration::from_secs(1);
const SCAN_BUDGET: Duration = Duration::from_secs(30);
const MOCK_BUDGET: Duration = Duration::from_secs(60);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn replay_records(rows: &[(f64, f64, f64, f64)]) -> Vec<RunRecord> {
    rows.iter()
        .zip(PERCENTS)
        .map(|(&(precision, recall, map50, f1), percent)| RunRecord {
            percent,
            repetition: 0,
            metrics: EvalMetrics { precision, recall, map50, f1, per_class_ap: BTreeMap::new() },
            source: RunSource::External,
            wall_time: 0.0,
        })
        .collect()
}

/// Compares chained rates against reported percentages; returns mismatches.
fn compare_rates(records: &[RunRecord], metric: Metric, reported: &[f64], tol_pp: f64) -> Vec<String> {
    let (summaries, invalid) = summarize(records, &PERCENTS, 1);
    assert!(invalid.is_empty());
    summaries[1..]
        .iter()
        .zip(reported)
        .enumerate()
        .filter_map(|(i, (s, &want))| {
            let got = s.rel_increase[&metric] * 100.0;
            ((got - want).abs() > tol_pp).then(|| format!("step {} {metric}: {got:.2}% vs {want}%", i + 1))
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let rows: Vec<_> = (0..11).map(|i| (CIRRUS_P[i], CIRRUS_R[i], CIRRUS_MAP[i], CIRRUS_F1[i])).collect();
    let records = replay_records(&rows);
    let mut bad = compare_rates(&records, Metric::Map50, &CIRRUS_REL_MAP, CIRRUS_TOL_PP);
    bad.extend(compare_rates(&records, Metric::F1, &CIRRUS_REL_F1, CIRRUS_TOL_PP));

    let (summaries, _) = summarize(&records, &PERCENTS, 1);
    let verdict = detect_leakage(&summaries, &VerdictRule::default()).map_err(|e| e.to_string())?;
    if verdict.detected {
        bad.push("verdict Detected, expected NotDetected".into());
    }
    let elapsed = started.elapsed();
    if elapsed >= REPLAY_BUDGET {
        bad.push(format!("took {elapsed:?}"));
    }
    if bad.is_empty() {
        Ok(format!("20 rates within {CIRRUS_TOL_PP} pp, NotDetected, {elapsed:?}"))
    } else {
        Err(bad.join("; "))
    }
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let rows: Vec<_> = (0..11).map(|i| (KITTI_F1[i], KITTI_F1[i], KITTI_MAP[i], KITTI_F1[i])).collect();
    let records = replay_records(&rows);
    let mut bad = compare_rates(&records, Metric::Map50, &KITTI_REL_MAP, KITTI_TOL_PP);
    bad.extend(compare_rates(&records, Metric::F1, &KITTI_REL_F1, KITTI_TOL_PP));

    let (summaries, _) = summarize(&records, &PERCENTS, 1);
    let verdict = detect_leakage(&summaries, &VerdictRule::default()).map_err(|e| e.to_string())?;
    let steps: BTreeSet<u32> = verdict.triggering_steps.iter().map(|t| t.percent).collect();
    if !verdict.detected || steps != BTreeSet::from([10, 20]) {
        bad.push(format!("verdict {} with triggering steps {steps:?}", verdict.label()));
    }
    let elapsed = started.elapsed();
    if elapsed >= REPLAY_BUDGET {
        bad.push(format!("took {elapsed:?}"));
    }
    if bad.is_empty() {
        Ok(format!("20 rates within {KITTI_TOL_PP} pp, Detected at {steps:?}, {elapsed:?}"))
    } else {
        Err(bad.join("; "))
    }
}

fn synthetic_split(train: usize, test: usize) -> SplitSpec {
    SplitSpec {
        strategy: StrategyKind::Explicit,
        ratio: None,
        train_ids: (0..train).map(|i| format!("train/{i:06}")).collect(),
        test_ids: (0..test).map(|i| format!("test/{i:06}")).collect(),
    }
}

fn criterion_3() -> Outcome {
    let split = synthetic_split(7_000, 1_790);
    let plan = make_leakage_plan(&split, &PERCENTS, 1, 42).map_err(|e| e.to_string())?;
    let counts: Vec<usize> = PERCENTS.iter().map(|&p| plan.step(p, 0).unwrap().leaked_test_ids.len()).collect();
    let want = [0, 179, 358, 537, 716, 895, 1074, 1253, 1432, 1611, 1790];
    ensure(counts == want, || format!("leak counts {counts:?}"))?;
    Ok(format!("{counts:?}"))
}

fn criterion_4() -> Outcome {
    let cases = 1_000;
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    let strategy = (
        1usize..120,
        1usize..120,
        prop::collection::btree_set(0u32..=100, 1..6),
        1u32..4,
        any::<u64>(),
    );
    runner
        .run(&strategy, |(n_train, n_test, percents, reps, seed)| {
            let split = synthetic_split(n_train, n_test);
            let percents: Vec<u32> = percents.into_iter().collect();
            let plan = match make_leakage_plan(&split, &percents, reps, seed) {
                Ok(p) => p,
                Err(_) => {
                    // only legitimate refusal: a step leaks more than train can give up
                    let need = percents.iter().map(|&p| (n_test * p as usize + 50) / 100).max().unwrap();
                    prop_assert!(need > n_train);
                    return Ok(());
                }
            };
            let again = make_leakage_plan(&split, &percents, reps, seed).unwrap();
            prop_assert_eq!(&plan, &again);
            prop_assert_eq!(plan.steps.len(), percents.len() * reps as usize);
            for step in &plan.steps {
                let m = apply_step(&split, step).unwrap();
                let k = (n_test * step.percent as usize + 50) / 100;
                prop_assert_eq!(m.train_ids.len(), n_train);
                prop_assert_eq!(&m.test_ids, &split.test_ids);
                prop_assert_eq!(m.overlap().len(), k);
                let leaked: BTreeSet<String> = step.leaked_test_ids.iter().cloned().collect();
                prop_assert_eq!(m.overlap(), leaked);
                prop_assert!(step.evicted_train_ids.iter().all(|id| split.train_ids.contains(id)));
                prop_assert!(step.evicted_train_ids.iter().all(|id| !m.train_ids.contains(id)));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} randomized plans"))
}

fn clustered_corpus(seeds: &[u64], flips: &[Vec<u8>], prefix: &str) -> BTreeMap<String, u64> {
    flips
        .iter()
        .enumerate()
        .map(|(i, bits)| {
            let base = seeds[i % seeds.len()];
            let code = bits.iter().fold(base, |acc, b| acc ^ (1u64 << b));
            (format!("{prefix}{i:05}"), code)
        })
        .collect()
}

fn criterion_5() -> Outcome {
    let started = Instant::now();
    let cases = 48;
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    let corpus = |max: usize| prop::collection::vec(prop::collection::vec(0u8..64, 0..9), 1..max);
    let strategy = (prop::collection::vec(any::<u64>(), 1..12), corpus(1_000), corpus(1_000), 0u32..=12);
    runner
        .run(&strategy, |(seeds, train_flips, test_flips, radius)| {
            let train = clustered_corpus(&seeds, &train_flips, "tr");
            let test = clustered_corpus(&seeds, &test_flips, "te");
            let want = brute_force_histogram(&train, &test, radius);
            for method in [ScanMethod::Auto, ScanMethod::Index { bands: choose_bands(radius) }, ScanMethod::Index { bands: 4 }] {
                let opts = ScanOptions { max_dist: radius, method, ..Default::default() };
                let got = cross_split_scan(&train, &test, &opts).unwrap();
                prop_assert_eq!(&got.histogram, &want, "{:?} r={}", method, radius);
                prop_assert_eq!(got.total, want.values().sum::<u64>());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure(elapsed < SCAN_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{cases} corpora up to 2000 hashes, radii 0-12, {elapsed:?}"))
}

fn hash_rgb(img: &RgbImage) -> u64 {
    phash_bits(&to_grayscale(img).unwrap())
}

fn criterion_6() -> Outcome {
    // metric axioms
    let mut runner = TestRunner::new(Config { cases: 10_000, failure_persistence: None, ..Config::default() });
    runner
        .run(&(any::<u64>(), any::<u64>(), any::<u64>()), |(a, b, c)| {
            prop_assert_eq!(hamming(a, b), hamming_oracle(a, b));
            prop_assert_eq!(hamming(a, a), 0);
            prop_assert_eq!(hamming(a, b) == 0, a == b);
            prop_assert_eq!(hamming(a, b), hamming(b, a));
            prop_assert!(hamming(a, c) <= hamming(a, b) + hamming(b, c));
            prop_assert!(hamming(a, b) <= 64);
            Ok(())
        })
        .map_err(|e| format!("metric axioms: {e}"))?;

    // flat images
    for (w, h) in [(1, 1), (31, 7), (64, 64), (640, 480)] {
        for v in [0.0, 0.25, 1.0] {
            let raster = GrayscaleRaster::new(w, h, vec![v; w * h]).unwrap();
            let want = if v == 0.0 { 0 } else { FLAT_NONBLACK_HASH };
            ensure(phash_bits(&raster) == want, || format!("flat {w}x{h} value {v}"))?;
        }
    }

    // re-decode stability and JPEG q90 robustness
    let photos = photo_paths();
    ensure(photos.len() >= 20, || format!("only {} fixture photos", photos.len()))?;
    let mut worst = 0;
    for path in &photos {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let img = image::open(path).map_err(|e| format!("{name}: {e}"))?.to_rgb8();
        let h = hash_rgb(&img);

        let mut png = Vec::new();
        img.write_to(&mut Cursor::new(&mut png), ImageFormat::Png).unwrap();
        let redecoded = image::load_from_memory(&png).unwrap().to_rgb8();
        ensure(hash_rgb(&redecoded) == h, || format!("{name}: hash changed across re-decode"))?;
        ensure(hash_rgb(&image::open(path).unwrap().to_rgb8()) == h, || format!("{name}: unstable"))?;

        let mut jpeg = Vec::new();
        JpegEncoder::new_with_quality(&mut jpeg, 90).encode_image(&img).unwrap();
        let decoded = image::load_from_memory(&jpeg).unwrap().to_rgb8();
        let d = hamming(h, hash_rgb(&decoded));
        ensure(d <= 10, || format!("{name}: JPEG q90 distance {d}"))?;
        worst = worst.max(d);
    }
    Ok(format!("10000 triples, flat cases, {} photos with worst JPEG q90 distance {worst}", photos.len()))
}

fn criterion_7() -> Outcome {
    let ap = average_precision(&[true, false, true], 2, ApMode::AllPoint);
    ensure((ap - 5.0 / 6.0).abs() < 1e-12, || format!("worked AP example gave {ap}"))?;
    ensure((ap_oracle(&[true, false, true], 2) - 5.0 / 6.0).abs() < 1e-12, || "oracle AP example".into())?;

    let fixtures = micro_fixtures();
    ensure(fixtures.len() >= 10, || "fewer than 10 fixtures".into())?;
    for fx in &fixtures {
        ensure(fx.box_count() <= 50, || format!("{}: too many boxes", fx.name))?;
        let manifest = fx.manifest();
        let got = evaluate(&fx.detections(), &manifest, &manifest.ids(), &EvalConfig::default())
            .map_err(|e| format!("{}: {e}", fx.name))?;
        let want = evaluate_oracle(&fx.images, &fx.dets);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        ensure(
            close(got.precision, want.precision)
                && close(got.recall, want.recall)
                && close(got.map50, want.map50)
                && close(got.f1, want.f1),
            || {
                format!(
                    "{}: got P{} R{} mAP{} F1{}, oracle P{} R{} mAP{} F1{}",
                    fx.name, got.precision, got.recall, got.map50, got.f1, want.precision, want.recall,
                    want.map50, want.f1
                )
            },
        )?;
        for (class, ap) in &want.per_class_ap {
            let name = &manifest.class_names[*class];
            ensure(close(got.per_class_ap[name], *ap), || format!("{}: AP of class {name}", fx.name))?;
        }
    }
    Ok(format!("AP example 0.8333, {} fixtures match the brute-force oracle", fixtures.len()))
}

fn synthetic_manifest(n: usize) -> DatasetManifest {
    let images = (0..n)
        .map(|i| ImageRecord {
            id: format!("seq{:02}/{i:04}.png", i / 20),
            sequence: format!("seq{:02}", i / 20),
            width: 64,
            height: 48,
            annotations: vec![],
            ignore_regions: vec![],
            image_path: None,
            labels_path: None,
        })
        .collect();
    DatasetManifest::new("synthetic", vec!["Car".into()], images).unwrap()
}

fn mock_audit(params: &MockParams, jobs: usize) -> Result<(String, bool), String> {
    let manifest = synthetic_manifest(200);
    let split = make_split(&manifest, &SplitStrategy::ByRatio { ratio: 0.7 }).map_err(|e| e.to_string())?;
    let plan = make_leakage_plan(&split, &PERCENTS, 10, 42).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = RunConfig::in_dir(dir.path());
    config.jobs = Some(jobs);
    run_plan(&plan, &split, &RunMode::Mock(params.clone()), &config).map_err(|e| e.to_string())?;
    let (records, failures) = load_records(&config.journal_path).map_err(|e| e.to_string())?;
    let audit = AuditConfig { rule: VerdictRule::default(), quorum: 8 };
    let report = build_report("synthetic", &split, &plan, &records, &failures, &audit, None)
        .map_err(|e| e.to_string())?;
    Ok((report.to_json(), report.verdict.detected))
}

fn criterion_8() -> Outcome {
    let mut notes = Vec::new();
    for (label, params, want) in [("clean", MockParams::clean(), false), ("leaky", MockParams::leaky(), true)] {
        let started = Instant::now();
        let (first, detected) = mock_audit(&params, 1)?;
        ensure(detected == want, || format!("{label}: detected={detected}"))?;
        for jobs in [1, 4, 8] {
            let (again, _) = mock_audit(&params, jobs)?;
            ensure(again == first, || format!("{label}: report differs with jobs={jobs}"))?;
        }
        let elapsed = started.elapsed();
        ensure(elapsed < MOCK_BUDGET, || format!("{label}: took {elapsed:?}"))?;
        notes.push(format!("{label} {} in {elapsed:?}", if detected { "Detected" } else { "NotDetected" }));
    }
    Ok(notes.join(", ") + ", identical across runs and jobs 1/4/8")
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("relative-increase replay, clean corpus", criterion_1),
        ("relative-increase replay, leaky corpus", criterion_2),
        ("leak counts for a 1790-image test side", criterion_3),
        ("leakage plan invariants", criterion_4),
        ("similarity index vs brute force", criterion_5),
        ("perceptual hash properties", criterion_6),
        ("detection metrics vs brute-force oracle", criterion_7),
        ("end-to-end mock audit", criterion_8),
    ];
    // keep panic messages out of the summary lines
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
