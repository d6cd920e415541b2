//! Test-only oracles and fixtures shared by the integration suites.
//!
//! Every oracle here is written from the definitions and shares no code
//! path with the library beyond the plain data types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use leakaudit::dataset::{Annotation, BBox, DatasetManifest, ImageRecord};
use leakaudit::detmetrics::Detection;

pub fn photo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/photos")
}

pub fn photo_paths() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(photo_dir())
        .expect("photo fixture present")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    v.sort();
    v
}

/// Bitwise population count of `a ^ b`, one bit at a time.
pub fn hamming_oracle(a: u64, b: u64) -> u32 {
    (0..64).filter(|i| (a >> i) & 1 != (b >> i) & 1).count() as u32
}

/// All-pairs histogram of distances `<= max_dist`, every bucket present.
pub fn brute_force_histogram(
    train: &BTreeMap<String, u64>,
    test: &BTreeMap<String, u64>,
    max_dist: u32,
) -> BTreeMap<u32, u64> {
    let mut h: BTreeMap<u32, u64> = (0..=max_dist).map(|d| (d, 0)).collect();
    for a in train.values() {
        for b in test.values() {
            let d = hamming_oracle(*a, *b);
            if d <= max_dist {
                *h.get_mut(&d).unwrap() += 1;
            }
        }
    }
    h
}

// ---------------------------------------------------------------------------
// detection metrics oracle (integer boxes only)

/// IoU by counting unit cells covered by each box.
pub fn pixel_iou(a: &BBox, b: &BBox) -> f64 {
    let cells = |bb: &BBox| -> BTreeSet<(i64, i64)> {
        let mut s = BTreeSet::new();
        for x in bb.x_min as i64..bb.x_max as i64 {
            for y in bb.y_min as i64..bb.y_max as i64 {
                s.insert((x, y));
            }
        }
        s
    };
    let (ca, cb) = (cells(a), cells(b));
    let inter = ca.intersection(&cb).count();
    let union = ca.len() + cb.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Tp,
    Fp,
    Skip,
}

pub struct OracleResult {
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub f1: f64,
    pub per_class_ap: BTreeMap<usize, f64>,
}

/// AP as the sum over true positives of `1/num_gt` times the best precision
/// reachable at that rank or any later one.
pub fn ap_oracle(ranked: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let prec_at = |k: usize| ranked[..=k].iter().filter(|t| **t).count() as f64 / (k + 1) as f64;
    (0..ranked.len())
        .filter(|&k| ranked[k])
        .map(|k| (k..ranked.len()).map(prec_at).fold(0.0, f64::max) / num_gt as f64)
        .sum()
}

/// Greedy matching, AP per class, and the F1-best confidence cut, evaluated
/// the slow way: every candidate cut is re-scored from scratch.
pub fn evaluate_oracle(
    images: &[(Vec<Annotation>, Vec<BBox>)],
    dets: &[(usize, usize, BBox, f64)], // image, class, box, confidence
) -> OracleResult {
    let mut outcome = vec![Outcome::Fp; dets.len()];
    for (img, (gts, ignore)) in images.iter().enumerate() {
        let mut idx: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].0 == img).collect();
        // descending confidence, input order among equals
        idx.sort_by(|&a, &b| dets[b].3.partial_cmp(&dets[a].3).unwrap().then(a.cmp(&b)));
        let mut taken = vec![false; gts.len()];
        for i in idx {
            let (_, class, bbox, _) = dets[i];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] || gt.class_index != class {
                    continue;
                }
                let o = pixel_iou(&bbox, &gt.bbox);
                if best.map_or(true, |(_, bo)| o > bo) {
                    best = Some((g, o));
                }
            }
            outcome[i] = match best {
                Some((g, o)) if o >= 0.5 => {
                    taken[g] = true;
                    Outcome::Tp
                }
                _ if ignore.iter().any(|r| pixel_iou(&bbox, r) >= 0.5) => Outcome::Skip,
                _ => Outcome::Fp,
            };
        }
    }

    let mut n_gt: BTreeMap<usize, usize> = BTreeMap::new();
    for (gts, _) in images {
        for g in gts {
            *n_gt.entry(g.class_index).or_default() += 1;
        }
    }
    let total_gt: usize = n_gt.values().sum();

    let mut live: Vec<usize> = (0..dets.len()).filter(|&i| outcome[i] != Outcome::Skip).collect();
    live.sort_by(|&a, &b| dets[b].3.partial_cmp(&dets[a].3).unwrap().then(a.cmp(&b)));

    let mut per_class_ap = BTreeMap::new();
    for (&class, &n) in &n_gt {
        let ranked: Vec<bool> =
            live.iter().filter(|&&i| dets[i].1 == class).map(|&i| outcome[i] == Outcome::Tp).collect();
        per_class_ap.insert(class, ap_oracle(&ranked, n));
    }
    let map50 = per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64;

    let mut cuts: Vec<f64> = live.iter().map(|&i| dets[i].3).collect();
    cuts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cuts.dedup();
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for t in cuts {
        let kept: Vec<usize> = live.iter().copied().filter(|&i| dets[i].3 >= t).collect();
        let tp = kept.iter().filter(|&&i| outcome[i] == Outcome::Tp).count() as f64;
        let p = tp / kept.len() as f64;
        let r = tp / total_gt as f64;
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        if f > f1 {
            (precision, recall, f1) = (p, r, f);
        }
    }
    OracleResult { precision, recall, map50, f1, per_class_ap }
}

/// A detection micro-fixture: images with ground truth and ignore regions,
/// plus detections `(image, class, box, confidence)`.
pub struct MicroFixture {
    pub name: &'static str,
    pub images: Vec<(Vec<Annotation>, Vec<BBox>)>,
    pub dets: Vec<(usize, usize, BBox, f64)>,
}

impl MicroFixture {
    pub fn manifest(&self) -> DatasetManifest {
        let images = self
            .images
            .iter()
            .enumerate()
            .map(|(i, (gts, ignore))| ImageRecord {
                id: format!("img{i:02}"),
                sequence: "s".into(),
                width: 64,
                height: 64,
                annotations: gts.clone(),
                ignore_regions: ignore.clone(),
                image_path: None,
                labels_path: None,
            })
            .collect();
        DatasetManifest::new("micro", vec!["a".into(), "b".into(), "c".into()], images).unwrap()
    }

    pub fn detections(&self) -> Vec<Detection> {
        self.dets
            .iter()
            .map(|&(img, class, bbox, confidence)| Detection {
                image_id: format!("img{img:02}"),
                class_index: class,
                bbox,
                confidence,
            })
            .collect()
    }

    pub fn box_count(&self) -> usize {
        self.dets.len() + self.images.iter().map(|(g, i)| g.len() + i.len()).sum::<usize>()
    }
}

fn bb(x0: i32, y0: i32, x1: i32, y1: i32) -> BBox {
    BBox::new(x0.into(), y0.into(), x1.into(), y1.into())
}

fn gt(class: usize, x0: i32, y0: i32, x1: i32, y1: i32) -> Annotation {
    Annotation { class_index: class, bbox: bb(x0, y0, x1, y1) }
}

/// Hand-built fixtures covering the matching and ranking corner cases.
pub fn micro_fixtures() -> Vec<MicroFixture> {
    vec![
        MicroFixture {
            name: "ranked tp-fp-tp, two ground truths",
            images: vec![(vec![gt(0, 0, 0, 10, 10), gt(0, 20, 20, 30, 30)], vec![])],
            dets: vec![
                (0, 0, bb(0, 0, 10, 10), 0.9),
                (0, 0, bb(40, 40, 50, 50), 0.8),
                (0, 0, bb(20, 20, 30, 30), 0.7),
            ],
        },
        MicroFixture {
            name: "perfect detector",
            images: vec![(vec![gt(0, 0, 0, 8, 8), gt(1, 10, 10, 20, 20)], vec![])],
            dets: vec![(0, 0, bb(0, 0, 8, 8), 0.6), (0, 1, bb(10, 10, 20, 20), 0.5)],
        },
        MicroFixture {
            name: "duplicate detections of one object",
            images: vec![(vec![gt(0, 0, 0, 10, 10)], vec![])],
            dets: vec![(0, 0, bb(0, 0, 10, 10), 0.9), (0, 0, bb(1, 0, 10, 10), 0.8), (0, 0, bb(0, 1, 10, 10), 0.7)],
        },
        MicroFixture {
            name: "iou exactly one half",
            // 10x10 gt vs 10x20 det sharing 100 cells: 100/200
            images: vec![(vec![gt(0, 0, 0, 10, 10)], vec![])],
            dets: vec![(0, 0, bb(0, 0, 10, 20), 0.5)],
        },
        MicroFixture {
            name: "iou just below one half",
            images: vec![(vec![gt(0, 0, 0, 10, 10)], vec![])],
            dets: vec![(0, 0, bb(0, 0, 10, 21), 0.5)],
        },
        MicroFixture {
            name: "class mismatch",
            images: vec![(vec![gt(0, 0, 0, 10, 10), gt(1, 30, 30, 40, 40)], vec![])],
            dets: vec![(0, 1, bb(0, 0, 10, 10), 0.9), (0, 0, bb(30, 30, 40, 40), 0.8), (0, 1, bb(30, 30, 40, 40), 0.3)],
        },
        MicroFixture {
            name: "ignore region swallows a false positive",
            images: vec![(vec![gt(0, 0, 0, 10, 10)], vec![bb(40, 40, 60, 60)])],
            dets: vec![(0, 0, bb(40, 40, 60, 58), 0.95), (0, 0, bb(0, 0, 10, 10), 0.5), (0, 0, bb(20, 0, 30, 10), 0.4)],
        },
        MicroFixture {
            name: "greedy takes the higher-iou ground truth",
            images: vec![(vec![gt(0, 0, 0, 10, 10), gt(0, 4, 0, 14, 10)], vec![])],
            dets: vec![(0, 0, bb(3, 0, 13, 10), 0.9), (0, 0, bb(0, 0, 10, 10), 0.8)],
        },
        MicroFixture {
            name: "tied confidences across images",
            images: vec![
                (vec![gt(0, 0, 0, 10, 10)], vec![]),
                (vec![gt(0, 0, 0, 10, 10), gt(0, 20, 20, 30, 30)], vec![]),
            ],
            dets: vec![
                (0, 0, bb(30, 30, 40, 40), 0.7),
                (1, 0, bb(0, 0, 10, 10), 0.7),
                (0, 0, bb(0, 0, 10, 10), 0.7),
                (1, 0, bb(20, 20, 30, 30), 0.2),
            ],
        },
        MicroFixture {
            name: "class with ground truth but no detections",
            images: vec![(vec![gt(0, 0, 0, 10, 10), gt(2, 20, 20, 30, 30)], vec![])],
            dets: vec![(0, 0, bb(0, 0, 10, 10), 0.8)],
        },
        MicroFixture {
            name: "detections only for a class without ground truth",
            images: vec![(vec![gt(0, 0, 0, 10, 10)], vec![])],
            dets: vec![(0, 1, bb(0, 0, 10, 10), 0.99), (0, 0, bb(0, 0, 10, 10), 0.1)],
        },
        MicroFixture {
            name: "crowded scene",
            images: vec![(
                (0..6).map(|k| gt(k % 2, k as i32 * 10, 0, k as i32 * 10 + 8, 8)).collect(),
                vec![bb(0, 40, 64, 64)],
            )],
            dets: (0..14)
                .map(|k| {
                    let x = (k as i32 * 7) % 60;
                    let y = if k % 3 == 0 { 44 } else { (k as i32 % 2) * 2 };
                    (0, k % 2, bb(x, y, x + 8, y + 8), 1.0 - k as f64 * 0.05)
                })
                .collect(),
        },
    ]
}
