//! Object-detection scoring: IoU matching, all-point AP, mAP@0.5 and the
//! precision/recall/F1 triple at the F1-maximizing confidence threshold.

mod predictions;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Annotation, BBox, DatasetManifest};

pub use predictions::{read_prediction_dir, read_predictions_jsonl};

/// Detections overlapping an ignore region at least this much are not scored.
pub const IGNORE_IOU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DetMetricsError {
    #[error("prediction references unknown image {0:?}")]
    UnknownImage(String),
    #[error("evaluation side has no ground-truth boxes")]
    EmptyGroundTruth,
    #[error("invalid detection on {image_id}: {message}")]
    InvalidDetection { image_id: String, message: String },
    #[error("malformed prediction input {location}: {message}")]
    MalformedPredictions { location: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class_index: usize,
    pub bbox: BBox,
    pub confidence: f64,
}

impl Detection {
    fn check(&self) -> Result<(), DetMetricsError> {
        let bad = |message: String| DetMetricsError::InvalidDetection {
            image_id: self.image_id.clone(),
            message,
        };
        if !self.bbox.is_valid() {
            return Err(bad(format!("invalid box {:?}", self.bbox)));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(bad(format!("confidence {} outside [0,1]", self.confidence)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Precision,
    Recall,
    #[serde(rename = "map50")]
    Map50,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Precision, Metric::Recall, Metric::Map50, Metric::F1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::Map50 => "map50",
            Metric::F1 => "f1",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "precision" | "p" => Ok(Metric::Precision),
            "recall" | "r" => Ok(Metric::Recall),
            "map50" | "map" => Ok(Metric::Map50),
            "f1" => Ok(Metric::F1),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub f1: f64,
    #[serde(default)]
    pub per_class_ap: BTreeMap<String, f64>,
}

impl EvalMetrics {
    /// Metrics with `f1` derived from precision and recall.
    pub fn from_prf(precision: f64, recall: f64, map50: f64) -> Self {
        Self { precision, recall, map50, f1: f1_score(precision, recall), per_class_ap: BTreeMap::new() }
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::Map50 => self.map50,
            Metric::F1 => self.f1,
        }
    }

    pub fn in_range(&self) -> bool {
        [self.precision, self.recall, self.map50, self.f1]
            .into_iter()
            .chain(self.per_class_ap.values().copied())
            .all(|v| v.is_finite() && (0.0..=1.0).contains(&v))
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Intersection over union; zero-area boxes overlap nothing.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchFlag {
    TruePositive,
    FalsePositive,
    /// Overlaps an ignore region; neither TP nor FP.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatch {
    /// One flag per input detection, in input order.
    pub flags: Vec<MatchFlag>,
    pub false_negatives: usize,
}

impl ImageMatch {
    pub fn count(&self, flag: MatchFlag) -> usize {
        self.flags.iter().filter(|&&f| f == flag).count()
    }
}

/// Ranks detections by descending confidence, input order breaking ties.
fn confidence_order(preds: &[&Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence).then(a.cmp(&b)));
    order
}

/// Greedy one-to-one matching of one image's detections.
///
/// In descending confidence, each detection takes the unmatched ground-truth
/// box of its class with the highest IoU; it is a true positive when that IoU
/// reaches `iou_threshold`.
pub fn match_detections(
    preds: &[&Detection],
    gts: &[Annotation],
    ignore_regions: &[BBox],
    iou_threshold: f64,
) -> ImageMatch {
    let mut matched = vec![false; gts.len()];
    let mut flags = vec![MatchFlag::FalsePositive; preds.len()];
    for i in confidence_order(preds) {
        let det = preds[i];
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, gt)| !matched[*g] && gt.class_index == det.class_index)
            .map(|(g, gt)| (g, iou(&det.bbox, &gt.bbox)))
            .fold(None, |best: Option<(usize, f64)>, (g, o)| match best {
                Some((_, bo)) if bo >= o => best,
                _ => Some((g, o)),
            });
        flags[i] = match best {
            Some((g, o)) if o >= iou_threshold => {
                matched[g] = true;
                MatchFlag::TruePositive
            }
            _ if ignore_regions.iter().any(|r| iou(&det.bbox, r) >= IGNORE_IOU) => MatchFlag::Ignored,
            _ => MatchFlag::FalsePositive,
        };
    }
    ImageMatch { flags, false_negatives: matched.iter().filter(|m| !**m).count() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ApMode {
    /// Area under the monotone precision envelope.
    #[default]
    AllPoint,
    /// Mean envelope precision at recall 0, 0.01, ..., 1.
    Interp101,
}

/// AP from a confidence-ranked TP/FP list (`true` = TP).
pub fn average_precision(ranked_tp: &[bool], num_gt: usize, mode: ApMode) -> f64 {
    if num_gt == 0 || ranked_tp.is_empty() {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(ranked_tp.len());
    let mut precision = Vec::with_capacity(ranked_tp.len());
    for (rank, &hit) in ranked_tp.iter().enumerate() {
        tp += usize::from(hit);
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }

    match mode {
        ApMode::AllPoint => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                ap += (r - prev_recall) * p;
                prev_recall = *r;
            }
            ap
        }
        ApMode::Interp101 => {
            let total: f64 = (0..=100)
                .map(|k| {
                    let target = k as f64 / 100.0;
                    recall
                        .iter()
                        .position(|&r| r >= target - 1e-12)
                        .map_or(0.0, |i| precision[i])
                })
                .sum();
            total / 101.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub ap_mode: ApMode,
    /// Fixed cut for precision/recall/F1; `None` picks the F1-maximizing one.
    pub conf_threshold: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5, ap_mode: ApMode::AllPoint, conf_threshold: None }
    }
}

struct Scored<'a> {
    det: &'a Detection,
    order: usize,
    flag: MatchFlag,
}

/// Scores `preds` against the ground truth of the images in `ids`.
///
/// Predictions for manifest images outside `ids` are dropped; predictions
/// for images missing from the manifest are an error.
pub fn evaluate(
    preds: &[Detection],
    manifest: &DatasetManifest,
    ids: &BTreeSet<String>,
    config: &EvalConfig,
) -> Result<EvalMetrics, DetMetricsError> {
    let index = manifest.index();
    let mut by_image: BTreeMap<&str, Vec<(usize, &Detection)>> = BTreeMap::new();
    for (order, det) in preds.iter().enumerate() {
        if !index.contains_key(det.image_id.as_str()) {
            return Err(DetMetricsError::UnknownImage(det.image_id.clone()));
        }
        det.check()?;
        if ids.contains(&det.image_id) {
            by_image.entry(det.image_id.as_str()).or_default().push((order, det));
        }
    }

    let mut gt_per_class: BTreeMap<usize, usize> = BTreeMap::new();
    for rec in ids.iter().filter_map(|id| index.get(id.as_str())) {
        for a in &rec.annotations {
            *gt_per_class.entry(a.class_index).or_insert(0) += 1;
        }
    }
    let total_gt: usize = gt_per_class.values().sum();
    if total_gt == 0 {
        return Err(DetMetricsError::EmptyGroundTruth);
    }

    let mut scored: Vec<Scored> = by_image
        .par_iter()
        .flat_map_iter(|(image_id, dets)| {
            let rec = index[image_id];
            let refs: Vec<&Detection> = dets.iter().map(|(_, d)| *d).collect();
            let m = match_detections(&refs, &rec.annotations, &rec.ignore_regions, config.iou_threshold);
            dets.iter()
                .zip(m.flags)
                .map(|(&(order, det), flag)| Scored { det, order, flag })
                .collect::<Vec<_>>()
        })
        .filter(|s| s.flag != MatchFlag::Ignored)
        .collect();
    scored.sort_by(|a, b| b.det.confidence.total_cmp(&a.det.confidence).then(a.order.cmp(&b.order)));

    let mut per_class_ap = BTreeMap::new();
    let mut ap_sum = 0.0;
    for (&class, &n_gt) in &gt_per_class {
        let ranked: Vec<bool> = scored
            .iter()
            .filter(|s| s.det.class_index == class)
            .map(|s| s.flag == MatchFlag::TruePositive)
            .collect();
        let ap = average_precision(&ranked, n_gt, config.ap_mode);
        ap_sum += ap;
        let name = manifest.class_names.get(class).cloned().unwrap_or_else(|| class.to_string());
        per_class_ap.insert(name, ap);
    }
    let map50 = ap_sum / gt_per_class.len() as f64;

    let (precision, recall) = match config.conf_threshold {
        Some(t) => {
            let kept: Vec<&Scored> = scored.iter().filter(|s| s.det.confidence >= t).collect();
            let tp = kept.iter().filter(|s| s.flag == MatchFlag::TruePositive).count();
            prf_at(tp, kept.len(), total_gt)
        }
        None => best_f1_point(&scored, total_gt),
    };

    Ok(EvalMetrics { precision, recall, map50, f1: f1_score(precision, recall), per_class_ap })
}

fn prf_at(tp: usize, kept: usize, total_gt: usize) -> (f64, f64) {
    let p = if kept == 0 { 0.0 } else { tp as f64 / kept as f64 };
    (p, tp as f64 / total_gt as f64)
}

/// Sweeps cut points between distinct confidences; the highest cut wins ties.
fn best_f1_point(scored: &[Scored], total_gt: usize) -> (f64, f64) {
    let mut best = (0.0, 0.0);
    let mut best_f1 = 0.0;
    let mut tp = 0;
    for (i, s) in scored.iter().enumerate() {
        tp += usize::from(s.flag == MatchFlag::TruePositive);
        let group_end = scored.get(i + 1).map_or(true, |n| n.det.confidence != s.det.confidence);
        if !group_end {
            continue;
        }
        let (p, r) = prf_at(tp, i + 1, total_gt);
        let f1 = f1_score(p, r);
        if f1 > best_f1 {
            best_f1 = f1;
            best = (p, r);
        }
    }
    best
}
