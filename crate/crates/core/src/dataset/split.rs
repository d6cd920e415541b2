use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetError, DatasetManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyKind {
    BySequence,
    ByRatio,
    Explicit,
}

/// How to carve a manifest into train and test.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitStrategy {
    /// Whole sequences go to one side. `test = None` means every other sequence.
    BySequence { train: Vec<String>, test: Option<Vec<String>> },
    /// The first `floor(N * ratio)` ids in lexicographic order go to train.
    ByRatio { ratio: f64 },
    /// The first `train_count` ids in lexicographic order go to train.
    FirstN { train_count: usize },
    Explicit { train_ids: BTreeSet<String>, test_ids: BTreeSet<String> },
}

/// A train/test partition. Serializes with ids sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub strategy: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

impl SplitSpec {
    /// Hex SHA-256 of the canonical JSON form. Used to tie plans, runs and
    /// similarity scans to the same base split.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("split serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }
}

pub fn make_split(
    manifest: &DatasetManifest,
    strategy: &SplitStrategy,
) -> Result<SplitSpec, DatasetError> {
    let ids = manifest.ids();
    let (kind, ratio, train_ids, test_ids) = match strategy {
        SplitStrategy::BySequence { train, test } => {
            let known = manifest.sequences();
            for s in train.iter().chain(test.iter().flatten()) {
                if !known.contains(s) {
                    return Err(DatasetError::UnknownSequence(s.clone()));
                }
            }
            let train_set: BTreeSet<&String> = train.iter().collect();
            let test_set: Option<BTreeSet<&String>> = test.as_ref().map(|t| t.iter().collect());
            if let Some(shared) = test_set.as_ref().and_then(|t| t.intersection(&train_set).next()) {
                return Err(DatasetError::InvalidSplit(format!(
                    "sequence {shared:?} listed on both sides"
                )));
            }
            let mut tr = BTreeSet::new();
            let mut te = BTreeSet::new();
            for rec in &manifest.images {
                if train_set.contains(&rec.sequence) {
                    tr.insert(rec.id.clone());
                } else if test_set.as_ref().map_or(true, |t| t.contains(&rec.sequence)) {
                    te.insert(rec.id.clone());
                }
            }
            (StrategyKind::BySequence, None, tr, te)
        }
        SplitStrategy::ByRatio { ratio } => {
            if !(*ratio > 0.0 && *ratio < 1.0) {
                return Err(DatasetError::InvalidSplit(format!("ratio {ratio} not in (0,1)")));
            }
            // epsilon absorbs representation error such as 0.29 * 100 = 28.999...
            let n_train = (ids.len() as f64 * ratio + 1e-9).floor() as usize;
            let (tr, te) = head_split(&ids, n_train);
            (StrategyKind::ByRatio, Some(*ratio), tr, te)
        }
        SplitStrategy::FirstN { train_count } => {
            let (tr, te) = head_split(&ids, *train_count);
            let ratio = *train_count as f64 / ids.len() as f64;
            (StrategyKind::ByRatio, Some(ratio), tr, te)
        }
        SplitStrategy::Explicit { train_ids, test_ids } => {
            (StrategyKind::Explicit, None, train_ids.clone(), test_ids.clone())
        }
    };

    if train_ids.is_empty() {
        return Err(DatasetError::EmptySide("train"));
    }
    if test_ids.is_empty() {
        return Err(DatasetError::EmptySide("test"));
    }
    let split = SplitSpec { strategy: kind, ratio, train_ids, test_ids };
    let validation = validate_split(manifest, &split);
    if !validation.valid {
        return Err(DatasetError::InvalidSplit(validation.problems.join("; ")));
    }
    Ok(split)
}

fn head_split(ids: &BTreeSet<String>, n_train: usize) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut tr = BTreeSet::new();
    let mut te = BTreeSet::new();
    for (i, id) in ids.iter().enumerate() {
        if i < n_train {
            tr.insert(id.clone());
        } else {
            te.insert(id.clone());
        }
    }
    (tr, te)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitValidation {
    pub valid: bool,
    pub disjoint: bool,
    pub duplicate_ids: Vec<String>,
    pub unknown_ids: Vec<String>,
    pub train_count: usize,
    pub test_count: usize,
    /// Fraction of manifest images assigned to either side.
    pub coverage: f64,
    pub train_class_counts: BTreeMap<String, usize>,
    pub test_class_counts: BTreeMap<String, usize>,
    pub problems: Vec<String>,
}

pub fn validate_split(manifest: &DatasetManifest, split: &SplitSpec) -> SplitValidation {
    let index = manifest.index();
    let duplicate_ids: Vec<String> = split.train_ids.intersection(&split.test_ids).cloned().collect();
    let unknown_ids: Vec<String> = split
        .train_ids
        .iter()
        .chain(&split.test_ids)
        .filter(|id| !index.contains_key(id.as_str()))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let class_counts = |ids: &BTreeSet<String>| {
        let mut counts = BTreeMap::new();
        for rec in ids.iter().filter_map(|id| index.get(id.as_str())) {
            for a in &rec.annotations {
                let name = manifest
                    .class_names
                    .get(a.class_index)
                    .cloned()
                    .unwrap_or_else(|| a.class_index.to_string());
                *counts.entry(name).or_insert(0) += 1;
            }
        }
        counts
    };

    let covered = split
        .train_ids
        .union(&split.test_ids)
        .filter(|id| index.contains_key(id.as_str()))
        .count();

    let mut problems = Vec::new();
    for id in &duplicate_ids {
        problems.push(format!("id {id:?} on both sides"));
    }
    for id in &unknown_ids {
        problems.push(format!("UnknownId {id:?}"));
    }
    if split.train_ids.is_empty() {
        problems.push("train side empty".into());
    }
    if split.test_ids.is_empty() {
        problems.push("test side empty".into());
    }

    SplitValidation {
        valid: problems.is_empty(),
        disjoint: duplicate_ids.is_empty(),
        duplicate_ids,
        unknown_ids,
        train_count: split.train_ids.len(),
        test_count: split.test_ids.len(),
        coverage: if manifest.is_empty() { 0.0 } else { covered as f64 / manifest.len() as f64 },
        train_class_counts: class_counts(&split.train_ids),
        test_class_counts: class_counts(&split.test_ids),
        problems,
    }
}
