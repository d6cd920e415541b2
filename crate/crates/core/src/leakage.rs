//! Incremental-leakage schedules.
//!
//! For every `(percent, repetition)` pair a plan copies
//! `round(|test| * percent / 100)` test images into train and evicts the same
//! number of original train images, so the train size never changes. Every
//! step is drawn independently from the base split with its own seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetManifest, SplitSpec};

pub const DEFAULT_REPETITIONS: u32 = 10;

#[derive(Debug, Error)]
pub enum LeakageError {
    #[error("step percents must be strictly increasing within 0..=100, got {0:?}")]
    InvalidPercents(Vec<u32>),
    #[error("repetitions must be at least 1")]
    InvalidRepetitions,
    #[error("{percent}% step needs {needed} evictions but train has only {available} images")]
    InsufficientTrain { percent: u32, needed: usize, available: usize },
    #[error("step does not fit split: {0}")]
    InconsistentStep(String),
    #[error("output directory {0} exists and is not empty")]
    OutputExists(PathBuf),
    #[error("image {0:?} has no source path to link")]
    MissingSource(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// `0, 10, ..., 100`.
pub fn default_percents() -> Vec<u32> {
    (0..=100).step_by(10).collect()
}

/// Percents from 0 to 100 inclusive in increments of `step`.
pub fn percents_with_step(step: u32) -> Vec<u32> {
    let step = step.max(1);
    let mut v: Vec<u32> = (0..=100).step_by(step as usize).collect();
    if v.last() != Some(&100) {
        v.push(100);
    }
    v
}

/// Leak count for a percent of the test side, rounded half up.
pub fn leak_count(test_len: usize, percent: u32) -> usize {
    (test_len * percent as usize + 50) / 100
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Platform-independent seed for one `(percent, repetition)` cell.
pub fn stable_mix(master_seed: u64, percent: u32, repetition: u32) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ u64::from(percent)) ^ u64::from(repetition))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageStep {
    pub percent: u32,
    pub repetition: u32,
    pub derived_seed: u64,
    #[serde(rename = "leaked")]
    pub leaked_test_ids: Vec<String>,
    #[serde(rename = "evicted")]
    pub evicted_train_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakagePlan {
    pub base_split_ref: String,
    pub master_seed: u64,
    pub repetitions: u32,
    pub step_percents: Vec<u32>,
    pub train_count: usize,
    pub test_count: usize,
    /// Ordered by percent, then repetition.
    pub steps: Vec<LeakageStep>,
}

impl LeakagePlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn step(&self, percent: u32, repetition: u32) -> Option<&LeakageStep> {
        self.steps.iter().find(|s| s.percent == percent && s.repetition == repetition)
    }
}

fn sample_sorted(pool: &[&String], k: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut picked: Vec<String> =
        rand::seq::index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i].clone()).collect();
    picked.sort();
    picked
}

pub fn make_leakage_plan(
    split: &SplitSpec,
    step_percents: &[u32],
    repetitions: u32,
    master_seed: u64,
) -> Result<LeakagePlan, LeakageError> {
    let increasing = step_percents.windows(2).all(|w| w[0] < w[1]);
    if step_percents.is_empty() || !increasing || step_percents.iter().any(|&p| p > 100) {
        return Err(LeakageError::InvalidPercents(step_percents.to_vec()));
    }
    if repetitions == 0 {
        return Err(LeakageError::InvalidRepetitions);
    }
    if let Some(shared) = split.train_ids.intersection(&split.test_ids).next() {
        return Err(LeakageError::InconsistentStep(format!("base split shares id {shared:?}")));
    }

    let train: Vec<&String> = split.train_ids.iter().collect();
    let test: Vec<&String> = split.test_ids.iter().collect();
    let mut steps = Vec::with_capacity(step_percents.len() * repetitions as usize);
    for &percent in step_percents {
        let count = leak_count(test.len(), percent);
        if count > train.len() {
            return Err(LeakageError::InsufficientTrain { percent, needed: count, available: train.len() });
        }
        for repetition in 0..repetitions {
            let derived_seed = stable_mix(master_seed, percent, repetition);
            let mut rng = ChaCha8Rng::seed_from_u64(derived_seed);
            let leaked = if count == test.len() {
                test.iter().map(|s| (*s).clone()).collect()
            } else {
                sample_sorted(&test, count, &mut rng)
            };
            let evicted = sample_sorted(&train, count, &mut rng);
            steps.push(LeakageStep {
                percent,
                repetition,
                derived_seed,
                leaked_test_ids: leaked,
                evicted_train_ids: evicted,
            });
        }
    }

    Ok(LeakagePlan {
        base_split_ref: split.content_hash(),
        master_seed,
        repetitions,
        step_percents: step_percents.to_vec(),
        train_count: train.len(),
        test_count: test.len(),
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterializedSplit {
    pub base_split_ref: String,
    pub percent: u32,
    pub repetition: u32,
    pub derived_seed: u64,
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

impl MaterializedSplit {
    pub fn overlap(&self) -> BTreeSet<String> {
        self.train_ids.intersection(&self.test_ids).cloned().collect()
    }

    /// Fraction of the test side that also appears in train.
    pub fn leaked_fraction(&self) -> f64 {
        if self.test_ids.is_empty() {
            return 0.0;
        }
        self.train_ids.intersection(&self.test_ids).count() as f64 / self.test_ids.len() as f64
    }
}

/// `train = (base train \ evicted) ∪ leaked`; test is unchanged.
pub fn apply_step(split: &SplitSpec, step: &LeakageStep) -> Result<MaterializedSplit, LeakageError> {
    let inconsistent = |m: String| Err(LeakageError::InconsistentStep(m));
    if step.leaked_test_ids.len() != step.evicted_train_ids.len() {
        return inconsistent(format!(
            "{} leaked vs {} evicted",
            step.leaked_test_ids.len(),
            step.evicted_train_ids.len()
        ));
    }
    let leaked: BTreeSet<&String> = step.leaked_test_ids.iter().collect();
    let evicted: BTreeSet<&String> = step.evicted_train_ids.iter().collect();
    if leaked.len() != step.leaked_test_ids.len() || evicted.len() != step.evicted_train_ids.len() {
        return inconsistent("duplicate ids in step".into());
    }
    if let Some(id) = leaked.iter().find(|id| !split.test_ids.contains(id.as_str())) {
        return inconsistent(format!("leaked id {id:?} not in base test set"));
    }
    if let Some(id) = evicted.iter().find(|id| !split.train_ids.contains(id.as_str())) {
        return inconsistent(format!("evicted id {id:?} not in base train set"));
    }

    let train_ids = split
        .train_ids
        .iter()
        .filter(|id| !evicted.contains(id))
        .chain(leaked.iter().copied())
        .cloned()
        .collect();
    Ok(MaterializedSplit {
        base_split_ref: split.content_hash(),
        percent: step.percent,
        repetition: step.repetition,
        derived_seed: step.derived_seed,
        train_ids,
        test_ids: split.test_ids.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaterializeMode {
    /// Link (or copy, where links are unavailable) images and labels into
    /// `train/` and `test/` trees next to the split manifest.
    SymlinkOrCopy,
    ManifestOnly,
}

pub const SPLIT_MANIFEST_FILE: &str = "split.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

/// The file handed to an external detector adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifestFile {
    pub dataset: String,
    pub class_names: Vec<String>,
    pub base_split_ref: String,
    pub percent: u32,
    pub repetition: u32,
    pub derived_seed: u64,
    pub train: Vec<SplitEntry>,
    pub test: Vec<SplitEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LeakageError + '_ {
    move |source| LeakageError::Io { path: path.to_path_buf(), source }
}

fn link_or_copy(src: &Path, dst: &Path) -> Result<(), LeakageError> {
    if let Some(parent) = dst.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let src = fs::canonicalize(src).map_err(io_err(src))?;
    #[cfg(unix)]
    if std::os::unix::fs::symlink(&src, dst).is_ok() {
        return Ok(());
    }
    fs::copy(&src, dst).map(|_| ()).map_err(io_err(dst))
}

/// Writes the split manifest (and optionally linked trees) into `out_dir`.
/// Returns the path of the split manifest.
pub fn materialize_to_disk(
    msplit: &MaterializedSplit,
    manifest: &DatasetManifest,
    out_dir: &Path,
    mode: MaterializeMode,
    force: bool,
) -> Result<PathBuf, LeakageError> {
    if out_dir.exists() {
        let non_empty = fs::read_dir(out_dir).map_err(io_err(out_dir))?.next().is_some();
        if non_empty {
            if !force {
                return Err(LeakageError::OutputExists(out_dir.to_path_buf()));
            }
            fs::remove_dir_all(out_dir).map_err(io_err(out_dir))?;
        }
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let index = manifest.index();
    let mut sides: BTreeMap<&str, Vec<SplitEntry>> = BTreeMap::new();
    for (side, ids) in [("train", &msplit.train_ids), ("test", &msplit.test_ids)] {
        let mut entries = Vec::with_capacity(ids.len());
        for id in ids {
            let rec = index
                .get(id.as_str())
                .ok_or_else(|| LeakageError::InconsistentStep(format!("id {id:?} not in manifest")))?;
            let entry = match mode {
                MaterializeMode::ManifestOnly => SplitEntry {
                    id: id.clone(),
                    image: rec.image_path.clone(),
                    labels: rec.labels_path.clone(),
                },
                MaterializeMode::SymlinkOrCopy => {
                    let src = rec.image_path.as_ref().ok_or_else(|| LeakageError::MissingSource(id.clone()))?;
                    let image = out_dir.join(side).join("images").join(id);
                    link_or_copy(src, &image)?;
                    let labels = match &rec.labels_path {
                        Some(src) => {
                            let dst = out_dir.join(side).join("labels").join(Path::new(id).with_extension("txt"));
                            link_or_copy(src, &dst)?;
                            Some(dst)
                        }
                        None => None,
                    };
                    SplitEntry { id: id.clone(), image: Some(image), labels }
                }
            };
            entries.push(entry);
        }
        sides.insert(side, entries);
    }

    let file = SplitManifestFile {
        dataset: manifest.name.clone(),
        class_names: manifest.class_names.clone(),
        base_split_ref: msplit.base_split_ref.clone(),
        percent: msplit.percent,
        repetition: msplit.repetition,
        derived_seed: msplit.derived_seed,
        train: sides.remove("train").unwrap_or_default(),
        test: sides.remove("test").unwrap_or_default(),
    };
    let path = out_dir.join(SPLIT_MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&file).expect("split manifest serializes");
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(path)
}
