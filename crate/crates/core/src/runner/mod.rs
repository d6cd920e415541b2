//! Executes a leakage plan: one train/evaluate cycle per `(percent, repetition)`.
//!
//! Results are journaled as they complete, so a rerun over the same journal
//! only executes what is still missing.

mod adapter;
mod journal;
mod mock;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetManifest, SplitSpec};
use crate::detmetrics::EvalMetrics;
use crate::leakage::{apply_step, LeakageError, LeakagePlan, LeakageStep};

pub use adapter::{parse_metrics_file, run_external, AdapterConfig, METRICS_PLACEHOLDER, SPLIT_PLACEHOLDER};
pub use journal::{read_journal, Journal, JournalEntry};
pub use mock::{mock_evaluate, MockParams, MODELLED};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid adapter config: {0}")]
    InvalidAdapter(String),
    #[error("invalid mock params: {0}")]
    InvalidMockParams(String),
    #[error("cannot start {command}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("adapter exited with {code:?}\n{output_tail}")]
    ExternalCommandFailed { code: Option<i32>, output_tail: String },
    #[error("adapter timed out after {secs}s\n{output_tail}")]
    Timeout { secs: f64, output_tail: String },
    #[error("adapter wrote no metrics file at {path}\n{output_tail}")]
    MissingMetrics { path: PathBuf, output_tail: String },
    #[error("malformed metrics file {path}: {message}")]
    MalformedMetrics { path: PathBuf, message: String },
    #[error("plan was made for split {plan}, not {split}")]
    ProvenanceMismatch { plan: String, split: String },
    #[error(transparent)]
    Leakage(#[from] LeakageError),
    #[error("journal: {0}")]
    Journal(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunSource {
    External,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub percent: u32,
    pub repetition: u32,
    pub metrics: EvalMetrics,
    pub source: RunSource,
    /// Seconds; always 0 for mock runs so journals replay byte-identically.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub percent: u32,
    pub repetition: u32,
    pub error: String,
}

#[derive(Debug, Clone)]
pub enum RunMode {
    Mock(MockParams),
    External { adapter: AdapterConfig, manifest: DatasetManifest },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub journal_path: PathBuf,
    /// Per-run scratch directories for external mode.
    pub runs_dir: PathBuf,
    /// Worker threads; `None` means CPU count for mock and 1 for external
    /// adapters that are not declared parallel-safe.
    pub jobs: Option<usize>,
    /// Stop after this many executions (the rest stays pending in the journal).
    pub limit: Option<usize>,
}

impl RunConfig {
    pub fn in_dir(work_dir: &Path) -> Self {
        Self {
            journal_path: work_dir.join("runs.jsonl"),
            runs_dir: work_dir.join("runs"),
            jobs: None,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// Every successful run in the journal, sorted by percent then repetition.
    pub records: Vec<RunRecord>,
    /// Failures from this invocation.
    pub failures: Vec<RunFailure>,
    pub executed: usize,
}

fn run_one(
    step: &LeakageStep,
    split: &SplitSpec,
    mode: &RunMode,
    runs_dir: &Path,
) -> Result<RunRecord, RunnerError> {
    let msplit = apply_step(split, step)?;
    match mode {
        RunMode::Mock(params) => mock_evaluate(&msplit, split, params),
        RunMode::External { adapter, manifest } => {
            let dir = runs_dir.join(format!("p{:03}_r{:03}", step.percent, step.repetition));
            run_external(&msplit, manifest, adapter, &dir)
        }
    }
}

pub fn run_plan(
    plan: &LeakagePlan,
    split: &SplitSpec,
    mode: &RunMode,
    config: &RunConfig,
) -> Result<RunOutcome, RunnerError> {
    let split_ref = split.content_hash();
    if plan.base_split_ref != split_ref {
        return Err(RunnerError::ProvenanceMismatch { plan: plan.base_split_ref.clone(), split: split_ref });
    }
    match mode {
        RunMode::Mock(p) => p.validate()?,
        RunMode::External { adapter, .. } => adapter.validate()?,
    }

    let mut done: BTreeMap<(u32, u32), RunRecord> = BTreeMap::new();
    for entry in read_journal(&config.journal_path)? {
        if let JournalEntry::Record(r) = entry {
            done.entry((r.percent, r.repetition)).or_insert(r);
        }
    }

    let planned: BTreeSet<(u32, u32)> = plan.steps.iter().map(|s| (s.percent, s.repetition)).collect();
    done.retain(|k, _| planned.contains(k));

    let mut pending: Vec<&LeakageStep> =
        plan.steps.iter().filter(|s| !done.contains_key(&(s.percent, s.repetition))).collect();
    if let Some(limit) = config.limit {
        pending.truncate(limit);
    }

    let jobs = config.jobs.unwrap_or(match mode {
        RunMode::Mock(_) => rayon::current_num_threads(),
        RunMode::External { adapter, .. } if adapter.parallel_safe => rayon::current_num_threads(),
        RunMode::External { .. } => 1,
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| RunnerError::Journal(format!("thread pool: {e}")))?;

    let journal = Journal::open(&config.journal_path)?;
    let results: Vec<Result<Result<RunRecord, RunFailure>, RunnerError>> = pool.install(|| {
        pending
            .par_iter()
            .map(|step| {
                let entry = match run_one(step, split, mode, &config.runs_dir) {
                    Ok(record) => JournalEntry::Record(record),
                    Err(e) => {
                        log::warn!("run {}%/{} failed: {e}", step.percent, step.repetition);
                        JournalEntry::Failure(RunFailure {
                            percent: step.percent,
                            repetition: step.repetition,
                            error: e.to_string(),
                        })
                    }
                };
                journal.append(&entry)?;
                Ok(match entry {
                    JournalEntry::Record(r) => Ok(r),
                    JournalEntry::Failure(f) => Err(f),
                })
            })
            .collect()
    });

    let executed = results.len();
    let mut failures = Vec::new();
    for r in results {
        match r? {
            Ok(record) => {
                done.insert((record.percent, record.repetition), record);
            }
            Err(f) => failures.push(f),
        }
    }
    failures.sort_by_key(|f| (f.percent, f.repetition));

    Ok(RunOutcome { records: done.into_values().collect(), failures, executed })
}

/// Successful records in a journal, deduplicated and sorted.
pub fn load_records(journal_path: &Path) -> Result<(Vec<RunRecord>, Vec<RunFailure>), RunnerError> {
    let mut records: BTreeMap<(u32, u32), RunRecord> = BTreeMap::new();
    let mut failures: BTreeMap<(u32, u32), RunFailure> = BTreeMap::new();
    for entry in read_journal(journal_path)? {
        match entry {
            JournalEntry::Record(r) => {
                records.entry((r.percent, r.repetition)).or_insert(r);
            }
            JournalEntry::Failure(f) => {
                failures.insert((f.percent, f.repetition), f);
            }
        }
    }
    failures.retain(|k, _| !records.contains_key(k));
    Ok((records.into_values().collect(), failures.into_values().collect()))
}
