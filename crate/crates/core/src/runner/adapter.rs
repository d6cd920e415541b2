//! External detector adapter: a subprocess that trains on a split manifest
//! and writes a metrics JSON file.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{RunRecord, RunSource, RunnerError};
use crate::dataset::DatasetManifest;
use crate::detmetrics::EvalMetrics;
use crate::leakage::{materialize_to_disk, MaterializeMode, MaterializedSplit};

pub const SPLIT_PLACEHOLDER: &str = "{split_manifest}";
pub const METRICS_PLACEHOLDER: &str = "{out_metrics}";
const TAIL_LINES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Whitespace-separated command; placeholders are substituted per token.
    pub command: String,
    pub timeout_secs: f64,
    #[serde(default)]
    pub working_dir: Option<PathBuf>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    /// Whether several runs may execute at once.
    #[serde(default)]
    pub parallel_safe: bool,
}

impl AdapterConfig {
    pub fn new(command: impl Into<String>, timeout_secs: f64) -> Self {
        Self {
            command: command.into(),
            timeout_secs,
            working_dir: None,
            env: BTreeMap::new(),
            parallel_safe: false,
        }
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        for p in [SPLIT_PLACEHOLDER, METRICS_PLACEHOLDER] {
            if !self.command.contains(p) {
                return Err(RunnerError::InvalidAdapter(format!("command lacks {p}")));
            }
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(RunnerError::InvalidAdapter(format!("timeout {} must be > 0", self.timeout_secs)));
        }
        if self.command.split_whitespace().next().is_none() {
            return Err(RunnerError::InvalidAdapter("empty command".into()));
        }
        Ok(())
    }

    fn argv(&self, split_manifest: &Path, out_metrics: &Path) -> Vec<String> {
        let split = split_manifest.to_string_lossy();
        let out = out_metrics.to_string_lossy();
        self.command
            .split_whitespace()
            .map(|tok| tok.replace(SPLIT_PLACEHOLDER, &split).replace(METRICS_PLACEHOLDER, &out))
            .collect()
    }
}

#[derive(Deserialize)]
struct MetricsFile {
    precision: f64,
    recall: f64,
    map50: f64,
    f1: f64,
    #[serde(default)]
    per_class_ap: BTreeMap<String, f64>,
}

/// Parses an adapter metrics file; every value must lie in `[0,1]`.
///
/// F1 is taken as reported: detectors that average per-class F1 do not
/// satisfy `f1 = 2PR/(P+R)` on the pooled numbers.
pub fn parse_metrics_file(path: &Path) -> Result<EvalMetrics, RunnerError> {
    let text = fs::read_to_string(path)
        .map_err(|e| RunnerError::MalformedMetrics { path: path.to_path_buf(), message: e.to_string() })?;
    let m: MetricsFile = serde_json::from_str(&text)
        .map_err(|e| RunnerError::MalformedMetrics { path: path.to_path_buf(), message: e.to_string() })?;
    let metrics = EvalMetrics {
        precision: m.precision,
        recall: m.recall,
        map50: m.map50,
        f1: m.f1,
        per_class_ap: m.per_class_ap,
    };
    if !metrics.in_range() {
        return Err(RunnerError::MalformedMetrics {
            path: path.to_path_buf(),
            message: format!(
                "values outside [0,1]: precision={} recall={} map50={} f1={}",
                metrics.precision, metrics.recall, metrics.map50, metrics.f1
            ),
        });
    }
    Ok(metrics)
}

fn spawn_tail<R: Read + Send + 'static>(stream: R) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut tail = VecDeque::with_capacity(TAIL_LINES);
        for line in BufReader::new(stream).lines().map_while(Result::ok) {
            if tail.len() == TAIL_LINES {
                tail.pop_front();
            }
            tail.push_back(line);
        }
        Vec::from(tail).join("\n")
    })
}

/// Materializes `msplit` into `run_dir`, invokes the adapter, and reads back
/// its metrics.
pub fn run_external(
    msplit: &MaterializedSplit,
    manifest: &DatasetManifest,
    adapter: &AdapterConfig,
    run_dir: &Path,
) -> Result<RunRecord, RunnerError> {
    adapter.validate()?;
    let started = Instant::now();
    let split_manifest = materialize_to_disk(msplit, manifest, run_dir, MaterializeMode::ManifestOnly, true)?;
    let out_metrics = run_dir.join("metrics.json");

    let argv = adapter.argv(&split_manifest, &out_metrics);
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..]).envs(&adapter.env).stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
    if let Some(dir) = &adapter.working_dir {
        cmd.current_dir(dir);
    }
    let mut child = cmd
        .spawn()
        .map_err(|source| RunnerError::Spawn { command: argv[0].clone(), source })?;
    let stdout = spawn_tail(child.stdout.take().expect("piped stdout"));
    let stderr = spawn_tail(child.stderr.take().expect("piped stderr"));

    let deadline = Duration::from_secs_f64(adapter.timeout_secs);
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if started.elapsed() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            Ok(None) => thread::sleep(Duration::from_millis(10)),
            Err(source) => return Err(RunnerError::Spawn { command: argv[0].clone(), source }),
        }
    };
    let stdout_tail = stdout.join().unwrap_or_default();
    let stderr_tail = stderr.join().unwrap_or_default();
    let output_tail = if stderr_tail.is_empty() { stdout_tail } else { stderr_tail };

    let Some(status) = status else {
        return Err(RunnerError::Timeout { secs: adapter.timeout_secs, output_tail });
    };
    if !status.success() {
        return Err(RunnerError::ExternalCommandFailed { code: status.code(), output_tail });
    }
    if !out_metrics.is_file() {
        return Err(RunnerError::MissingMetrics { path: out_metrics, output_tail });
    }
    let metrics = parse_metrics_file(&out_metrics)?;
    Ok(RunRecord {
        percent: msplit.percent,
        repetition: msplit.repetition,
        metrics,
        source: RunSource::External,
        wall_time: started.elapsed().as_secs_f64(),
    })
}
