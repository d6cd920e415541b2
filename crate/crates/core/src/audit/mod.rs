//! Aggregation of run records, relative-increase rates, and the leakage
//! decision rule.
//!
//! The rate between consecutive steps is `(current - previous) / previous`.
//! A split is flagged when the watched metrics barely move (rate at or below
//! the threshold, 5% by default) while the first 10% and 20% of the test set
//! are leaked into train: a clean split reacts strongly to its first leaked
//! images, an already-leaky one does not.

mod render;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{SplitSpec, StrategyKind};
use crate::detmetrics::{EvalMetrics, Metric};
use crate::leakage::LeakagePlan;
use crate::runner::{RunFailure, RunRecord};
use crate::simindex::SimilarityReport;

pub const DEFAULT_THRESHOLD: f64 = 0.05;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error, PartialEq)]
pub enum AuditError {
    #[error("baseline {metric} at {percent}% is {value}; relative increase undefined")]
    DegenerateBaseline { percent: u32, metric: Metric, value: f64 },
    #[error("relative increase needs a positive previous value, got {0}")]
    NonPositivePrevious(f64),
    #[error("step {percent}% has {successes} successful runs, quorum is {required}")]
    StepInvalid { percent: u32, successes: usize, required: usize },
    #[error("summaries lack required percents {0:?}")]
    MissingPercents(Vec<u32>),
    #[error("inconsistent provenance: {0}")]
    InconsistentProvenance(String),
}

/// `(current - previous) / previous`.
pub fn relative_increase(current: f64, previous: f64) -> Result<f64, AuditError> {
    if !(previous > 0.0) {
        return Err(AuditError::NonPositivePrevious(previous));
    }
    Ok((current - previous) / previous)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub percent: u32,
    pub mean_metrics: EvalMetrics,
    pub n_repetitions: usize,
    /// Rate against the previous summarized step; 0 for the first step.
    pub rel_increase: BTreeMap<Metric, f64>,
}

/// Per-metric arithmetic mean over the records of one percent.
pub fn aggregate_step(percent: u32, records: &[RunRecord], quorum: usize) -> Result<StepSummary, AuditError> {
    let rows: Vec<&RunRecord> = records.iter().filter(|r| r.percent == percent).collect();
    if rows.is_empty() || rows.len() < quorum {
        return Err(AuditError::StepInvalid { percent, successes: rows.len(), required: quorum.max(1) });
    }
    // running mean: identical inputs give that exact value back
    let mean = |m: Metric| {
        rows.iter()
            .enumerate()
            .fold(0.0, |acc, (i, r)| acc + (r.metrics.get(m) - acc) / (i + 1) as f64)
    };

    let mut per_class: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in &rows {
        for (k, v) in &r.metrics.per_class_ap {
            let e = per_class.entry(k.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }

    Ok(StepSummary {
        percent,
        mean_metrics: EvalMetrics {
            precision: mean(Metric::Precision),
            recall: mean(Metric::Recall),
            map50: mean(Metric::Map50),
            f1: mean(Metric::F1),
            per_class_ap: per_class.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect(),
        },
        n_repetitions: rows.len(),
        rel_increase: Metric::ALL.iter().map(|&m| (m, 0.0)).collect(),
    })
}

/// Fills `rel_increase` of each summary against its predecessor. A metric
/// whose previous mean is not positive gets no entry.
pub fn fill_relative_increases(summaries: &mut [StepSummary]) {
    summaries.sort_by_key(|s| s.percent);
    for i in 0..summaries.len() {
        let mut rel = BTreeMap::new();
        for m in Metric::ALL {
            let rate = if i == 0 {
                Some(0.0)
            } else {
                relative_increase(summaries[i].mean_metrics.get(m), summaries[i - 1].mean_metrics.get(m)).ok()
            };
            if let Some(r) = rate {
                rel.insert(m, r);
            }
        }
        summaries[i].rel_increase = rel;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidStep {
    pub percent: u32,
    pub successes: usize,
    pub required: usize,
}

/// Summaries for every percent meeting the quorum, with rates filled in.
pub fn summarize(
    records: &[RunRecord],
    percents: &[u32],
    quorum: usize,
) -> (Vec<StepSummary>, Vec<InvalidStep>) {
    let mut summaries = Vec::new();
    let mut invalid = Vec::new();
    for &p in percents {
        match aggregate_step(p, records, quorum) {
            Ok(s) => summaries.push(s),
            Err(AuditError::StepInvalid { percent, successes, required }) => {
                log::warn!("step {percent}% invalid: {successes} of required {required} runs succeeded");
                invalid.push(InvalidStep { percent, successes, required });
            }
            Err(e) => unreachable!("aggregate_step only fails on quorum: {e}"),
        }
    }
    fill_relative_increases(&mut summaries);
    (summaries, invalid)
}

/// Default quorum: 80% of the planned repetitions, rounded up.
pub fn default_quorum(repetitions: u32) -> usize {
    (repetitions as usize * 8).div_ceil(10).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Combination {
    /// Any watched metric at any watched percent at or below the threshold.
    #[default]
    AnyStepAnyMetric,
    /// Some watched percent where every watched metric is at or below it.
    AnyStepAllMetrics,
    /// Every watched percent has at least one watched metric at or below it.
    AllSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRule {
    pub threshold: f64,
    pub watched_percents: Vec<u32>,
    pub watched_metrics: Vec<Metric>,
    pub combination: Combination,
}

impl Default for VerdictRule {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            watched_percents: vec![10, 20],
            watched_metrics: vec![Metric::Map50, Metric::F1],
            combination: Combination::AnyStepAnyMetric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRate {
    pub percent: u32,
    pub metric: Metric,
    pub rate: f64,
    /// Performance dropped under added leakage.
    pub decrease: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub detected: bool,
    pub triggering_steps: Vec<StepRate>,
    /// Every watched rate that was evaluated.
    pub evaluated: Vec<StepRate>,
    pub rule: VerdictRule,
}

impl Verdict {
    /// CI exit code: 0 clean, 3 leakage detected.
    pub fn exit_code(&self) -> i32 {
        if self.detected {
            3
        } else {
            0
        }
    }

    pub fn label(&self) -> &'static str {
        if self.detected {
            "Detected"
        } else {
            "NotDetected"
        }
    }
}

pub fn detect_leakage(summaries: &[StepSummary], rule: &VerdictRule) -> Result<Verdict, AuditError> {
    let mut sorted: Vec<&StepSummary> = summaries.iter().collect();
    sorted.sort_by_key(|s| s.percent);
    let present: BTreeSet<u32> = sorted.iter().map(|s| s.percent).collect();
    let missing: Vec<u32> = std::iter::once(0)
        .chain(rule.watched_percents.iter().copied())
        .filter(|p| !present.contains(p))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !missing.is_empty() {
        return Err(AuditError::MissingPercents(missing));
    }

    let mut evaluated = Vec::new();
    for &percent in &rule.watched_percents {
        let pos = sorted.iter().position(|s| s.percent == percent).expect("presence checked");
        if pos == 0 {
            return Err(AuditError::MissingPercents(vec![0]));
        }
        let (prev, cur) = (sorted[pos - 1], sorted[pos]);
        for &metric in &rule.watched_metrics {
            let before = prev.mean_metrics.get(metric);
            let rate = relative_increase(cur.mean_metrics.get(metric), before).map_err(|_| {
                AuditError::DegenerateBaseline { percent: prev.percent, metric, value: before }
            })?;
            evaluated.push(StepRate { percent, metric, rate, decrease: rate < 0.0 });
        }
    }

    let hit = |r: &StepRate| r.rate <= rule.threshold;
    let triggering_steps: Vec<StepRate> = evaluated.iter().filter(|r| hit(r)).cloned().collect();
    let per_percent = |all: bool| -> Vec<bool> {
        rule.watched_percents
            .iter()
            .map(|&p| {
                let mut rates = evaluated.iter().filter(|r| r.percent == p);
                if all {
                    rates.all(hit)
                } else {
                    rates.any(hit)
                }
            })
            .collect()
    };
    let detected = match rule.combination {
        Combination::AnyStepAnyMetric => !triggering_steps.is_empty(),
        Combination::AnyStepAllMetrics => per_percent(true).into_iter().any(|b| b),
        Combination::AllSteps => per_percent(false).into_iter().all(|b| b),
    };

    Ok(Verdict { detected, triggering_steps, evaluated, rule: rule.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub rule: VerdictRule,
    /// Minimum successful repetitions per step.
    pub quorum: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseSplitSummary {
    pub split_ref: String,
    pub strategy: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    pub train_count: usize,
    pub test_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub master_seed: u64,
    pub repetitions: u32,
    pub step_percents: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub dataset: String,
    pub tool_version: String,
    pub base_split: BaseSplitSummary,
    pub plan: PlanSummary,
    pub steps: Vec<StepSummary>,
    pub invalid_steps: Vec<InvalidStep>,
    pub failures: Vec<RunFailure>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<SimilarityReport>,
    pub config: AuditConfig,
    pub notes: Vec<String>,
}

impl AuditReport {
    /// Re-derives the verdict from the report's own summaries and rule.
    pub fn recompute_verdict(&self) -> Result<Verdict, AuditError> {
        detect_leakage(&self.steps, &self.config.rule)
    }
}

/// Summarizes the records of a plan, applies the rule, and assembles the report.
pub fn build_report(
    dataset: &str,
    split: &SplitSpec,
    plan: &LeakagePlan,
    records: &[RunRecord],
    failures: &[RunFailure],
    config: &AuditConfig,
    similarity: Option<SimilarityReport>,
) -> Result<AuditReport, AuditError> {
    let split_ref = split.content_hash();
    if plan.base_split_ref != split_ref {
        return Err(AuditError::InconsistentProvenance(format!(
            "plan base split {} != split {}",
            plan.base_split_ref, split_ref
        )));
    }
    if let Some(sim_ref) = similarity.as_ref().and_then(|s| s.split_ref.as_ref()) {
        if *sim_ref != split_ref {
            return Err(AuditError::InconsistentProvenance(format!(
                "similarity scan split {sim_ref} != split {split_ref}"
            )));
        }
    }
    let planned: BTreeSet<(u32, u32)> = plan.steps.iter().map(|s| (s.percent, s.repetition)).collect();
    if let Some(r) = records.iter().find(|r| !planned.contains(&(r.percent, r.repetition))) {
        return Err(AuditError::InconsistentProvenance(format!(
            "record {}%/{} is not in the plan",
            r.percent, r.repetition
        )));
    }

    let (steps, invalid_steps) = summarize(records, &plan.step_percents, config.quorum);
    let verdict = detect_leakage(&steps, &config.rule)?;

    let mut notes = vec![
        "Each leakage step is sampled independently from the base split; steps are not nested.".to_string(),
    ];
    if verdict.triggering_steps.iter().any(|t| t.decrease) {
        notes.push("Performance decreased under added leakage at a watched step.".to_string());
    }
    for s in &invalid_steps {
        notes.push(format!(
            "Step {}% excluded: {} of {} required runs succeeded.",
            s.percent, s.successes, s.required
        ));
    }

    Ok(AuditReport {
        dataset: dataset.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        base_split: BaseSplitSummary {
            split_ref,
            strategy: split.strategy,
            ratio: split.ratio,
            train_count: split.train_ids.len(),
            test_count: split.test_ids.len(),
        },
        plan: PlanSummary {
            master_seed: plan.master_seed,
            repetitions: plan.repetitions,
            step_percents: plan.step_percents.clone(),
        },
        steps,
        invalid_steps,
        failures: failures.to_vec(),
        verdict,
        similarity,
        config: config.clone(),
        notes,
    })
}
