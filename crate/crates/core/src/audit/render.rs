use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{AuditReport, StepSummary};
use crate::detmetrics::Metric;

pub const AUDIT_JSON: &str = "audit.json";
pub const STEPS_CSV: &str = "steps.csv";
pub const REPORT_MD: &str = "report.md";

fn rel(s: &StepSummary, m: Metric) -> Option<f64> {
    s.rel_increase.get(&m).copied()
}

impl AuditReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per valid step; relative increases are fractions, empty when undefined.
    pub fn steps_csv(&self) -> String {
        let mut out = String::from(
            "percent,precision,recall,map50,f1,rel_precision,rel_recall,rel_map50,rel_f1\n",
        );
        for s in &self.steps {
            let m = &s.mean_metrics;
            let _ = write!(out, "{},{:.6},{:.6},{:.6},{:.6}", s.percent, m.precision, m.recall, m.map50, m.f1);
            for metric in [Metric::Precision, Metric::Recall, Metric::Map50, Metric::F1] {
                match rel(s, metric) {
                    Some(r) => {
                        let _ = write!(out, ",{r:.6}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let v = &self.verdict;
        let _ = writeln!(md, "# Leakage audit: {}\n", self.dataset);
        let _ = writeln!(md, "## Verdict: {}\n", v.label());
        let metrics: Vec<&str> = v.rule.watched_metrics.iter().map(|m| m.name()).collect();
        let _ = writeln!(
            md,
            "Rule: flag when the relative increase of {} at leakage steps {:?}% is at most {:.1}% ({:?}).\n",
            metrics.join(", "),
            v.rule.watched_percents,
            v.rule.threshold * 100.0,
            v.rule.combination
        );
        if v.triggering_steps.is_empty() {
            md.push_str("No watched step stayed under the threshold.\n\n");
        } else {
            md.push_str("Triggering steps:\n\n");
            for t in &v.triggering_steps {
                let _ = writeln!(
                    md,
                    "- {}% {}: {:+.2}%{}",
                    t.percent,
                    t.metric,
                    t.rate * 100.0,
                    if t.decrease { " (decrease)" } else { "" }
                );
            }
            md.push('\n');
        }

        let b = &self.base_split;
        md.push_str("## Base split\n\n");
        let _ = writeln!(md, "- reference: `{}`", b.split_ref);
        let _ = writeln!(md, "- strategy: {:?}", b.strategy);
        if let Some(r) = b.ratio {
            let _ = writeln!(md, "- ratio: {r}");
        }
        let _ = writeln!(md, "- train images: {}", b.train_count);
        let _ = writeln!(md, "- test images: {}", b.test_count);
        let _ = writeln!(
            md,
            "- plan: seed {:#x}, {} repetitions per step\n",
            self.plan.master_seed, self.plan.repetitions
        );

        md.push_str("## Metrics per leakage step\n\n");
        md.push_str("| Step | Leakage | Precision | Recall | mAP@0.5 | F1 | Runs |\n");
        md.push_str("|---:|---:|---:|---:|---:|---:|---:|\n");
        for (i, s) in self.steps.iter().enumerate() {
            let m = &s.mean_metrics;
            let _ = writeln!(
                md,
                "| {} | {}% | {:.3} | {:.3} | {:.3} | {:.3} | {} |",
                i + 1,
                s.percent,
                m.precision,
                m.recall,
                m.map50,
                m.f1,
                s.n_repetitions
            );
        }

        md.push_str("\n## Relative increase per step\n\n");
        md.push_str("| Step | Leakage | mAP@0.5 | F1 | Precision | Recall |\n");
        md.push_str("|---:|---:|---:|---:|---:|---:|\n");
        let pct = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |r| format!("{:.2}%", r * 100.0));
        for (i, s) in self.steps.iter().enumerate() {
            let _ = writeln!(
                md,
                "| {} | {}% | {} | {} | {} | {} |",
                i + 1,
                s.percent,
                pct(rel(s, Metric::Map50)),
                pct(rel(s, Metric::F1)),
                pct(rel(s, Metric::Precision)),
                pct(rel(s, Metric::Recall))
            );
        }
        md.push('\n');

        if let Some(sim) = &self.similarity {
            md.push_str("## Cross-split near duplicates\n\n");
            md.push_str(&sim.to_markdown(true));
            md.push('\n');
        }

        if !self.failures.is_empty() {
            md.push_str("## Failed runs\n\n");
            for f in &self.failures {
                let first = f.error.lines().next().unwrap_or("");
                let _ = writeln!(md, "- {}% rep {}: {}", f.percent, f.repetition, first);
            }
            md.push('\n');
        }

        if !self.notes.is_empty() {
            md.push_str("## Notes\n\n");
            for n in &self.notes {
                let _ = writeln!(md, "- {n}");
            }
            md.push('\n');
        }
        let _ = writeln!(md, "_leakaudit {}_", self.tool_version);
        md
    }

    /// Writes `audit.json`, `steps.csv` and `report.md` into `dir`.
    pub fn write_all(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let files = [
            (AUDIT_JSON, self.to_json()),
            (STEPS_CSV, self.steps_csv()),
            (REPORT_MD, self.to_markdown()),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }
}
