//! Optional TOML config file. Every key mirrors a command-line flag; flags win.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    pub dataset: DatasetSection,
    pub split: SplitSection,
    pub plan: PlanSection,
    pub run: RunSection,
    pub scan: ScanSection,
    pub verdict: VerdictSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub root: Option<PathBuf>,
    pub format: Option<String>,
    pub classes: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub strategy: Option<String>,
    pub ratio: Option<f64>,
    pub train_count: Option<usize>,
    pub train_sequences: Option<Vec<String>>,
    pub test_sequences: Option<Vec<String>>,
    pub train_list: Option<PathBuf>,
    pub test_list: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub step: Option<u32>,
    pub percents: Option<Vec<u32>>,
    pub repetitions: Option<u32>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mock: Option<String>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub noise: Option<f64>,
    pub mock_seed: Option<u64>,
    pub adapter: Option<String>,
    pub timeout_secs: Option<f64>,
    pub parallel_safe: Option<bool>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub max_dist: Option<u32>,
    pub pair_cap: Option<usize>,
    pub bands: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerdictSection {
    pub threshold: Option<f64>,
    pub watched_percents: Option<Vec<u32>>,
    pub watched_metrics: Option<Vec<String>>,
    pub combination: Option<String>,
    pub quorum: Option<usize>,
}

impl ToolConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let cfg: ToolConfig = toml::from_str(
            r#"
            [dataset]
            root = "data"
            [plan]
            step = 10
            repetitions = 3
            [verdict]
            watched_metrics = ["map50", "f1"]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.dataset.root.as_deref(), Some(Path::new("data")));
        assert_eq!(cfg.plan.repetitions, Some(3));
        assert_eq!(cfg.verdict.watched_metrics.unwrap().len(), 2);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<ToolConfig>("[plan]\nrepetition = 3\n").is_err());
    }
}
