//! Closed-form stand-in for a trained detector.
//!
//! With injected leakage fraction `f` and pre-existing leakage `lambda`, the
//! effective exposure is `e = lambda + (1 - lambda) * f` and each modelled
//! metric is `p0 + (pmax - p0) * e^alpha`. Small `alpha` gives the fast early
//! rise of a clean split; a large `lambda` starts the curve near saturation,
//! which is what an already-leaky split looks like.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RunRecord, RunSource, RunnerError};
use crate::dataset::SplitSpec;
use crate::detmetrics::{EvalMetrics, Metric};
use crate::leakage::{stable_mix, MaterializedSplit};

/// Metrics the mock models directly; F1 is derived from precision and recall.
pub const MODELLED: [Metric; 3] = [Metric::Precision, Metric::Recall, Metric::Map50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockParams {
    pub p0: BTreeMap<Metric, f64>,
    pub pmax: BTreeMap<Metric, f64>,
    pub alpha: f64,
    pub lambda: f64,
    pub noise_eps: f64,
    pub seed: u64,
}

impl MockParams {
    /// Clean split: no pre-existing leakage.
    ///
    /// Baselines follow the shape of a leakage-free corpus (mAP from 0.486,
    /// F1 from about 0.49 to 0.80).
    pub fn clean() -> Self {
        Self {
            p0: [(Metric::Precision, 0.55), (Metric::Recall, 0.44), (Metric::Map50, 0.486)].into(),
            pmax: [(Metric::Precision, 0.85), (Metric::Recall, 0.755), (Metric::Map50, 0.84)].into(),
            alpha: 0.45,
            lambda: 0.0,
            noise_eps: 0.002,
            seed: 0x5eed,
        }
    }

    /// Same detector on a split that already shares 60% of its test content.
    pub fn leaky() -> Self {
        Self { lambda: 0.6, ..Self::clean() }
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |m: String| Err(RunnerError::InvalidMockParams(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {} must be > 0", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0,1]", self.lambda));
        }
        if !(self.noise_eps >= 0.0 && self.noise_eps.is_finite()) {
            return bad(format!("noise_eps {} must be >= 0", self.noise_eps));
        }
        for m in MODELLED {
            let (Some(&lo), Some(&hi)) = (self.p0.get(&m), self.pmax.get(&m)) else {
                return bad(format!("missing p0/pmax for {m}"));
            };
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return bad(format!("{m}: need 0 <= p0 ({lo}) <= pmax ({hi}) <= 1"));
            }
        }
        Ok(())
    }

    /// Noise-free value of a modelled metric at injected leakage `f`.
    pub fn level(&self, metric: Metric, f: f64) -> f64 {
        let e = (self.lambda + (1.0 - self.lambda) * f).clamp(0.0, 1.0);
        let lo = self.p0[&metric];
        let hi = self.pmax[&metric];
        lo + (hi - lo) * e.powf(self.alpha)
    }

    /// Noise-free metrics at injected leakage `f`.
    pub fn expected(&self, f: f64) -> EvalMetrics {
        EvalMetrics::from_prf(
            self.level(Metric::Precision, f),
            self.level(Metric::Recall, f),
            self.level(Metric::Map50, f),
        )
    }
}

pub fn mock_evaluate(
    msplit: &MaterializedSplit,
    base_split: &SplitSpec,
    params: &MockParams,
) -> Result<RunRecord, RunnerError> {
    params.validate()?;
    let f = if base_split.test_ids.is_empty() {
        0.0
    } else {
        msplit.train_ids.intersection(&base_split.test_ids).count() as f64 / base_split.test_ids.len() as f64
    };

    let mut rng = ChaCha8Rng::seed_from_u64(stable_mix(params.seed, msplit.percent, msplit.repetition));
    let mut value = |m: Metric| {
        let jitter = if params.noise_eps > 0.0 {
            rng.gen_range(-params.noise_eps..=params.noise_eps)
        } else {
            0.0
        };
        (params.level(m, f) + jitter).clamp(0.0, 1.0)
    };
    let precision = value(Metric::Precision);
    let recall = value(Metric::Recall);
    let map50 = value(Metric::Map50);

    Ok(RunRecord {
        percent: msplit.percent,
        repetition: msplit.repetition,
        metrics: EvalMetrics::from_prf(precision, recall, map50),
        source: RunSource::Mock,
        wall_time: 0.0,
    })
}
