//! Split-leakage auditing for object-detection datasets.
//!
//! The pipeline: load a dataset manifest, hash images and look for
//! near-duplicates across the train/test boundary, plan controlled leakage
//! steps, run a detector (or a closed-form mock) at each step, and decide from
//! the relative metric gains whether the base split was already leaky.

pub mod audit;
pub mod dataset;
pub mod detmetrics;
pub mod leakage;
pub mod phash;
pub mod runner;
pub mod simindex;
