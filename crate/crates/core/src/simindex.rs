//! Hamming-radius search over 64-bit hashes and cross-split near-duplicate scans.
//!
//! [`HashIndex`] is a multi-index hash: the 64 bits are cut into `bands`
//! contiguous bands and each band gets an exact-match table. Two hashes within
//! distance `r` agree to within `r / bands` bits on at least one band
//! (pigeonhole), so probing every band key within that many bit flips and then
//! verifying the full distance is exact for every radius. When the probe set
//! would be larger than the corpus the query falls back to a linear scan.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phash::hamming;

pub const DEFAULT_BANDS: usize = 8;
pub const DEFAULT_MAX_DIST: u32 = 10;
pub const DEFAULT_PAIR_CAP: usize = 100_000;
/// Auto scans use brute force at or below this many train×test pairs.
pub const DEFAULT_BRUTE_FORCE_PAIRS: u64 = 5_000 * 5_000;

#[derive(Debug, Error, PartialEq)]
pub enum SimIndexError {
    #[error("cannot build an index over zero hashes")]
    EmptyInput,
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("radius {0} outside 0..=64")]
    RadiusOutOfRange(u32),
    #[error("band count {0} outside 1..=64")]
    BadBands(usize),
}

#[derive(Debug, Clone, Copy)]
struct Band {
    shift: u32,
    mask: u64,
    len: u32,
}

#[derive(Debug, Clone)]
pub struct HashIndex {
    ids: Vec<String>,
    codes: Vec<u64>,
    bands: Vec<Band>,
    tables: Vec<HashMap<u64, Vec<u32>>>,
}

fn layout(bands: usize) -> Vec<Band> {
    let base = 64 / bands as u32;
    let extra = 64 % bands as u32;
    let mut shift = 0;
    (0..bands as u32)
        .map(|b| {
            let len = base + u32::from(b < extra);
            let mask = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
            let band = Band { shift, mask, len };
            shift += len;
            band
        })
        .collect()
}

/// Band count used by automatic scans for a given radius.
pub fn choose_bands(radius: u32) -> usize {
    match radius {
        0..=7 => DEFAULT_BANDS,
        8..=10 => 11,
        r => (r as usize + 1).min(64),
    }
}

pub fn build_index(hashes: &BTreeMap<String, u64>, bands: usize) -> Result<HashIndex, SimIndexError> {
    if hashes.is_empty() {
        return Err(SimIndexError::EmptyInput);
    }
    if !(1..=64).contains(&bands) {
        return Err(SimIndexError::BadBands(bands));
    }
    let layout = layout(bands);
    let mut tables = vec![HashMap::new(); bands];
    let mut ids = Vec::with_capacity(hashes.len());
    let mut codes = Vec::with_capacity(hashes.len());
    for (slot, (id, &code)) in hashes.iter().enumerate() {
        for (table, band) in tables.iter_mut().zip(&layout) {
            table.entry((code >> band.shift) & band.mask).or_insert_with(Vec::new).push(slot as u32);
        }
        ids.push(id.clone());
        codes.push(code);
    }
    Ok(HashIndex { ids, codes, bands: layout, tables })
}

fn binomial(n: u32, k: u32) -> u64 {
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(u64::from(n - i)) / u64::from(i + 1))
}

/// Calls `f` for every value within `flips` bit flips of `key` in a `len`-bit field.
fn for_each_neighbor(key: u64, len: u32, flips: u32, f: &mut impl FnMut(u64)) {
    fn go(key: u64, from: u32, len: u32, left: u32, f: &mut impl FnMut(u64)) {
        f(key);
        if left == 0 {
            return;
        }
        for bit in from..len {
            go(key ^ (1u64 << bit), bit + 1, len, left - 1, f);
        }
    }
    go(key, 0, len, flips, f);
}

impl HashIndex {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    /// Entries within `radius` of `probe`, ascending by distance then id.
    pub fn query_within(&self, probe: u64, radius: u32) -> Result<Vec<(String, u32)>, SimIndexError> {
        let mut hits = self.query_slots(probe, radius)?;
        hits.sort_unstable_by(|a, b| a.1.cmp(&b.1).then_with(|| self.ids[a.0].cmp(&self.ids[b.0])));
        Ok(hits.into_iter().map(|(slot, d)| (self.ids[slot].clone(), d)).collect())
    }

    fn query_slots(&self, probe: u64, radius: u32) -> Result<Vec<(usize, u32)>, SimIndexError> {
        if radius > 64 {
            return Err(SimIndexError::RadiusOutOfRange(radius));
        }
        let flips = radius / self.bands.len() as u32;
        let probes: u64 = self
            .bands
            .iter()
            .map(|b| (0..=flips.min(b.len)).map(|d| binomial(b.len, d)).sum::<u64>())
            .sum();

        if probes >= self.codes.len() as u64 {
            return Ok(self
                .codes
                .iter()
                .enumerate()
                .filter_map(|(slot, &c)| {
                    let d = hamming(c, probe);
                    (d <= radius).then_some((slot, d))
                })
                .collect());
        }

        let mut candidates = Vec::new();
        for (table, band) in self.tables.iter().zip(&self.bands) {
            let key = (probe >> band.shift) & band.mask;
            for_each_neighbor(key, band.len, flips, &mut |k| {
                if let Some(slots) = table.get(&k) {
                    candidates.extend_from_slice(slots);
                }
            });
        }
        candidates.sort_unstable();
        candidates.dedup();
        Ok(candidates
            .into_iter()
            .filter_map(|slot| {
                let d = hamming(self.codes[slot as usize], probe);
                (d <= radius).then_some((slot as usize, d))
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMethod {
    /// Brute force for small corpora, banded index otherwise.
    Auto,
    BruteForce,
    Index { bands: usize },
}

#[derive(Debug, Clone)]
pub struct ScanOptions {
    pub max_dist: u32,
    pub pair_cap: usize,
    pub method: ScanMethod,
    pub brute_force_pairs: u64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            max_dist: DEFAULT_MAX_DIST,
            pair_cap: DEFAULT_PAIR_CAP,
            method: ScanMethod::Auto,
            brute_force_pairs: DEFAULT_BRUTE_FORCE_PAIRS,
        }
    }
}

/// Train×test pairs within `max_dist`, as a full histogram plus a capped pair list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub max_dist: u32,
    /// Every distance `0..=max_dist` is present, zeros included.
    pub histogram: BTreeMap<u32, u64>,
    pub total: u64,
    /// `(train_id, test_id, distance)`, ascending by distance then ids.
    pub pairs: Vec<(String, String, u32)>,
    pub truncated: bool,
    #[serde(default)]
    pub pair_cap: usize,
    #[serde(default)]
    pub train_count: usize,
    #[serde(default)]
    pub test_count: usize,
    /// Content hash of the split the two sides came from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_ref: Option<String>,
}

#[derive(Default)]
struct Partial {
    histogram: Vec<u64>,
    pairs: Vec<(u32, usize, usize)>,
}

impl Partial {
    fn new(max_dist: u32) -> Self {
        Self { histogram: vec![0; max_dist as usize + 1], pairs: Vec::new() }
    }

    fn trim(&mut self, cap: usize) {
        if self.pairs.len() > cap.saturating_mul(2).max(1024) {
            self.pairs.sort_unstable();
            self.pairs.truncate(cap);
        }
    }

    fn merge(mut self, other: Partial, cap: usize) -> Partial {
        for (a, b) in self.histogram.iter_mut().zip(other.histogram) {
            *a += b;
        }
        self.pairs.extend(other.pairs);
        self.trim(cap);
        self
    }
}

pub fn cross_split_scan(
    train: &BTreeMap<String, u64>,
    test: &BTreeMap<String, u64>,
    options: &ScanOptions,
) -> Result<SimilarityReport, SimIndexError> {
    if train.is_empty() {
        return Err(SimIndexError::EmptyCorpus("train"));
    }
    if test.is_empty() {
        return Err(SimIndexError::EmptyCorpus("test"));
    }
    let max_dist = options.max_dist;
    if max_dist > 64 {
        return Err(SimIndexError::RadiusOutOfRange(max_dist));
    }
    let cap = options.pair_cap;

    // slots are positions in the sorted id order of each side
    let train_ids: Vec<&String> = train.keys().collect();
    let train_codes: Vec<u64> = train.values().copied().collect();
    let test_entries: Vec<(usize, u64)> = test.values().copied().enumerate().collect();

    let n_pairs = train.len() as u64 * test.len() as u64;
    let method = match options.method {
        ScanMethod::Auto if n_pairs <= options.brute_force_pairs => ScanMethod::BruteForce,
        ScanMethod::Auto => ScanMethod::Index { bands: choose_bands(max_dist) },
        m => m,
    };
    let index = match method {
        ScanMethod::Index { bands } => Some(build_index(train, bands)?),
        _ => None,
    };

    let partial = test_entries
        .par_iter()
        .fold(
            || Partial::new(max_dist),
            |mut acc, &(test_slot, code)| {
                let mut record = |train_slot: usize, d: u32| {
                    acc.histogram[d as usize] += 1;
                    if cap > 0 {
                        acc.pairs.push((d, train_slot, test_slot));
                    }
                };
                match &index {
                    Some(index) => {
                        for (slot, d) in index.query_slots(code, max_dist).expect("radius checked") {
                            record(slot, d);
                        }
                    }
                    None => {
                        for (slot, &c) in train_codes.iter().enumerate() {
                            let d = hamming(c, code);
                            if d <= max_dist {
                                record(slot, d);
                            }
                        }
                    }
                }
                acc.trim(cap);
                acc
            },
        )
        .reduce(|| Partial::new(max_dist), |a, b| a.merge(b, cap));

    let test_ids: Vec<&String> = test.keys().collect();
    let mut pairs = partial.pairs;
    pairs.sort_unstable();
    let total: u64 = partial.histogram.iter().sum();
    let truncated = total > cap as u64;
    pairs.truncate(cap);

    Ok(SimilarityReport {
        max_dist,
        histogram: partial.histogram.into_iter().enumerate().map(|(d, n)| (d as u32, n)).collect(),
        total,
        pairs: pairs
            .into_iter()
            .map(|(d, tr, te)| (train_ids[tr].clone(), test_ids[te].clone(), d))
            .collect(),
        truncated,
        pair_cap: cap,
        train_count: train.len(),
        test_count: test.len(),
        split_ref: None,
    })
}

impl SimilarityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Histogram grouped for comparison with tables that list even distances
    /// only: odd distance `d` is counted under `d + 1`.
    pub fn even_buckets(&self) -> BTreeMap<u32, u64> {
        let mut out = BTreeMap::new();
        for (&d, &n) in &self.histogram {
            *out.entry(d + d % 2).or_insert(0) += n;
        }
        out
    }

    /// Two-column table of non-zero distance counts with a total row.
    pub fn to_markdown(&self, even_buckets: bool) -> String {
        let rows = if even_buckets { self.even_buckets() } else { self.histogram.clone() };
        let mut s = String::new();
        let _ = writeln!(s, "| pHash distance | # of occurrences |");
        let _ = writeln!(s, "|---:|---:|");
        for (d, n) in rows.iter().filter(|(_, &n)| n > 0) {
            let _ = writeln!(s, "| {d} | {n} |");
        }
        let _ = writeln!(s, "| Total | {} |", self.total);
        if self.truncated {
            let _ = writeln!(s, "\nPair list truncated to the first {} pairs.", self.pair_cap);
        }
        s
    }
}
