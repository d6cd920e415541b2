//! 64-bit DCT perceptual hash.
//!
//! Pipeline: luminance, area-averaged resample to 32×32, 2-D DCT-II, keep
//! the low-frequency 8×8 block, threshold every coefficient against the
//! median of the 63 AC terms. Bit `i` of the 8×8 block (row-major) is stored
//! at bit position `63 - i`, so the hex form reads in block order.
//!
//! A flat image has no AC energy: every AC bit is 0 and only the DC bit can be
//! set, giving [`FLAT_NONBLACK_HASH`] for any non-black flat image and 0 for
//! black.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::sync::OnceLock;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetManifest, ImageRecord};

const RESAMPLE: usize = 32;
const BLOCK: usize = 8;
/// Coefficients this close to zero are rounding residue of the DCT.
const COEFF_EPS: f64 = 1e-9;

/// Hash of any flat image brighter than black: only the DC bit set.
pub const FLAT_NONBLACK_HASH: u64 = 1 << 63;

#[derive(Debug, Error)]
pub enum PhashError {
    #[error("image has zero width or height")]
    ZeroSized,
    #[error("raster length {len} does not match {width}x{height}")]
    BadRaster { width: usize, height: usize, len: usize },
    #[error("every one of {0} images failed to hash")]
    AllFailed(usize),
    #[error("malformed hash csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayscaleRaster {
    width: usize,
    height: usize,
    samples: Vec<f64>,
}

impl GrayscaleRaster {
    /// Row-major luminance samples in `[0,1]`.
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Result<Self, PhashError> {
        if width == 0 || height == 0 {
            return Err(PhashError::ZeroSized);
        }
        if samples.len() != width * height {
            return Err(PhashError::BadRaster { width, height, len: samples.len() });
        }
        Ok(Self { width, height, samples })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

/// ITU-R BT.601 luma, `0.299R + 0.587G + 0.114B`, scaled to `[0,1]`.
pub fn to_grayscale(image: &RgbImage) -> Result<GrayscaleRaster, PhashError> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(PhashError::ZeroSized);
    }
    // integer weights keep white at exactly 1.0
    let samples = image
        .pixels()
        .map(|p| {
            let [r, g, b] = p.0;
            let luma = 299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b);
            f64::from(luma) / 255_000.0
        })
        .collect();
    GrayscaleRaster::new(w as usize, h as usize, samples)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerceptualHash {
    pub bits: u64,
    pub source_id: String,
}

impl PerceptualHash {
    pub fn to_hex(&self) -> String {
        format!("{:016x}", self.bits)
    }
}

pub fn hamming_distance(a: &PerceptualHash, b: &PerceptualHash) -> u32 {
    hamming(a.bits, b.bits)
}

#[inline]
pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

pub fn compute_phash(raster: &GrayscaleRaster, source_id: impl Into<String>) -> PerceptualHash {
    PerceptualHash { bits: phash_bits(raster), source_id: source_id.into() }
}

pub fn phash_bits(raster: &GrayscaleRaster) -> u64 {
    let small = area_resample(raster, RESAMPLE, RESAMPLE);
    let coeffs = low_frequency_dct(&small);

    let mut ac: Vec<f64> = coeffs[1..].to_vec();
    ac.sort_by(f64::total_cmp);
    let median = ac[ac.len() / 2];

    coeffs
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > median)
        .fold(0u64, |bits, (i, _)| bits | (1u64 << (63 - i)))
}

/// Per-output-cell list of `(source index, weight)` for box resampling.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|j| {
            let lo = j as f64 * scale;
            let hi = (j + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

fn area_resample(raster: &GrayscaleRaster, out_w: usize, out_h: usize) -> Vec<f64> {
    let wx = area_weights(raster.width, out_w);
    let wy = area_weights(raster.height, out_h);

    let mut rows = vec![0.0; raster.height * out_w];
    for y in 0..raster.height {
        let src = &raster.samples[y * raster.width..(y + 1) * raster.width];
        for (ox, weights) in wx.iter().enumerate() {
            rows[y * out_w + ox] = weights.iter().map(|&(i, w)| src[i] * w).sum();
        }
    }

    let mut out = vec![0.0; out_w * out_h];
    for (oy, weights) in wy.iter().enumerate() {
        for ox in 0..out_w {
            out[oy * out_w + ox] = weights.iter().map(|&(y, w)| rows[y * out_w + ox] * w).sum();
        }
    }
    out
}

/// First `BLOCK` rows of the orthonormal DCT-II matrix of size `RESAMPLE`.
fn dct_rows() -> &'static [[f64; RESAMPLE]; BLOCK] {
    static ROWS: OnceLock<[[f64; RESAMPLE]; BLOCK]> = OnceLock::new();
    ROWS.get_or_init(|| {
        let n = RESAMPLE as f64;
        let mut m = [[0.0; RESAMPLE]; BLOCK];
        for (u, row) in m.iter_mut().enumerate() {
            let alpha = if u == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = alpha
                    * (std::f64::consts::PI * (2.0 * x as f64 + 1.0) * u as f64 / (2.0 * n)).cos();
            }
        }
        m
    })
}

/// Top-left 8×8 block of the 2-D DCT-II of a 32×32 input, row-major.
fn low_frequency_dct(input: &[f64]) -> [f64; BLOCK * BLOCK] {
    let m = dct_rows();
    // partial = M8 · F   (8×32)
    let mut partial = [[0.0; RESAMPLE]; BLOCK];
    for u in 0..BLOCK {
        for x in 0..RESAMPLE {
            partial[u][x] = (0..RESAMPLE).map(|y| m[u][y] * input[y * RESAMPLE + x]).sum();
        }
    }
    // coeffs = partial · M8ᵀ   (8×8)
    let mut out = [0.0; BLOCK * BLOCK];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            let c: f64 = (0..RESAMPLE).map(|x| partial[u][x] * m[v][x]).sum();
            out[u * BLOCK + v] = if c.abs() < COEFF_EPS { 0.0 } else { c };
        }
    }
    out
}

/// Decodes the pixels behind a manifest record.
pub trait ImageLoader: Sync {
    fn load(&self, record: &ImageRecord) -> Result<RgbImage, String>;
}

/// Reads `record.image_path` from disk with the `image` crate.
#[derive(Debug, Default, Clone)]
pub struct FsImageLoader {
    /// Prepended to relative image paths.
    pub base_dir: Option<PathBuf>,
}

impl ImageLoader for FsImageLoader {
    fn load(&self, record: &ImageRecord) -> Result<RgbImage, String> {
        let path = record.image_path.clone().unwrap_or_else(|| PathBuf::from(&record.id));
        let path = match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path,
        };
        image::open(&path)
            .map(|img| img.to_rgb8())
            .map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusHashes {
    pub hashes: BTreeMap<String, PerceptualHash>,
    pub failures: BTreeMap<String, String>,
}

impl CorpusHashes {
    pub fn bits(&self) -> BTreeMap<String, u64> {
        self.hashes.iter().map(|(k, h)| (k.clone(), h.bits)).collect()
    }
}

/// Hashes the given ids in parallel. Per-id failures are collected; the call
/// only fails when nothing could be hashed.
pub fn hash_corpus<'a>(
    manifest: &DatasetManifest,
    ids: impl IntoIterator<Item = &'a String>,
    loader: &dyn ImageLoader,
) -> Result<CorpusHashes, PhashError> {
    let index = manifest.index();
    let ids: Vec<&String> = ids.into_iter().collect();
    let results: Vec<(String, Result<PerceptualHash, String>)> = ids
        .par_iter()
        .map(|id| {
            let result = index
                .get(id.as_str())
                .ok_or_else(|| "id not in manifest".to_string())
                .and_then(|rec| loader.load(rec))
                .and_then(|img| to_grayscale(&img).map_err(|e| e.to_string()))
                .map(|raster| compute_phash(&raster, id.as_str()));
            ((*id).clone(), result)
        })
        .collect();

    let mut out = CorpusHashes::default();
    for (id, r) in results {
        match r {
            Ok(h) => {
                out.hashes.insert(id, h);
            }
            Err(e) => {
                log::warn!("hash failed for {id}: {e}");
                out.failures.insert(id, e);
            }
        }
    }
    if !ids.is_empty() && out.hashes.is_empty() {
        return Err(PhashError::AllFailed(ids.len()));
    }
    Ok(out)
}

/// Writes `id,hash_hex` rows sorted by id.
pub fn write_hash_csv<W: Write>(out: W, hashes: &BTreeMap<String, u64>) -> Result<(), PhashError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| PhashError::Csv(e.to_string());
    w.write_record(["id", "hash_hex"]).map_err(err)?;
    for (id, bits) in hashes {
        w.write_record([id.as_str(), &format!("{bits:016x}")]).map_err(err)?;
    }
    w.flush().map_err(|e| PhashError::Csv(e.to_string()))
}

pub fn read_hash_csv<R: Read>(input: R) -> Result<BTreeMap<String, u64>, PhashError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = BTreeMap::new();
    for row in r.records() {
        let row = row.map_err(|e| PhashError::Csv(e.to_string()))?;
        let (id, hex) = match (row.get(0), row.get(1)) {
            (Some(id), Some(hex)) => (id, hex),
            _ => return Err(PhashError::Csv(format!("short row {row:?}"))),
        };
        if hex.len() != 16 {
            return Err(PhashError::Csv(format!("hash {hex:?} is not 16 hex digits")));
        }
        let bits = u64::from_str_radix(hex, 16)
            .map_err(|e| PhashError::Csv(format!("hash {hex:?}: {e}")))?;
        out.insert(id.to_string(), bits);
    }
    Ok(out)
}
