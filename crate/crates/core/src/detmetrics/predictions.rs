use std::collections::HashMap;
use std::fs;
use std::io::BufRead;
use std::path::Path;

use serde::Deserialize;
use walkdir::WalkDir;

use super::{DetMetricsError, Detection};
use crate::dataset::{BBox, DatasetManifest};

fn strip_ext(id: &str) -> &str {
    match id.rfind('.') {
        Some(dot) if !id[dot..].contains('/') => &id[..dot],
        _ => id,
    }
}

/// Reads a directory of per-image text files mirroring the image tree
/// (`seq/000001.png` → `seq/000001.txt`), one detection per line:
/// `class_index confidence x_min y_min x_max y_max`.
pub fn read_prediction_dir(
    dir: &Path,
    manifest: &DatasetManifest,
) -> Result<Vec<Detection>, DetMetricsError> {
    let by_stem: HashMap<&str, &str> =
        manifest.images.iter().map(|r| (strip_ext(&r.id), r.id.as_str())).collect();

    let mut files = Vec::new();
    for entry in WalkDir::new(dir) {
        let entry = entry.map_err(|e| DetMetricsError::Io { path: dir.to_path_buf(), source: e.into() })?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "txt") {
            files.push(entry.into_path());
        }
    }
    files.sort();

    let mut out = Vec::new();
    for path in files {
        let rel = path.strip_prefix(dir).unwrap_or(&path).with_extension("");
        let stem = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        let image_id = by_stem
            .get(stem.as_str())
            .ok_or_else(|| DetMetricsError::UnknownImage(stem.clone()))?
            .to_string();
        let content = fs::read_to_string(&path)
            .map_err(|source| DetMetricsError::Io { path: path.clone(), source })?;
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let location = format!("{}:{}", path.display(), i + 1);
            out.push(parse_line(line, &image_id, &location)?);
        }
    }
    Ok(out)
}

fn parse_line(line: &str, image_id: &str, location: &str) -> Result<Detection, DetMetricsError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let bad = |message: String| DetMetricsError::MalformedPredictions {
        location: location.to_string(),
        message,
    };
    if fields.len() != 6 {
        return Err(bad(format!("expected 6 fields, got {}", fields.len())));
    }
    let class_index = fields[0].parse::<usize>().map_err(|e| bad(format!("class: {e}")))?;
    let mut nums = [0.0; 5];
    for (slot, f) in nums.iter_mut().zip(&fields[1..]) {
        *slot = f.parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}")))?;
    }
    Ok(Detection {
        image_id: image_id.to_string(),
        class_index,
        confidence: nums[0],
        bbox: BBox::new(nums[1], nums[2], nums[3], nums[4]),
    })
}

#[derive(Deserialize)]
struct JsonlDetection {
    image_id: String,
    class: usize,
    conf: f64,
    bbox: [f64; 4],
}

/// Reads `{image_id, class, conf, bbox: [x_min, y_min, x_max, y_max]}` lines.
pub fn read_predictions_jsonl<R: BufRead>(input: R) -> Result<Vec<Detection>, DetMetricsError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|source| DetMetricsError::Io { path: "<jsonl>".into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let d: JsonlDetection = serde_json::from_str(&line).map_err(|e| {
            DetMetricsError::MalformedPredictions { location: format!("line {}", i + 1), message: e.to_string() }
        })?;
        out.push(Detection {
            image_id: d.image_id,
            class_index: d.class,
            confidence: d.conf,
            bbox: BBox::new(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]),
        });
    }
    Ok(out)
}
