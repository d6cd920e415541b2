//! Image manifests, KITTI label ingestion, and train/test splits.
//!
//! A [`DatasetManifest`] is the immutable view of a corpus that every other
//! module works from. It can be discovered from a KITTI-style directory
//! (`images/` + `labels/`) or read from a JSON manifest.

mod kitti;
mod split;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

pub use kitti::{parse_kitti_label_line, KittiLabel, UnknownClassPolicy, KITTI_CLASSES};
pub use split::{make_split, validate_split, SplitSpec, SplitStrategy, SplitValidation, StrategyKind};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset root {path}: {source}")]
    UnreadableRoot {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no images found under {0}")]
    ZeroImages(PathBuf),
    #[error("malformed manifest {path}: {message}")]
    MalformedManifest { path: PathBuf, message: String },
    #[error("malformed label: {0}")]
    MalformedLabel(String),
    #[error("unknown class name {0:?}")]
    UnknownClass(String),
    #[error("{path}:{line}: {source}")]
    LabelFile {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<DatasetError>,
    },
    #[error("cannot read image header {path}: {message}")]
    ImageHeader { path: PathBuf, message: String },
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("unknown sequence {0:?}")]
    UnknownSequence(String),
    #[error("split side {0} is empty")]
    EmptySide(&'static str),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Axis-aligned box in pixel coordinates, `(x_min, y_min, x_max, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    /// Clamps to `[0,width]×[0,height]`; `None` when nothing valid remains.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<BBox> {
        let (w, h) = (f64::from(width), f64::from(height));
        let clamped = BBox {
            x_min: self.x_min.clamp(0.0, w),
            y_min: self.y_min.clamp(0.0, h),
            x_max: self.x_max.clamp(0.0, w),
            y_max: self.y_max.clamp(0.0, h),
        };
        clamped.is_valid().then_some(clamped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class_index: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Stable identifier; the image path relative to the dataset image root.
    pub id: String,
    pub sequence: String,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
    /// DontCare-style regions excluded from evaluation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ignore_regions: Vec<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub class_names: Vec<String>,
    pub images: Vec<ImageRecord>,
    /// Non-fatal problems found while loading (missing label files, dropped boxes).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    /// Builds a manifest after checking its invariants.
    pub fn new(
        name: impl Into<String>,
        class_names: Vec<String>,
        images: Vec<ImageRecord>,
    ) -> Result<Self, DatasetError> {
        let manifest = Self { name: name.into(), class_names, images, warnings: Vec::new() };
        manifest.check()?;
        Ok(manifest)
    }

    fn check(&self) -> Result<(), DatasetError> {
        let mut seen = BTreeSet::new();
        for rec in &self.images {
            if !seen.insert(rec.id.as_str()) {
                return Err(DatasetError::DuplicateId(rec.id.clone()));
            }
            if rec.width == 0 || rec.height == 0 {
                return Err(DatasetError::MalformedManifest {
                    path: PathBuf::from(&rec.id),
                    message: "image has zero width or height".into(),
                });
            }
            for ann in &rec.annotations {
                if ann.class_index >= self.class_names.len() {
                    return Err(DatasetError::MalformedManifest {
                        path: PathBuf::from(&rec.id),
                        message: format!(
                            "class index {} out of range for {} classes",
                            ann.class_index,
                            self.class_names.len()
                        ),
                    });
                }
                if !ann.bbox.is_valid() {
                    return Err(DatasetError::MalformedManifest {
                        path: PathBuf::from(&rec.id),
                        message: format!("invalid box {:?}", ann.bbox),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.id == id)
    }

    pub fn index(&self) -> HashMap<&str, &ImageRecord> {
        self.images.iter().map(|r| (r.id.as_str(), r)).collect()
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.images.iter().map(|r| r.id.clone()).collect()
    }

    pub fn sequences(&self) -> BTreeSet<String> {
        self.images.iter().map(|r| r.sequence.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifestFormat {
    KittiDir,
    ManifestJson,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Class names for KITTI directories; ignored for JSON manifests.
    pub class_names: Vec<String>,
    pub unknown_class: UnknownClassPolicy,
    /// Read pixel dimensions from image headers. When false, the dimensions
    /// fall back to the label extents (test fixtures without real images).
    pub read_dimensions: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            class_names: KITTI_CLASSES.iter().map(|s| s.to_string()).collect(),
            unknown_class: UnknownClassPolicy::Ignore,
            read_dimensions: true,
        }
    }
}

/// Loads a manifest from a KITTI directory or a JSON manifest file.
///
/// For [`ManifestFormat::ManifestJson`] the root may be the JSON file itself
/// or a directory containing `manifest.json`.
pub fn load_manifest(
    root: &Path,
    format: ManifestFormat,
    options: &LoadOptions,
) -> Result<DatasetManifest, DatasetError> {
    let meta = fs::metadata(root)
        .map_err(|source| DatasetError::UnreadableRoot { path: root.to_path_buf(), source })?;
    match format {
        ManifestFormat::KittiDir => {
            if !meta.is_dir() {
                return Err(DatasetError::UnreadableRoot {
                    path: root.to_path_buf(),
                    source: std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
                });
            }
            load_kitti_dir(root, options)
        }
        ManifestFormat::ManifestJson => {
            let file = if meta.is_dir() { root.join("manifest.json") } else { root.to_path_buf() };
            load_manifest_json(&file, options)
        }
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn rel_id(base: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(base).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Sequence tag: the immediate parent directory name.
fn sequence_of(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

struct LoadedRecord {
    record: ImageRecord,
    warnings: Vec<String>,
}

fn load_kitti_dir(root: &Path, options: &LoadOptions) -> Result<DatasetManifest, DatasetError> {
    let images_dir = root.join("images");
    let labels_dir = root.join("labels");
    if !images_dir.is_dir() {
        return Err(DatasetError::ZeroImages(root.to_path_buf()));
    }

    let mut image_files = Vec::new();
    for entry in WalkDir::new(&images_dir).follow_links(true) {
        let entry = entry.map_err(|e| DatasetError::UnreadableRoot {
            path: images_dir.clone(),
            source: e.into(),
        })?;
        if entry.file_type().is_file() && is_image(entry.path()) {
            image_files.push(entry.into_path());
        }
    }
    if image_files.is_empty() {
        return Err(DatasetError::ZeroImages(root.to_path_buf()));
    }
    image_files.sort_by_cached_key(|p| rel_id(&images_dir, p));

    let loaded: Vec<LoadedRecord> = image_files
        .par_iter()
        .map(|image_path| {
            let id = rel_id(&images_dir, image_path);
            let label_path = labels_dir.join(Path::new(&id).with_extension("txt"));
            let sequence = sequence_of(image_path);
            load_record(id, sequence, image_path.clone(), Some(label_path), None, options)
        })
        .collect::<Result<_, _>>()?;

    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    finish(name, options.class_names.clone(), loaded)
}

#[derive(Deserialize)]
struct JsonManifest {
    name: String,
    class_names: Vec<String>,
    images: Vec<JsonImage>,
}

#[derive(Deserialize)]
struct JsonImage {
    id: String,
    #[serde(default)]
    sequence: Option<String>,
    width: u32,
    height: u32,
    #[serde(default)]
    labels_path: Option<PathBuf>,
    #[serde(default)]
    image_path: Option<PathBuf>,
}

fn load_manifest_json(file: &Path, options: &LoadOptions) -> Result<DatasetManifest, DatasetError> {
    let text = fs::read_to_string(file)
        .map_err(|source| DatasetError::UnreadableRoot { path: file.to_path_buf(), source })?;
    let parsed: JsonManifest = serde_json::from_str(&text).map_err(|e| {
        DatasetError::MalformedManifest { path: file.to_path_buf(), message: e.to_string() }
    })?;
    if parsed.images.is_empty() {
        return Err(DatasetError::ZeroImages(file.to_path_buf()));
    }
    let base = file.parent().unwrap_or(Path::new("."));
    let options = LoadOptions { class_names: parsed.class_names.clone(), ..options.clone() };

    let loaded: Vec<LoadedRecord> = parsed
        .images
        .into_par_iter()
        .map(|img| {
            let image_path = base.join(img.image_path.as_deref().unwrap_or(Path::new(&img.id)));
            let sequence = img.sequence.unwrap_or_else(|| sequence_of(Path::new(&img.id)));
            let labels = img.labels_path.map(|p| base.join(p));
            let label_missing = labels.is_none();
            let mut loaded = load_record(
                img.id,
                sequence,
                image_path,
                labels,
                Some((img.width, img.height)),
                &options,
            )?;
            if label_missing {
                loaded
                    .warnings
                    .push(format!("{}: no labels_path, treated as background", loaded.record.id));
            }
            Ok(loaded)
        })
        .collect::<Result<_, DatasetError>>()?;

    let manifest = finish(parsed.name, options.class_names, loaded)?;
    if manifest.images.iter().any(|r| r.width == 0 || r.height == 0) {
        return Err(DatasetError::MalformedManifest {
            path: file.to_path_buf(),
            message: "image with zero width or height".into(),
        });
    }
    Ok(manifest)
}

fn load_record(
    id: String,
    sequence: String,
    image_path: PathBuf,
    label_path: Option<PathBuf>,
    dims: Option<(u32, u32)>,
    options: &LoadOptions,
) -> Result<LoadedRecord, DatasetError> {
    let mut warnings = Vec::new();
    let mut objects = Vec::new();
    let mut ignore = Vec::new();

    let labels_path = match label_path {
        Some(p) if p.is_file() => {
            let content = fs::read_to_string(&p)
                .map_err(|source| DatasetError::Io { path: p.clone(), source })?;
            for (i, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed =
                    parse_kitti_label_line(line, &options.class_names, options.unknown_class)
                        .map_err(|e| DatasetError::LabelFile {
                            path: p.clone(),
                            line: i + 1,
                            source: Box::new(e),
                        })?;
                match parsed {
                    KittiLabel::Object(a) => objects.push(a),
                    KittiLabel::DontCare(b) => ignore.push(b),
                    KittiLabel::Skipped(name) => {
                        warnings.push(format!("{}:{}: skipped class {name:?}", p.display(), i + 1))
                    }
                }
            }
            Some(p)
        }
        Some(p) => {
            warnings.push(format!("{id}: label file {} missing, treated as background", p.display()));
            None
        }
        None => None,
    };

    let extents = |objects: &[Annotation], ignore: &[BBox]| {
        let extent = |f: fn(&BBox) -> f64| {
            objects
                .iter()
                .map(|a| f(&a.bbox))
                .chain(ignore.iter().map(f))
                .fold(1.0_f64, f64::max)
                .ceil() as u32
        };
        (extent(|b| b.x_max), extent(|b| b.y_max))
    };
    let (width, height) = match dims {
        Some(d) => d,
        None if options.read_dimensions => match image::image_dimensions(&image_path) {
            Ok(d) => d,
            Err(e) => {
                // keep the record; hashing will report the image separately
                warnings.push(format!("{id}: unreadable image header ({e}), using label extents"));
                extents(&objects, &ignore)
            }
        },
        None => extents(&objects, &ignore),
    };

    let mut annotations = Vec::with_capacity(objects.len());
    for a in objects {
        match a.bbox.clamp_to(width, height) {
            Some(bbox) => annotations.push(Annotation { class_index: a.class_index, bbox }),
            None => warnings.push(format!("{id}: dropped box {:?} outside image", a.bbox)),
        }
    }
    let ignore_regions = ignore.iter().filter_map(|b| b.clamp_to(width, height)).collect();

    Ok(LoadedRecord {
        record: ImageRecord {
            id,
            sequence,
            width,
            height,
            annotations,
            ignore_regions,
            image_path: Some(image_path),
            labels_path,
        },
        warnings,
    })
}

fn finish(
    name: String,
    class_names: Vec<String>,
    loaded: Vec<LoadedRecord>,
) -> Result<DatasetManifest, DatasetError> {
    let mut images = Vec::with_capacity(loaded.len());
    let mut warnings = Vec::new();
    for l in loaded {
        images.push(l.record);
        warnings.extend(l.warnings);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut manifest = DatasetManifest::new(name, class_names, images)?;
    manifest.warnings = warnings;
    Ok(manifest)
}
