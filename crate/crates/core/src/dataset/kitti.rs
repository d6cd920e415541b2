use serde::{Deserialize, Serialize};

use super::{Annotation, BBox, DatasetError};

/// Object classes of the KITTI 2D detection benchmark, in devkit order.
pub const KITTI_CLASSES: [&str; 8] =
    ["Car", "Van", "Truck", "Pedestrian", "Person_sitting", "Cyclist", "Tram", "Misc"];

const DONT_CARE: &str = "DontCare";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UnknownClassPolicy {
    #[default]
    Ignore,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KittiLabel {
    Object(Annotation),
    /// Unlabelled region; never emitted as an annotation, excluded from scoring.
    DontCare(BBox),
    /// Class not in the class list, dropped under [`UnknownClassPolicy::Ignore`].
    Skipped(String),
}

/// Parses one line of a KITTI label file.
///
/// Columns: `type truncated occluded alpha left top right bottom ...`; only
/// the type and the 2D box are used.
pub fn parse_kitti_label_line(
    line: &str,
    class_names: &[String],
    policy: UnknownClassPolicy,
) -> Result<KittiLabel, DatasetError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 8 {
        return Err(DatasetError::MalformedLabel(format!(
            "expected at least 8 fields, got {}",
            fields.len()
        )));
    }
    let coord = |i: usize| -> Result<f64, DatasetError> {
        fields[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| DatasetError::MalformedLabel(format!("non-numeric bbox field {:?}", fields[i])))
    };
    let bbox = BBox::new(coord(4)?, coord(5)?, coord(6)?, coord(7)?);
    if bbox.x_min >= bbox.x_max || bbox.y_min >= bbox.y_max {
        return Err(DatasetError::MalformedLabel(format!(
            "degenerate box left={} top={} right={} bottom={}",
            bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max
        )));
    }

    let name = fields[0];
    if name == DONT_CARE {
        return Ok(KittiLabel::DontCare(bbox));
    }
    match class_names.iter().position(|c| c == name) {
        Some(class_index) => Ok(KittiLabel::Object(Annotation { class_index, bbox })),
        None => match policy {
            UnknownClassPolicy::Ignore => Ok(KittiLabel::Skipped(name.to_string())),
            UnknownClassPolicy::Error => Err(DatasetError::UnknownClass(name.to_string())),
        },
    }
}
