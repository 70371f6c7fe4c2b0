//! Square region crops around object boxes.
//!
//! Each object box `R_i` gets the smallest square `S_i` containing it,
//! centred on the box as closely as the canvas allows. Neighbouring objects
//! mostly covered by `S_i` (intersection-over-area at or above the merge
//! threshold) contribute their labels to the region. Regions are then
//! deduplicated, gated by side length and tagged with a 3x3 grid cell.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{AnnotatedImage, BoundingBox, ObjectAnnotation};
use crate::CANVAS;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegionError {
    #[error("box side {side} does not fit on a {canvas}px canvas")]
    ImpossibleCrop { side: u32, canvas: u32 },
}

/// Axis-aligned square on the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Square {
    pub x0: u32,
    pub y0: u32,
    pub side: u32,
}

impl Square {
    pub fn as_box(&self) -> BoundingBox {
        BoundingBox::new(self.x0, self.y0, self.side, self.side)
    }

    pub fn contains(&self, b: &BoundingBox) -> bool {
        self.x0 <= b.x && self.y0 <= b.y && b.right() <= self.x0 + self.side && b.bottom() <= self.y0 + self.side
    }

    /// Twice the centre coordinates, so half-pixel centres stay integral.
    pub fn center2(&self) -> (u32, u32) {
        (2 * self.x0 + self.side, 2 * self.y0 + self.side)
    }
}

/// Nine cells of a 3x3 grid, named top to bottom, left to right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GridCell {
    #[serde(rename = "Top Left")]
    TopLeft,
    #[serde(rename = "Top Middle")]
    TopMiddle,
    #[serde(rename = "Top Right")]
    TopRight,
    #[serde(rename = "Middle Left")]
    MiddleLeft,
    #[serde(rename = "Center")]
    Center,
    #[serde(rename = "Middle Right")]
    MiddleRight,
    #[serde(rename = "Bottom Left")]
    BottomLeft,
    #[serde(rename = "Bottom Middle")]
    BottomMiddle,
    #[serde(rename = "Bottom Right")]
    BottomRight,
}

impl GridCell {
    pub const ALL: [GridCell; 9] = [
        GridCell::TopLeft,
        GridCell::TopMiddle,
        GridCell::TopRight,
        GridCell::MiddleLeft,
        GridCell::Center,
        GridCell::MiddleRight,
        GridCell::BottomLeft,
        GridCell::BottomMiddle,
        GridCell::BottomRight,
    ];

    pub fn from_index(row: usize, col: usize) -> GridCell {
        Self::ALL[row.min(2) * 3 + col.min(2)]
    }

    pub fn name(self) -> &'static str {
        match self {
            GridCell::TopLeft => "Top Left",
            GridCell::TopMiddle => "Top Middle",
            GridCell::TopRight => "Top Right",
            GridCell::MiddleLeft => "Middle Left",
            GridCell::Center => "Center",
            GridCell::MiddleRight => "Middle Right",
            GridCell::BottomLeft => "Bottom Left",
            GridCell::BottomMiddle => "Bottom Middle",
            GridCell::BottomRight => "Bottom Right",
        }
    }

    pub fn from_name(s: &str) -> Option<GridCell> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for GridCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionConfig {
    pub canvas: u32,
    /// Square side is `ceil(max(w, h) * padding)`, capped at the canvas.
    pub padding: f64,
    /// Merge threshold as a fraction `num / den` so the comparison is exact.
    pub merge_ioa_num: u64,
    pub merge_ioa_den: u64,
    pub min_side: u32,
    pub max_side: u32,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self { canvas: CANVAS, padding: 1.0, merge_ioa_num: 4, merge_ioa_den: 5, min_side: 28, max_side: 182 }
    }
}

/// One object region ready for templating.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub square: Square,
    pub source_object_id: String,
    /// Object label names (not display names), source label included.
    pub labels: Vec<String>,
    pub location: GridCell,
}

impl RegionSpec {
    /// Key under which the visual tokenizer looks this region up.
    pub fn visual_key(&self, image_id: &str) -> String {
        let s = self.square;
        format!("{image_id}#{},{},{}", s.x0, s.y0, s.side)
    }
}

fn axis_origin(start: u32, len: u32, side: u32, canvas: u32) -> u32 {
    // feasible origins keep the box inside the square and the square on the canvas
    let lo = (start + len).saturating_sub(side);
    let hi = start.min(canvas - side);
    // ideal origin is start + (len - side) / 2; ties between two integer
    // origins resolve downward
    let ideal2 = 2 * start as i64 + len as i64 - side as i64;
    let ideal = ideal2.div_euclid(2);
    (ideal.clamp(lo as i64, hi as i64)) as u32
}

/// Smallest containing square of side `max(w, h)`, centre-aligned with the
/// box where possible and otherwise shifted the minimum distance onto the
/// canvas.
pub fn square_crop(b: &BoundingBox, canvas: u32) -> Result<Square, RegionError> {
    square_crop_padded(b, canvas, 1.0)
}

pub fn square_crop_padded(b: &BoundingBox, canvas: u32, padding: f64) -> Result<Square, RegionError> {
    let base = b.w.max(b.h);
    if base > canvas {
        return Err(RegionError::ImpossibleCrop { side: base, canvas });
    }
    let side = if padding > 1.0 {
        ((base as f64 * padding).ceil() as u32).min(canvas)
    } else {
        base
    };
    Ok(Square {
        x0: axis_origin(b.x, b.w, side, canvas),
        y0: axis_origin(b.y, b.h, side, canvas),
        side,
    })
}

/// Intersection area and box area, the exact IoA fraction.
pub fn ioa_fraction(s: &Square, r: &BoundingBox) -> (u64, u64) {
    let x1 = s.x0.max(r.x);
    let y1 = s.y0.max(r.y);
    let x2 = (s.x0 + s.side).min(r.right());
    let y2 = (s.y0 + s.side).min(r.bottom());
    let inter = if x2 > x1 && y2 > y1 { (x2 - x1) as u64 * (y2 - y1) as u64 } else { 0 };
    (inter, r.area())
}

/// `Area(S ∩ R) / Area(R)`.
pub fn ioa(s: &Square, r: &BoundingBox) -> f64 {
    let (inter, area) = ioa_fraction(s, r);
    inter as f64 / area as f64
}

/// True when `IoA(s, r) >= num / den`, compared exactly.
pub fn ioa_at_least(s: &Square, r: &BoundingBox, num: u64, den: u64) -> bool {
    let (inter, area) = ioa_fraction(s, r);
    inter as u128 * den as u128 >= num as u128 * area as u128
}

/// Labels of the source object and of every other object whose IoA with the
/// square reaches the threshold, deduplicated and ordered by object id.
pub fn merge_labels(square: &Square, source: &ObjectAnnotation, objects: &[ObjectAnnotation], config: &RegionConfig) -> Vec<String> {
    let mut qualifying: Vec<&ObjectAnnotation> = objects
        .iter()
        .filter(|o| o.id != source.id && ioa_at_least(square, &o.bbox, config.merge_ioa_num, config.merge_ioa_den))
        .collect();
    qualifying.push(source);
    qualifying.sort_by(|a, b| a.id.cmp(&b.id));
    let mut labels: Vec<String> = Vec::new();
    for o in qualifying {
        if !labels.contains(&o.label) {
            labels.push(o.label.clone());
        }
    }
    labels
}

/// Collapses regions with the same square and label set to the one with the
/// smallest source object id. Output is ordered by source object id.
pub fn dedup_regions(mut regions: Vec<RegionSpec>) -> Vec<RegionSpec> {
    regions.sort_by(|a, b| a.source_object_id.cmp(&b.source_object_id));
    let mut seen: BTreeSet<(Square, Vec<String>)> = BTreeSet::new();
    regions.retain(|r| {
        let mut key = r.labels.clone();
        key.sort();
        seen.insert((r.square, key))
    });
    regions
}

/// Grid cell holding the square's centre. Cells are half-open
/// `[k * canvas / 3, (k + 1) * canvas / 3)`; the far edge belongs to the
/// last cell.
pub fn grid_location(square: &Square, canvas: u32) -> GridCell {
    let (cx2, cy2) = square.center2();
    // floor(3 * c / canvas) with c = c2 / 2
    let cell = |c2: u32| ((3 * c2 as u64) / (2 * canvas as u64)).min(2) as usize;
    GridCell::from_index(cell(cy2), cell(cx2))
}

pub fn side_in_range(side: u32, config: &RegionConfig) -> bool {
    (config.min_side..=config.max_side).contains(&side)
}

/// All regions of a resized image: crop, gate, merge, locate, dedup.
pub fn build_regions(image: &AnnotatedImage, config: &RegionConfig) -> Result<Vec<RegionSpec>, RegionError> {
    let mut out = Vec::new();
    for o in &image.objects {
        let square = square_crop_padded(&o.bbox, config.canvas, config.padding)?;
        if !side_in_range(square.side, config) {
            continue;
        }
        out.push(RegionSpec {
            square,
            source_object_id: o.id.clone(),
            labels: merge_labels(&square, o, &image.objects, config),
            location: grid_location(&square, config.canvas),
        });
    }
    let regions = dedup_regions(out);
    debug_assert!(regions.iter().all(|r| {
        let src = image.object(&r.source_object_id).expect("source object");
        r.square.contains(&src.bbox)
            && r.square.x0 + r.square.side <= config.canvas
            && r.square.y0 + r.square.side <= config.canvas
            && side_in_range(r.square.side, config)
            && r.labels.contains(&src.label)
    }));
    Ok(regions)
}

/// One line of the region manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub image_id: String,
    pub region: Square,
    pub labels: Vec<String>,
    pub location: GridCell,
    pub source_object_id: String,
}

impl RegionRecord {
    pub fn new(image_id: &str, r: &RegionSpec) -> Self {
        Self {
            image_id: image_id.to_string(),
            region: r.square,
            labels: r.labels.clone(),
            location: r.location,
            source_object_id: r.source_object_id.clone(),
        }
    }
}
