//! Canonical data model and input parsing.
//!
//! Input is a COCO-detection-like JSON annotation file plus a JSONL label
//! table. Parsing is total: every record ends up either in the returned
//! corpus or exactly once in the error report.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// Which namespace a label lives in. The same string may name an object and
/// an attribute; those are distinct labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Object,
    Attribute,
    Relationship,
}

impl LabelKind {
    pub const ALL: [LabelKind; 3] = [LabelKind::Object, LabelKind::Attribute, LabelKind::Relationship];

    pub fn as_str(self) -> &'static str {
        match self {
            LabelKind::Object => "object",
            LabelKind::Attribute => "attribute",
            LabelKind::Relationship => "relationship",
        }
    }
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown label kind `{0}` (expected object, attribute or relationship)")]
pub struct UnknownKind(pub String);

impl FromStr for LabelKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "object" => Ok(LabelKind::Object),
            "attribute" => Ok(LabelKind::Attribute),
            "relationship" => Ok(LabelKind::Relationship),
            other => Err(UnknownKind(other.to_string())),
        }
    }
}

/// Axis-aligned pixel box, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Non-degenerate and inside a `width x height` frame.
    pub fn is_legal_in(&self, width: u32, height: u32) -> bool {
        self.w > 0
            && self.h > 0
            && (self.x as u64 + self.w as u64) <= width as u64
            && (self.y as u64 + self.h as u64) <= height as u64
    }

    /// Parses `[x, y, w, h]`. Only non-negative integral coordinates are
    /// accepted.
    pub fn from_slice(v: &[f64]) -> Option<Self> {
        if v.len() != 4 {
            return None;
        }
        let mut out = [0u32; 4];
        for (slot, &c) in out.iter_mut().zip(v) {
            if !c.is_finite() || c < 0.0 || c.fract() != 0.0 || c > u32::MAX as f64 {
                return None;
            }
            *slot = c as u32;
        }
        Some(Self::new(out[0], out[1], out[2], out[3]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub name: String,
    pub kind: LabelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rename: Option<String>,
}

impl LabelEntry {
    /// Name used in rendered text.
    pub fn display_name(&self) -> &str {
        self.rename.as_deref().unwrap_or(&self.name)
    }
}

/// All labels keyed by `(kind, name)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelTable {
    entries: BTreeMap<(LabelKind, String), LabelEntry>,
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an entry, replacing any existing one with the same key.
    pub fn insert(&mut self, entry: LabelEntry) {
        self.entries.insert((entry.kind, entry.name.clone()), entry);
    }

    pub fn get(&self, kind: LabelKind, name: &str) -> Option<&LabelEntry> {
        self.entries.get(&(kind, name.to_string()))
    }

    pub fn contains(&self, kind: LabelKind, name: &str) -> bool {
        self.get(kind, name).is_some()
    }

    /// Display name, falling back to the raw name for labels not in the table.
    pub fn display<'a>(&'a self, kind: LabelKind, name: &'a str) -> &'a str {
        self.get(kind, name).map(LabelEntry::display_name).unwrap_or(name)
    }

    pub fn description(&self, kind: LabelKind, name: &str) -> Option<&str> {
        self.get(kind, name).and_then(|e| e.description.as_deref())
    }

    pub fn remove(&mut self, kind: LabelKind, name: &str) -> Option<LabelEntry> {
        self.entries.remove(&(kind, name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabelEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// JSONL form, one label per line in key order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in self.iter() {
            let stripped = LabelEntry { rename: None, ..e.clone() };
            out.push_str(&serde_json::to_string(&stripped).expect("label serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub id: String,
    pub image_id: String,
    pub bbox: BoundingBox,
    /// Object-kind label name.
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeAnnotation {
    pub label: String,
    pub member_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationshipAnnotation {
    pub label: String,
    pub subject_id: String,
    pub object_id: String,
}

/// One image with all of its annotations. `width`/`height` are the current
/// frame: source pixels after parsing, the canvas after resizing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub caption: Option<String>,
    pub localized_narrative: Option<String>,
    pub split: Option<String>,
    pub objects: Vec<ObjectAnnotation>,
    pub attributes: Vec<AttributeAnnotation>,
    pub relationships: Vec<RelationshipAnnotation>,
}

impl AnnotatedImage {
    pub fn object(&self, id: &str) -> Option<&ObjectAnnotation> {
        self.objects.iter().find(|o| o.id == id)
    }
}

// ---------------------------------------------------------------------------
// Errors

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SchemaError {
    fn from_json(path: &str, line_offset: usize, e: serde_json::Error) -> Self {
        SchemaError::Parse {
            path: path.to_string(),
            line: e.line() + line_offset,
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Label,
    Image,
    Object,
    Attribute,
    Relationship,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    IllegalCoordinates,
    InvalidDimensions,
    DuplicateId,
    InvalidName,
    DanglingImage { image_id: String },
    DanglingObject { object_id: String },
    UnknownLabel { label: String, kind: LabelKind },
    CrossImage,
    SelfRelationship,
    EmptyMembers,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::IllegalCoordinates => f.write_str("illegal coordinates"),
            Violation::InvalidDimensions => f.write_str("invalid image dimensions"),
            Violation::DuplicateId => f.write_str("duplicate id"),
            Violation::InvalidName => f.write_str("empty or multi-line label name"),
            Violation::DanglingImage { image_id } => write!(f, "unknown image `{image_id}`"),
            Violation::DanglingObject { object_id } => write!(f, "unknown object `{object_id}`"),
            Violation::UnknownLabel { label, kind } => write!(f, "unknown {kind} label `{label}`"),
            Violation::CrossImage => f.write_str("members belong to different images"),
            Violation::SelfRelationship => f.write_str("subject and object are the same"),
            Violation::EmptyMembers => f.write_str("no member objects"),
        }
    }
}

/// A rejected record. `locus` is the record id, or `name[index]` for records
/// without one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub kind: RecordKind,
    pub locus: String,
    #[serde(flatten)]
    pub violation: Violation,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {}: {}", self.kind, self.locus, self.violation)
    }
}

// ---------------------------------------------------------------------------
// Raw file shapes

fn de_id<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum RawId {
        Str(String),
        Int(i64),
    }
    Ok(match RawId::deserialize(d)? {
        RawId::Str(s) => s,
        RawId::Int(i) => i.to_string(),
    })
}

fn de_ids<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    struct W(#[serde(deserialize_with = "de_id")] String);
    Ok(Vec::<W>::deserialize(d)?.into_iter().map(|w| w.0).collect())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnnotationFile {
    #[serde(default)]
    pub images: Vec<RawImage>,
    #[serde(default)]
    pub objects: Vec<RawObject>,
    #[serde(default)]
    pub attributes: Vec<RawAttribute>,
    #[serde(default)]
    pub relationships: Vec<RawRelationship>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawImage {
    #[serde(deserialize_with = "de_id")]
    pub id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localized_narrative: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawObject {
    #[serde(deserialize_with = "de_id")]
    pub id: String,
    #[serde(deserialize_with = "de_id")]
    pub image_id: String,
    pub bbox: Vec<f64>,
    pub label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawAttribute {
    pub label: String,
    #[serde(deserialize_with = "de_ids")]
    pub object_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRelationship {
    pub label: String,
    #[serde(deserialize_with = "de_id")]
    pub subject_id: String,
    #[serde(deserialize_with = "de_id")]
    pub object_id: String,
}

/// Rename map record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenameEntry {
    pub name: String,
    pub kind: LabelKind,
    pub rename: String,
}

// ---------------------------------------------------------------------------
// Parsing

/// Parsed and validated corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedCorpus {
    /// Accepted images, ordered by id.
    pub images: Vec<AnnotatedImage>,
    pub labels: LabelTable,
    pub errors: Vec<RecordError>,
}

fn valid_name(s: &str) -> bool {
    !s.trim().is_empty() && !s.contains('\n') && !s.contains('\r')
}

/// Parses a JSONL file of `T`, skipping blank lines.
pub fn parse_jsonl<T: for<'de> Deserialize<'de>>(path: &str, text: &str) -> Result<Vec<T>, SchemaError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| SchemaError::from_json(path, i, e))?;
        out.push(rec);
    }
    Ok(out)
}

/// Parses the label JSONL. Duplicate `(name, kind)` pairs are all rejected.
pub fn parse_labels(path: &str, text: &str) -> Result<(LabelTable, Vec<RecordError>), SchemaError> {
    #[derive(Deserialize)]
    struct RawLabel {
        name: String,
        kind: LabelKind,
        #[serde(default)]
        description: Option<String>,
    }
    let raw: Vec<RawLabel> = parse_jsonl(path, text)?;
    let mut counts: HashMap<(LabelKind, &str), usize> = HashMap::new();
    for r in &raw {
        *counts.entry((r.kind, r.name.as_str())).or_default() += 1;
    }
    let mut table = LabelTable::new();
    let mut errors = Vec::new();
    for (i, r) in raw.iter().enumerate() {
        let locus = format!("labels[{i}]");
        if !valid_name(&r.name) {
            errors.push(RecordError { kind: RecordKind::Label, locus, violation: Violation::InvalidName });
        } else if counts[&(r.kind, r.name.as_str())] > 1 {
            errors.push(RecordError { kind: RecordKind::Label, locus, violation: Violation::DuplicateId });
        } else {
            table.insert(LabelEntry {
                name: r.name.clone(),
                kind: r.kind,
                description: r.description.clone(),
                rename: None,
            });
        }
    }
    Ok((table, errors))
}

fn dup_ids<'a>(ids: impl Iterator<Item = &'a str>) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            dups.insert(id);
        }
    }
    dups
}

/// Validates an annotation file against a label table.
pub fn validate_annotations(file: &AnnotationFile, labels: &LabelTable) -> (Vec<AnnotatedImage>, Vec<RecordError>) {
    let mut errors = Vec::new();

    let dup_images = dup_ids(file.images.iter().map(|i| i.id.as_str()));
    let mut images: BTreeMap<String, AnnotatedImage> = BTreeMap::new();
    for raw in &file.images {
        let violation = if dup_images.contains(raw.id.as_str()) {
            Some(Violation::DuplicateId)
        } else if raw.width == 0 || raw.height == 0 {
            Some(Violation::InvalidDimensions)
        } else {
            None
        };
        match violation {
            Some(violation) => errors.push(RecordError { kind: RecordKind::Image, locus: raw.id.clone(), violation }),
            None => {
                images.insert(
                    raw.id.clone(),
                    AnnotatedImage {
                        id: raw.id.clone(),
                        width: raw.width,
                        height: raw.height,
                        caption: raw.caption.clone(),
                        localized_narrative: raw.localized_narrative.clone(),
                        split: raw.split.clone(),
                        objects: Vec::new(),
                        attributes: Vec::new(),
                        relationships: Vec::new(),
                    },
                );
            }
        }
    }

    // object id -> owning image id, for accepted objects only
    let dup_objects = dup_ids(file.objects.iter().map(|o| o.id.as_str()));
    let mut owner: HashMap<String, String> = HashMap::new();
    for raw in &file.objects {
        let err = |violation| RecordError { kind: RecordKind::Object, locus: raw.id.clone(), violation };
        if dup_objects.contains(raw.id.as_str()) {
            errors.push(err(Violation::DuplicateId));
            continue;
        }
        let Some(image) = images.get_mut(&raw.image_id) else {
            errors.push(err(Violation::DanglingImage { image_id: raw.image_id.clone() }));
            continue;
        };
        let bbox = match BoundingBox::from_slice(&raw.bbox) {
            Some(b) if b.is_legal_in(image.width, image.height) => b,
            _ => {
                errors.push(err(Violation::IllegalCoordinates));
                continue;
            }
        };
        if !labels.contains(LabelKind::Object, &raw.label) {
            errors.push(err(Violation::UnknownLabel { label: raw.label.clone(), kind: LabelKind::Object }));
            continue;
        }
        owner.insert(raw.id.clone(), raw.image_id.clone());
        image.objects.push(ObjectAnnotation {
            id: raw.id.clone(),
            image_id: raw.image_id.clone(),
            bbox,
            label: raw.label.clone(),
        });
    }

    for (i, raw) in file.attributes.iter().enumerate() {
        let err = |violation| RecordError { kind: RecordKind::Attribute, locus: format!("attributes[{i}]"), violation };
        if !labels.contains(LabelKind::Attribute, &raw.label) {
            errors.push(err(Violation::UnknownLabel { label: raw.label.clone(), kind: LabelKind::Attribute }));
            continue;
        }
        let mut members: Vec<String> = Vec::new();
        for id in &raw.object_ids {
            if !members.contains(id) {
                members.push(id.clone());
            }
        }
        if members.is_empty() {
            errors.push(err(Violation::EmptyMembers));
            continue;
        }
        if let Some(missing) = members.iter().find(|m| !owner.contains_key(*m)) {
            errors.push(err(Violation::DanglingObject { object_id: missing.clone() }));
            continue;
        }
        let image_id = &owner[&members[0]];
        if members.iter().any(|m| &owner[m] != image_id) {
            errors.push(err(Violation::CrossImage));
            continue;
        }
        images
            .get_mut(image_id)
            .expect("owner points at accepted image")
            .attributes
            .push(AttributeAnnotation { label: raw.label.clone(), member_ids: members });
    }

    for (i, raw) in file.relationships.iter().enumerate() {
        let err = |violation| RecordError { kind: RecordKind::Relationship, locus: format!("relationships[{i}]"), violation };
        if !labels.contains(LabelKind::Relationship, &raw.label) {
            errors.push(err(Violation::UnknownLabel { label: raw.label.clone(), kind: LabelKind::Relationship }));
            continue;
        }
        if raw.subject_id == raw.object_id {
            errors.push(err(Violation::SelfRelationship));
            continue;
        }
        let Some(subject_image) = owner.get(&raw.subject_id) else {
            errors.push(err(Violation::DanglingObject { object_id: raw.subject_id.clone() }));
            continue;
        };
        let Some(object_image) = owner.get(&raw.object_id) else {
            errors.push(err(Violation::DanglingObject { object_id: raw.object_id.clone() }));
            continue;
        };
        if subject_image != object_image {
            errors.push(err(Violation::CrossImage));
            continue;
        }
        images
            .get_mut(subject_image)
            .expect("owner points at accepted image")
            .relationships
            .push(RelationshipAnnotation {
                label: raw.label.clone(),
                subject_id: raw.subject_id.clone(),
                object_id: raw.object_id.clone(),
            });
    }

    (images.into_values().collect(), errors)
}

/// Parses annotation and label documents already loaded into memory.
pub fn parse_corpus_str(annotations: &str, labels: &str) -> Result<ParsedCorpus, SchemaError> {
    parse_named("<annotations>", annotations, "<labels>", labels)
}

fn parse_named(ann_path: &str, ann: &str, label_path: &str, labels: &str) -> Result<ParsedCorpus, SchemaError> {
    let (table, mut errors) = parse_labels(label_path, labels)?;
    let file: AnnotationFile = serde_json::from_str(ann).map_err(|e| SchemaError::from_json(ann_path, 0, e))?;
    let (images, record_errors) = validate_annotations(&file, &table);
    errors.extend(record_errors);
    Ok(ParsedCorpus { images, labels: table, errors })
}

pub fn read_to_string(path: &Path) -> Result<String, SchemaError> {
    std::fs::read_to_string(path).map_err(|source| SchemaError::Io { path: path.display().to_string(), source })
}

/// Reads and validates an annotation file and its label table.
pub fn parse_corpus(annotation_file: &Path, label_file: &Path) -> Result<ParsedCorpus, SchemaError> {
    let ann = read_to_string(annotation_file)?;
    let labels = read_to_string(label_file)?;
    parse_named(
        &annotation_file.display().to_string(),
        &ann,
        &label_file.display().to_string(),
        &labels,
    )
}

/// Inverse of [`validate_annotations`]: images in order, then their objects,
/// attributes and relationships.
pub fn to_annotation_file(images: &[AnnotatedImage]) -> AnnotationFile {
    let mut file = AnnotationFile::default();
    for img in images {
        file.images.push(RawImage {
            id: img.id.clone(),
            width: img.width,
            height: img.height,
            caption: img.caption.clone(),
            localized_narrative: img.localized_narrative.clone(),
            split: img.split.clone(),
        });
        for o in &img.objects {
            file.objects.push(RawObject {
                id: o.id.clone(),
                image_id: o.image_id.clone(),
                bbox: vec![o.bbox.x as f64, o.bbox.y as f64, o.bbox.w as f64, o.bbox.h as f64],
                label: o.label.clone(),
            });
        }
        for a in &img.attributes {
            file.attributes.push(RawAttribute { label: a.label.clone(), object_ids: a.member_ids.clone() });
        }
        for r in &img.relationships {
            file.relationships.push(RawRelationship {
                label: r.label.clone(),
                subject_id: r.subject_id.clone(),
                object_id: r.object_id.clone(),
            });
        }
    }
    file
}

// ---------------------------------------------------------------------------
// Renames

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenameError {
    #[error("renaming would give two {kind} labels the display name `{name}`")]
    Collision { kind: LabelKind, name: String },
    #[error("invalid rename target for {kind} label `{name}`")]
    InvalidTarget { kind: LabelKind, name: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenameOutcome {
    pub table: LabelTable,
    /// Entries whose `(name, kind)` is not in the table.
    pub unknown: Vec<RenameEntry>,
}

/// Attaches display names (e.g. disambiguated polysemous labels) to the table.
pub fn apply_rename_map(labels: &LabelTable, renames: &[RenameEntry]) -> Result<RenameOutcome, RenameError> {
    let mut table = labels.clone();
    let mut unknown = Vec::new();
    for r in renames {
        if !valid_name(&r.rename) {
            return Err(RenameError::InvalidTarget { kind: r.kind, name: r.name.clone() });
        }
        match table.entries.get_mut(&(r.kind, r.name.clone())) {
            Some(e) => e.rename = Some(r.rename.clone()),
            None => unknown.push(r.clone()),
        }
    }
    let mut seen: BTreeSet<(LabelKind, &str)> = BTreeSet::new();
    for e in table.iter() {
        if !seen.insert((e.kind, e.display_name())) {
            return Err(RenameError::Collision { kind: e.kind, name: e.display_name().to_string() });
        }
    }
    Ok(RenameOutcome { table, unknown })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LABELS: &str = r#"{"name":"dog","kind":"object","description":"A domesticated canine."}
{"name":"cat","kind":"object"}
{"name":"person","kind":"object"}
{"name":"brown","kind":"attribute","description":"A dark earthy color."}
{"name":"next to","kind":"relationship"}
"#;

    fn fixture() -> String {
        serde_json::json!({
            "images": [
                {"id": "b", "width": 640, "height": 480, "caption": "a dog and a cat"},
                {"id": "a", "width": 448, "height": 448},
                {"id": "c", "width": 300, "height": 300},
            ],
            "objects": [
                {"id": "o1", "image_id": "a", "bbox": [0, 0, 100, 100], "label": "dog"},
                {"id": "o2", "image_id": "a", "bbox": [50, 50, 100, 100], "label": "cat"},
                {"id": "o3", "image_id": "b", "bbox": [64, 48, 320, 240], "label": "dog"},
                {"id": "o4", "image_id": "b", "bbox": [10, 10, 20, 20], "label": "cat"},
                {"id": "o5", "image_id": "b", "bbox": [100, 100, 50, 80], "label": "person"},
                {"id": "o6", "image_id": "c", "bbox": [0, 0, 300, 300], "label": "person"},
                {"id": "o7", "image_id": "c", "bbox": [5, 5, 10, 10], "label": "dog"},
            ],
            "attributes": [{"label": "brown", "object_ids": ["o1"]}],
            "relationships": [{"label": "next to", "subject_id": "o1", "object_id": "o2"}],
        })
        .to_string()
    }

    #[test]
    fn well_formed_fixture() {
        let c = parse_corpus_str(&fixture(), LABELS).unwrap();
        assert!(c.errors.is_empty(), "{:?}", c.errors);
        assert_eq!(c.images.len(), 3);
        assert_eq!(c.images.iter().map(|i| i.objects.len()).sum::<usize>(), 7);
        let ids: Vec<_> = c.images.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(c.images[0].attributes.len(), 1);
        assert_eq!(c.images[0].relationships.len(), 1);
    }

    #[test]
    fn dangling_image_reported_image_kept() {
        let mut v: serde_json::Value = serde_json::from_str(&fixture()).unwrap();
        v["objects"].as_array_mut().unwrap().push(serde_json::json!(
            {"id": "o8", "image_id": "zzz", "bbox": [0, 0, 10, 10], "label": "dog"}
        ));
        let c = parse_corpus_str(&v.to_string(), LABELS).unwrap();
        assert_eq!(c.errors.len(), 1);
        assert_eq!(c.errors[0].locus, "o8");
        assert_eq!(c.errors[0].violation, Violation::DanglingImage { image_id: "zzz".into() });
        assert_eq!(c.images.len(), 3);
    }

    #[test]
    fn zero_width_is_illegal() {
        let mut v: serde_json::Value = serde_json::from_str(&fixture()).unwrap();
        v["objects"][0]["bbox"] = serde_json::json!([0, 0, 0, 10]);
        let c = parse_corpus_str(&v.to_string(), LABELS).unwrap();
        let e = c.errors.iter().find(|e| e.locus == "o1").unwrap();
        assert_eq!(e.violation, Violation::IllegalCoordinates);
        assert_eq!(e.violation.to_string(), "illegal coordinates");
        // the attribute and relationship on o1 cascade
        assert!(c.errors.iter().any(|e| e.kind == RecordKind::Attribute));
        assert!(c.errors.iter().any(|e| e.kind == RecordKind::Relationship));
    }

    #[test]
    fn out_of_frame_and_fractional_boxes_are_illegal() {
        for bbox in [serde_json::json!([600, 0, 100, 10]), serde_json::json!([0.5, 0, 10, 10]), serde_json::json!([0, 0, 10])] {
            let mut v: serde_json::Value = serde_json::from_str(&fixture()).unwrap();
            v["objects"][3]["bbox"] = bbox;
            let c = parse_corpus_str(&v.to_string(), LABELS).unwrap();
            assert_eq!(c.errors.len(), 1);
            assert_eq!(c.errors[0].violation, Violation::IllegalCoordinates);
        }
    }

    #[test]
    fn malformed_file_reports_locus() {
        let err = parse_corpus_str("{\"images\": [", LABELS).unwrap_err();
        assert!(matches!(err, SchemaError::Parse { line: 1, .. }));
        let err = parse_corpus_str(&fixture(), "{\"name\":\"a\",\"kind\":\"object\"}\n\n{oops").unwrap_err();
        match err {
            SchemaError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn numeric_ids_are_accepted() {
        let ann = r#"{"images":[{"id":7,"width":300,"height":300}],
            "objects":[{"id":1,"image_id":7,"bbox":[0,0,30,30],"label":"dog"}]}"#;
        let c = parse_corpus_str(ann, LABELS).unwrap();
        assert!(c.errors.is_empty());
        assert_eq!(c.images[0].objects[0].image_id, "7");
    }

    #[test]
    fn wrong_kind_label_rejected() {
        let ann = r#"{"images":[{"id":"i","width":300,"height":300}],
            "objects":[{"id":"o","image_id":"i","bbox":[0,0,30,30],"label":"brown"}]}"#;
        let c = parse_corpus_str(ann, LABELS).unwrap();
        assert_eq!(
            c.errors[0].violation,
            Violation::UnknownLabel { label: "brown".into(), kind: LabelKind::Object }
        );
    }

    #[test]
    fn relationship_checks() {
        let ann = r#"{"images":[{"id":"i","width":300,"height":300},{"id":"j","width":300,"height":300}],
            "objects":[{"id":"o","image_id":"i","bbox":[0,0,30,30],"label":"dog"},
                       {"id":"p","image_id":"j","bbox":[0,0,30,30],"label":"cat"}],
            "relationships":[{"label":"next to","subject_id":"o","object_id":"o"},
                             {"label":"next to","subject_id":"o","object_id":"p"},
                             {"label":"next to","subject_id":"o","object_id":"q"}],
            "attributes":[{"label":"brown","object_ids":[]}]}"#;
        let c = parse_corpus_str(ann, LABELS).unwrap();
        let v: Vec<_> = c.errors.iter().map(|e| e.violation.clone()).collect();
        assert!(v.contains(&Violation::SelfRelationship));
        assert!(v.contains(&Violation::CrossImage));
        assert!(v.contains(&Violation::DanglingObject { object_id: "q".into() }));
        assert!(v.contains(&Violation::EmptyMembers));
    }

    #[test]
    fn duplicate_ids_reject_every_copy() {
        let ann = r#"{"images":[{"id":"i","width":300,"height":300},{"id":"i","width":400,"height":400}]}"#;
        let c = parse_corpus_str(ann, LABELS).unwrap();
        assert!(c.images.is_empty());
        assert_eq!(c.errors.len(), 2);
    }

    #[test]
    fn rename_polysemous_label() {
        let (table, _) = parse_labels("l", "{\"name\":\"batter\",\"kind\":\"object\"}\n{\"name\":\"bank\",\"kind\":\"object\"}\n").unwrap();
        let out = apply_rename_map(
            &table,
            &[RenameEntry { name: "batter".into(), kind: LabelKind::Object, rename: "batter (ballplayer)".into() }],
        )
        .unwrap();
        assert_eq!(out.table.display(LabelKind::Object, "batter"), "batter (ballplayer)");
        assert!(out.unknown.is_empty());

        let same = apply_rename_map(&table, &[]).unwrap();
        assert_eq!(same.table, table);

        let err = apply_rename_map(
            &table,
            &[RenameEntry { name: "batter".into(), kind: LabelKind::Object, rename: "bank".into() }],
        )
        .unwrap_err();
        assert!(matches!(err, RenameError::Collision { .. }));

        let unknown = apply_rename_map(
            &table,
            &[RenameEntry { name: "nope".into(), kind: LabelKind::Object, rename: "x".into() }],
        )
        .unwrap();
        assert_eq!(unknown.unknown.len(), 1);
    }

    #[test]
    fn round_trip_through_serialization() {
        let c = parse_corpus_str(&fixture(), LABELS).unwrap();
        let text = serde_json::to_string(&to_annotation_file(&c.images)).unwrap();
        let again = parse_corpus_str(&text, &c.labels.to_jsonl()).unwrap();
        assert_eq!(again.images, c.images);
        assert_eq!(again.labels, c.labels);
    }
}
