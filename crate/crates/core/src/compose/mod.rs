//! Structured pre-training documents and SFT samples.
//!
//! A document has an image-annotation part (image, captions, object,
//! attribute and relationship labels with optional descriptions) and an
//! object-annotation part (one block per selected region with its location
//! and labels). The image-first layout puts each image or region before its
//! text; the text-first layout puts the text first, with captions right
//! before the image.
//!
//! Lines end with `\n`. Blocks are separated by one blank line:
//! the header, the image part, the region-part heading, and for every region
//! its heading and its body.

mod inverse;
mod sft;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regions::RegionSpec;
use crate::schema::{AnnotatedImage, LabelKind, LabelTable};
use crate::seed::{unit_rng, Stream};

pub use inverse::{parse_document, InverseError, ParsedDocument, ParsedGroup, ParsedLabel, ParsedRegion};
pub use sft::{
    mgic_sft_spec, render_sft, QaTurn, RegionTurn, SftPiece, SftRound, SftSample, SftSegment, SftSpec, SftTask,
    DEFAULT_DETAIL_INSTRUCTION, SFT_SYSTEM_PROMPT,
};

/// Placeholder for a visual token run in display text.
pub const IMG: &str = "[IMG]";

pub const DOC_HEADER: &str = "# Detailed Analysis of Objects in the Image";
pub const REGIONS_HEADER: &str = "## Overview of Selected Object Regions";
pub const REGION_HEADER: &str = "### Overview of a Selected Object Region";
pub const LOCATION_PREFIX: &str = "Location of the selected region in the image: ";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComposeError {
    #[error("recipe enables nothing; the document would be empty")]
    EmptyRecipe,
    #[error("recipe `{0}` enables descriptions without labels")]
    DescriptionsWithoutLabels(String),
    #[error("invalid recipe flag `{0}` (expected letters from CLDR)")]
    BadRecipeFlag(char),
    #[error("region index {index} out of range ({len} regions)")]
    RegionIndex { index: usize, len: usize },
    #[error("unknown SFT task `{0}`")]
    UnknownTask(String),
    #[error("SFT task `{task}` needs field `{field}`")]
    MissingField { task: SftTask, field: &'static str },
}

/// Which annotation kinds a document carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RecipeConfig {
    /// Image caption (and localized narrative).
    pub caption: bool,
    /// Object, attribute and relationship labels.
    pub labels: bool,
    /// Label descriptions.
    pub descriptions: bool,
    /// Object regions.
    pub regions: bool,
}

impl RecipeConfig {
    pub const CLDR: RecipeConfig = RecipeConfig { caption: true, labels: true, descriptions: true, regions: true };

    pub fn validate(&self) -> Result<(), ComposeError> {
        if self.descriptions && !self.labels {
            return Err(ComposeError::DescriptionsWithoutLabels(self.to_string()));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        !(self.caption || self.labels || self.descriptions || self.regions)
    }
}

impl FromStr for RecipeConfig {
    type Err = ComposeError;

    /// Parses letter sets such as `"CLDR"` or `"CR"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut r = RecipeConfig::default();
        for ch in s.chars() {
            match ch.to_ascii_uppercase() {
                'C' => r.caption = true,
                'L' => r.labels = true,
                'D' => r.descriptions = true,
                'R' => r.regions = true,
                other => return Err(ComposeError::BadRecipeFlag(other)),
            }
        }
        r.validate()?;
        Ok(r)
    }
}

impl fmt::Display for RecipeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (on, c) in [(self.caption, 'C'), (self.labels, 'L'), (self.descriptions, 'D'), (self.regions, 'R')] {
            if on {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl Serialize for RecipeConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for RecipeConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    ImageFirst,
    TextFirst,
}

/// Per-sample template choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub kind: TemplateKind,
    pub with_descriptions: bool,
}

/// Two independent fair draws keyed by `(seed, image, repetition)`. The
/// recipe only masks the description draw, so disabling descriptions never
/// shifts the template draw.
pub fn choose_variant(seed: u64, image_id: &str, repetition: u32, recipe: &RecipeConfig) -> Variant {
    let mut rng = unit_rng(seed, Stream::Variant, image_id, repetition);
    let image_first = rng.random_bool(0.5);
    let keep_descriptions = rng.random_bool(0.5);
    Variant {
        kind: if image_first { TemplateKind::ImageFirst } else { TemplateKind::TextFirst },
        with_descriptions: keep_descriptions && recipe.descriptions,
    }
}

/// Piece of a rendered document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Segment {
    Text { text: String },
    Image { image_id: String },
    /// Index into the region pool the document was rendered from.
    Region { index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedDocument {
    pub image_id: String,
    pub segments: Vec<Segment>,
    pub template_kind: TemplateKind,
    pub with_descriptions: bool,
    /// Region pool indices, in document order.
    pub regions_included: Vec<usize>,
}

impl RenderedDocument {
    /// Document text with `[IMG]` in place of every visual segment.
    pub fn display_text(&self) -> String {
        let mut out = String::new();
        for s in &self.segments {
            match s {
                Segment::Text { text } => out.push_str(text),
                Segment::Image { .. } | Segment::Region { .. } => out.push_str(IMG),
            }
        }
        out
    }
}

enum Line {
    Text(String),
    /// `prefix` followed by a visual segment.
    Visual(&'static str, Segment),
}

/// Accumulates blank-line separated blocks and flattens them to segments.
#[derive(Default)]
struct DocBuilder {
    blocks: Vec<Vec<Line>>,
}

impl DocBuilder {
    fn block(&mut self, lines: Vec<Line>) {
        if !lines.is_empty() {
            self.blocks.push(lines);
        }
    }

    fn finish(self) -> Vec<Segment> {
        let mut segments = Vec::new();
        let mut text = String::new();
        for (i, block) in self.blocks.into_iter().enumerate() {
            if i > 0 {
                text.push('\n');
            }
            for line in block {
                match line {
                    Line::Text(s) => text.push_str(&s),
                    Line::Visual(prefix, seg) => {
                        text.push_str(prefix);
                        if !text.is_empty() {
                            segments.push(Segment::Text { text: std::mem::take(&mut text) });
                        }
                        segments.push(seg);
                    }
                }
                text.push('\n');
            }
        }
        if !text.is_empty() {
            segments.push(Segment::Text { text });
        }
        segments
    }
}

fn push_unique(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_string());
    }
}

/// Image-level label lines: objects, grouped attributes, grouped
/// relationships. Bullets follow first appearance in the record.
fn label_lines(image: &AnnotatedImage, labels: &LabelTable, with_descriptions: bool) -> Vec<Line> {
    let obj_display = |id: &str| -> String {
        image
            .object(id)
            .map(|o| labels.display(LabelKind::Object, &o.label).to_string())
            .unwrap_or_default()
    };
    let desc = |kind, name: &str| if with_descriptions { labels.description(kind, name) } else { None };
    let heading = |plain: &str| {
        if with_descriptions {
            format!("{plain} and their descriptions:")
        } else {
            format!("{plain}:")
        }
    };

    let mut lines = Vec::new();

    let mut objects: Vec<String> = Vec::new();
    for o in &image.objects {
        push_unique(&mut objects, &o.label);
    }
    if !objects.is_empty() {
        lines.push(Line::Text(heading("Objects")));
        for name in &objects {
            let shown = labels.display(LabelKind::Object, name);
            lines.push(Line::Text(match desc(LabelKind::Object, name) {
                Some(d) => format!("- {shown}: {d}"),
                None => format!("- {shown}"),
            }));
        }
    }

    let mut attr_groups: Vec<(String, Vec<String>)> = Vec::new();
    for a in &image.attributes {
        let idx = match attr_groups.iter().position(|(l, _)| *l == a.label) {
            Some(i) => i,
            None => {
                attr_groups.push((a.label.clone(), Vec::new()));
                attr_groups.len() - 1
            }
        };
        for m in &a.member_ids {
            push_unique(&mut attr_groups[idx].1, &obj_display(m));
        }
    }
    if !attr_groups.is_empty() {
        lines.push(Line::Text(heading("Attributes of objects")));
        for (label, members) in &attr_groups {
            let shown = labels.display(LabelKind::Attribute, label);
            let mut line = format!("- {shown} {{{}}}", members.join(", "));
            if let Some(d) = desc(LabelKind::Attribute, label) {
                line.push_str(" : ");
                line.push_str(d);
            }
            lines.push(Line::Text(line));
        }
    }

    let mut rel_groups: Vec<(String, Vec<String>)> = Vec::new();
    for r in &image.relationships {
        let idx = match rel_groups.iter().position(|(l, _)| *l == r.label) {
            Some(i) => i,
            None => {
                rel_groups.push((r.label.clone(), Vec::new()));
                rel_groups.len() - 1
            }
        };
        let pair = format!("{}-{}", obj_display(&r.subject_id), obj_display(&r.object_id));
        push_unique(&mut rel_groups[idx].1, &pair);
    }
    if !rel_groups.is_empty() {
        lines.push(Line::Text(heading("Relationships between objects")));
        for (label, pairs) in &rel_groups {
            let shown = labels.display(LabelKind::Relationship, label);
            let mut line = format!("- {shown} {{{}}}", pairs.join(", "));
            if let Some(d) = desc(LabelKind::Relationship, label) {
                line.push_str(" : ");
                line.push_str(d);
            }
            lines.push(Line::Text(line));
        }
    }
    lines
}

fn caption_lines(image: &AnnotatedImage) -> Vec<Line> {
    let mut lines = Vec::new();
    if let Some(c) = &image.caption {
        lines.push(Line::Text(format!("Caption: {c}")));
    }
    if let Some(ln) = &image.localized_narrative {
        lines.push(Line::Text(format!("Localized narrative caption: {ln}")));
    }
    lines
}

fn region_text_lines(region: &RegionSpec, labels: &LabelTable) -> Vec<Line> {
    let mut lines = vec![Line::Text(format!("{LOCATION_PREFIX}{}", region.location)), Line::Text("Objects:".into())];
    for l in &region.labels {
        lines.push(Line::Text(format!("- {}", labels.display(LabelKind::Object, l))));
    }
    lines
}

/// Instantiates the template for one image.
///
/// `order` lists the region pool indices to include, in order; it is ignored
/// when the recipe has no regions.
pub fn render_document(
    image: &AnnotatedImage,
    labels: &LabelTable,
    regions: &[RegionSpec],
    order: &[usize],
    recipe: &RecipeConfig,
    variant: Variant,
) -> Result<RenderedDocument, ComposeError> {
    recipe.validate()?;
    if recipe.is_empty() {
        return Err(ComposeError::EmptyRecipe);
    }
    let with_descriptions = variant.with_descriptions && recipe.descriptions;
    let included: Vec<usize> = if recipe.regions { order.to_vec() } else { Vec::new() };
    if let Some(&bad) = included.iter().find(|&&i| i >= regions.len()) {
        return Err(ComposeError::RegionIndex { index: bad, len: regions.len() });
    }
    let image_line = || Line::Visual("Image: ", Segment::Image { image_id: image.id.clone() });

    let mut doc = DocBuilder::default();
    if recipe.labels || recipe.regions {
        doc.block(vec![Line::Text(DOC_HEADER.into())]);
    }

    let mut part = Vec::new();
    let captions = if recipe.caption { caption_lines(image) } else { Vec::new() };
    let label_part = if recipe.labels { label_lines(image, labels, with_descriptions) } else { Vec::new() };
    match variant.kind {
        TemplateKind::ImageFirst => {
            part.push(image_line());
            part.extend(captions);
            part.extend(label_part);
        }
        TemplateKind::TextFirst => {
            part.extend(label_part);
            part.extend(captions);
            part.push(image_line());
        }
    }
    doc.block(part);

    if !included.is_empty() {
        doc.block(vec![Line::Text(REGIONS_HEADER.into())]);
        for &i in &included {
            doc.block(vec![Line::Text(REGION_HEADER.into())]);
            let region_line = Line::Visual("Region: ", Segment::Region { index: i });
            let mut body = Vec::new();
            match variant.kind {
                TemplateKind::ImageFirst => {
                    body.push(region_line);
                    body.extend(region_text_lines(&regions[i], labels));
                }
                TemplateKind::TextFirst => {
                    body.extend(region_text_lines(&regions[i], labels));
                    body.push(region_line);
                }
            }
            doc.block(body);
        }
    }

    Ok(RenderedDocument {
        image_id: image.id.clone(),
        segments: doc.finish(),
        template_kind: variant.kind,
        with_descriptions,
        regions_included: included,
    })
}

/// Minor template pairing a short caption with a detailed one.
pub fn render_caption_pair(image_id: &str, caption: &str, detailed: &str, kind: TemplateKind) -> RenderedDocument {
    let image_line = Line::Visual("Image: ", Segment::Image { image_id: image_id.to_string() });
    let text = vec![Line::Text(format!("Caption: {caption}")), Line::Text(format!("Detailed caption: {detailed}"))];
    let mut lines = Vec::new();
    match kind {
        TemplateKind::ImageFirst => {
            lines.push(image_line);
            lines.extend(text);
        }
        TemplateKind::TextFirst => {
            lines.extend(text);
            lines.push(image_line);
        }
    }
    let mut doc = DocBuilder::default();
    doc.block(lines);
    RenderedDocument {
        image_id: image_id.to_string(),
        segments: doc.finish(),
        template_kind: kind,
        with_descriptions: false,
        regions_included: Vec::new(),
    }
}

/// Image-part text without the image line, and one text per region, as used
/// by SFT playback of pre-training documents.
pub(crate) fn playback_texts(
    image: &AnnotatedImage,
    labels: &LabelTable,
    regions: &[RegionSpec],
    recipe: &RecipeConfig,
    with_descriptions: bool,
) -> (String, Vec<String>) {
    let join = |lines: Vec<Line>| {
        lines
            .into_iter()
            .filter_map(|l| match l {
                Line::Text(s) => Some(s),
                Line::Visual(..) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut part = Vec::new();
    if recipe.caption {
        part.extend(caption_lines(image));
    }
    if recipe.labels {
        part.extend(label_lines(image, labels, with_descriptions && recipe.descriptions));
    }
    let region_texts = if recipe.regions {
        regions.iter().map(|r| join(region_text_lines(r, labels))).collect()
    } else {
        Vec::new()
    };
    (join(part), region_texts)
}
