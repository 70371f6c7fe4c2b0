//! Label frequency pruning, image filtering, canvas resizing and
//! concept-coverage downsampling of caption pools.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{AnnotatedImage, BoundingBox, LabelKind};
use crate::seed::{rng_for, Stream};
use crate::CANVAS;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CleanseError {
    #[error("no label thresholds configured for source `{0}`")]
    UnknownSource(String),
    #[error("downsample cap must be at least 1")]
    InvalidCap,
    #[error("invalid cleanse config: {0}")]
    InvalidConfig(String),
}

/// Minimum occurrence count per label kind. Labels seen fewer times are
/// pruned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KindThresholds {
    pub object: u64,
    pub attribute: u64,
    pub relationship: u64,
}

impl KindThresholds {
    pub fn get(&self, kind: LabelKind) -> u64 {
        match kind {
            LabelKind::Object => self.object,
            LabelKind::Attribute => self.attribute,
            LabelKind::Relationship => self.relationship,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanseConfig {
    pub min_short_edge: u32,
    pub aspect_ratio_max: f64,
    pub aspect_ratio_min: f64,
    /// Per-source label thresholds. A source must have an entry here to be
    /// pruned; all-zero thresholds disable pruning.
    pub label_min_freq: BTreeMap<String, KindThresholds>,
    /// Per-source repetition count for sample generation; absent means 1.
    pub repeat_factor: BTreeMap<String, u32>,
}

impl Default for CleanseConfig {
    fn default() -> Self {
        let label_min_freq = BTreeMap::from([
            ("open_images".to_string(), KindThresholds::default()),
            ("objects365".to_string(), KindThresholds::default()),
            ("v3det".to_string(), KindThresholds { object: 3, ..Default::default() }),
            (
                "visual_genome".to_string(),
                KindThresholds { object: 2, attribute: 5, relationship: 5 },
            ),
        ]);
        let repeat_factor = BTreeMap::from([("v3det".to_string(), 3), ("visual_genome".to_string(), 3)]);
        Self {
            min_short_edge: CANVAS,
            aspect_ratio_max: 3.0,
            aspect_ratio_min: 0.33,
            label_min_freq,
            repeat_factor,
        }
    }
}

impl CleanseConfig {
    pub fn validate(&self) -> Result<(), CleanseError> {
        let (lo, hi) = (self.aspect_ratio_min, self.aspect_ratio_max);
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(CleanseError::InvalidConfig(format!(
                "aspect ratio bounds [{lo}, {hi}] are not a positive interval"
            )));
        }
        if let Some((name, _)) = self.repeat_factor.iter().find(|(_, &f)| f == 0) {
            return Err(CleanseError::InvalidConfig(format!("repeat factor for `{name}` must be >= 1")));
        }
        Ok(())
    }

    pub fn thresholds_for(&self, source: &str) -> Result<KindThresholds, CleanseError> {
        self.label_min_freq
            .get(source)
            .copied()
            .ok_or_else(|| CleanseError::UnknownSource(source.to_string()))
    }

    pub fn repeat_for(&self, source: &str) -> u32 {
        self.repeat_factor.get(source).copied().unwrap_or(1)
    }
}

/// Occurrence counts per `(label, kind)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: BTreeMap<(String, LabelKind), u64>,
}

impl FrequencyTable {
    pub fn add(&mut self, label: &str, kind: LabelKind, n: u64) {
        *self.counts.entry((label.to_string(), kind)).or_default() += n;
    }

    pub fn get(&self, label: &str, kind: LabelKind) -> u64 {
        self.counts.get(&(label.to_string(), kind)).copied().unwrap_or(0)
    }

    /// Associative, commutative merge of two shard tables.
    pub fn merge(mut self, other: &FrequencyTable) -> FrequencyTable {
        for ((label, kind), n) in &other.counts {
            self.add(label, *kind, *n);
        }
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, LabelKind, u64)> {
        self.counts.iter().map(|((l, k), n)| (l.as_str(), *k, *n))
    }

    pub fn of_kind(&self, kind: LabelKind) -> impl Iterator<Item = (&str, u64)> {
        self.iter().filter(move |(_, k, _)| *k == kind).map(|(l, _, n)| (l, n))
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Counts every object, attribute and relationship annotation once.
pub fn compute_frequencies<'a>(images: impl IntoIterator<Item = &'a AnnotatedImage>) -> FrequencyTable {
    let mut t = FrequencyTable::default();
    for img in images {
        for o in &img.objects {
            t.add(&o.label, LabelKind::Object, 1);
        }
        for a in &img.attributes {
            t.add(&a.label, LabelKind::Attribute, 1);
        }
        for r in &img.relationships {
            t.add(&r.label, LabelKind::Relationship, 1);
        }
    }
    t
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PruneOutcome {
    pub images: Vec<AnnotatedImage>,
    pub removed_labels: BTreeSet<(LabelKind, String)>,
    pub removed_objects: usize,
    pub removed_attributes: usize,
    pub removed_relationships: usize,
}

/// Removes labels below their kind's threshold together with every
/// annotation that references a removed label or a removed object.
/// Attribute annotations lose removed members and disappear when none remain.
pub fn prune_labels(images: Vec<AnnotatedImage>, table: &FrequencyTable, thresholds: KindThresholds) -> PruneOutcome {
    let removed_labels: BTreeSet<(LabelKind, String)> = table
        .iter()
        .filter(|(_, kind, n)| *n < thresholds.get(*kind))
        .map(|(l, k, _)| (k, l.to_string()))
        .collect();
    let gone = |kind: LabelKind, label: &str| removed_labels.contains(&(kind, label.to_string()));

    let mut out = PruneOutcome::default();
    for mut img in images {
        let before = img.objects.len();
        img.objects.retain(|o| !gone(LabelKind::Object, &o.label));
        out.removed_objects += before - img.objects.len();
        let alive: HashSet<String> = img.objects.iter().map(|o| o.id.clone()).collect();
        let (attrs, rels, removed_attrs, removed_rels) = cascade(&img, &alive, &gone);
        img.attributes = attrs;
        img.relationships = rels;
        out.removed_attributes += removed_attrs;
        out.removed_relationships += removed_rels;
        out.images.push(img);
    }
    out.removed_labels = removed_labels;
    out
}

type Cascade = (
    Vec<crate::schema::AttributeAnnotation>,
    Vec<crate::schema::RelationshipAnnotation>,
    usize,
    usize,
);

fn cascade(img: &AnnotatedImage, alive: &HashSet<String>, gone: &dyn Fn(LabelKind, &str) -> bool) -> Cascade {
    let mut attrs = Vec::new();
    let mut removed_attrs = 0;
    for a in &img.attributes {
        let members: Vec<String> = a.member_ids.iter().filter(|m| alive.contains(*m)).cloned().collect();
        if gone(LabelKind::Attribute, &a.label) || members.is_empty() {
            removed_attrs += 1;
        } else {
            attrs.push(crate::schema::AttributeAnnotation { label: a.label.clone(), member_ids: members });
        }
    }
    let before = img.relationships.len();
    let rels: Vec<_> = img
        .relationships
        .iter()
        .filter(|r| {
            !gone(LabelKind::Relationship, &r.label) && alive.contains(&r.subject_id) && alive.contains(&r.object_id)
        })
        .cloned()
        .collect();
    let removed_rels = before - rels.len();
    (attrs, rels, removed_attrs, removed_rels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    ShortEdge,
    AspectRatio,
    NoObjects,
}

/// One line of the drop report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub image_id: String,
    pub reason: DropReason,
}

/// `round(value * target / source)` with ties to even, in exact integer
/// arithmetic.
pub fn rescale_half_even(value: u32, target: u32, source: u32) -> u32 {
    let num = value as u64 * target as u64;
    let den = source as u64;
    let (q, r) = (num / den, num % den);
    let q = match (2 * r).cmp(&den) {
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
        std::cmp::Ordering::Less => q,
    };
    q as u32
}

/// Maps a source-frame box onto the canvas. `None` when it degenerates.
pub fn rescale_box(b: BoundingBox, src_w: u32, src_h: u32) -> Option<BoundingBox> {
    let x = rescale_half_even(b.x, CANVAS, src_w).min(CANVAS);
    let y = rescale_half_even(b.y, CANVAS, src_h).min(CANVAS);
    let w = rescale_half_even(b.w, CANVAS, src_w).min(CANVAS - x);
    let h = rescale_half_even(b.h, CANVAS, src_h).min(CANVAS - y);
    (w > 0 && h > 0).then_some(BoundingBox::new(x, y, w, h))
}

/// Applies the short-edge and aspect-ratio filters, then resizes to the
/// square canvas. Objects whose boxes degenerate are removed (with their
/// attribute/relationship references); images left without objects are
/// dropped.
pub fn filter_and_resize(image: &AnnotatedImage, config: &CleanseConfig) -> Result<AnnotatedImage, DropReason> {
    let (w, h) = (image.width, image.height);
    if w.min(h) < config.min_short_edge {
        return Err(DropReason::ShortEdge);
    }
    let ratio = w as f64 / h as f64;
    if ratio > config.aspect_ratio_max || ratio < config.aspect_ratio_min {
        return Err(DropReason::AspectRatio);
    }
    let mut out = image.clone();
    out.width = CANVAS;
    out.height = CANVAS;
    out.objects = image
        .objects
        .iter()
        .filter_map(|o| {
            rescale_box(o.bbox, w, h).map(|bbox| crate::schema::ObjectAnnotation { bbox, ..o.clone() })
        })
        .collect();
    if out.objects.len() != image.objects.len() {
        let alive: HashSet<String> = out.objects.iter().map(|o| o.id.clone()).collect();
        let (attrs, rels, _, _) = cascade(&out, &alive, &|_, _| false);
        out.attributes = attrs;
        out.relationships = rels;
    }
    if out.objects.is_empty() {
        return Err(DropReason::NoObjects);
    }
    Ok(out)
}

/// One record of a concept-list file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionConcepts {
    pub caption_id: String,
    pub concepts: Vec<String>,
}

/// Selects captions so that every concept seen in at least `min_freq`
/// captions is covered, keeping at most `cap` captions per concept.
///
/// Concepts are visited in ascending frequency (ties by concept string).
/// Frequencies are the initial counts; selection does not decrement them.
/// The per-concept sample is drawn from a generator keyed by the concept, so
/// the result does not depend on visiting order.
pub fn coverage_downsample(
    captions: &[CaptionConcepts],
    min_freq: usize,
    cap: usize,
    seed: u64,
) -> Result<BTreeSet<String>, CleanseError> {
    if cap < 1 {
        return Err(CleanseError::InvalidCap);
    }
    let mut by_concept: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for c in captions {
        for concept in &c.concepts {
            by_concept.entry(concept.as_str()).or_default().insert(c.caption_id.as_str());
        }
    }
    let mut order: Vec<(usize, &str)> = by_concept.iter().map(|(k, v)| (v.len(), *k)).collect();
    order.sort();

    let mut selected = BTreeSet::new();
    for (freq, concept) in order {
        if freq < min_freq {
            continue;
        }
        let ids: Vec<&str> = by_concept[concept].iter().copied().collect();
        if ids.len() > cap {
            let mut rng = rng_for(seed, Stream::Downsample, &[concept.as_bytes()]);
            let mut picked = index::sample(&mut rng, ids.len(), cap).into_vec();
            picked.sort_unstable();
            selected.extend(picked.into_iter().map(|i| ids[i].to_string()));
        } else {
            selected.extend(ids.into_iter().map(str::to_string));
        }
    }
    Ok(selected)
}
