//! Corpus statistics, label-frequency histograms and concept overlap.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cleanse::FrequencyTable;
use crate::pipeline::PreparedSource;
use crate::schema::{LabelKind, LabelTable, AnnotatedImage};
use crate::sequence::{Modality, TokenizedSample};

/// Labels below this count are reported as low-frequency.
pub const LOW_FREQUENCY: u64 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("sample for image `{image_id}` names source `{source_name}`, which has no such image")]
    UnknownSample { source_name: String, image_id: String },
    #[error("unknown label kind `{0}`")]
    UnknownKind(String),
    #[error("evaluation concept set is empty; overlap is undefined")]
    EmptyEval,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRow {
    pub regions: u64,
    pub images: u64,
    /// Distinct `(kind, displayed label, description)` triples in use.
    pub concepts: u64,
    pub visual_tokens: u64,
    pub textual_tokens: u64,
    pub used_regions: u64,
    pub samples: u64,
}

impl StatsRow {
    fn add(&mut self, o: &StatsRow) {
        self.regions += o.regions;
        self.images += o.images;
        self.concepts += o.concepts;
        self.visual_tokens += o.visual_tokens;
        self.textual_tokens += o.textual_tokens;
        self.used_regions += o.used_regions;
        self.samples += o.samples;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub sources: BTreeMap<String, StatsRow>,
    /// Column sums over sources.
    pub total: StatsRow,
}

/// What a source contributes before sampling.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceInventory {
    pub name: String,
    pub image_ids: BTreeSet<String>,
    pub regions: u64,
    pub concepts: BTreeSet<(LabelKind, String, Option<String>)>,
}

impl SourceInventory {
    pub fn new<'a>(name: &str, labels: &LabelTable, images: impl IntoIterator<Item = (&'a AnnotatedImage, usize)>) -> Self {
        let mut inv = SourceInventory { name: name.to_string(), ..Default::default() };
        let mut concept = |kind: LabelKind, label: &str| {
            inv.concepts.insert((
                kind,
                labels.display(kind, label).to_string(),
                labels.description(kind, label).map(str::to_string),
            ));
        };
        let mut ids = BTreeSet::new();
        let mut regions = 0u64;
        for (img, n_regions) in images {
            ids.insert(img.id.clone());
            regions += n_regions as u64;
            for o in &img.objects {
                concept(LabelKind::Object, &o.label);
            }
            for a in &img.attributes {
                concept(LabelKind::Attribute, &a.label);
            }
            for r in &img.relationships {
                concept(LabelKind::Relationship, &r.label);
            }
        }
        inv.image_ids = ids;
        inv.regions = regions;
        inv
    }

    pub fn of_source(src: &PreparedSource) -> Self {
        SourceInventory::new(&src.name, &src.labels, src.images.iter().map(|p| (&p.image, p.regions.len())))
    }
}

/// Per-source rows from the inventories and the emitted samples. Samples
/// are attributed by `provenance.source`.
pub fn compute_stats(inventories: &[SourceInventory], samples: &[TokenizedSample]) -> Result<StatsReport, ReportError> {
    let mut report = StatsReport::default();
    let by_name: BTreeMap<&str, &SourceInventory> = inventories.iter().map(|i| (i.name.as_str(), i)).collect();
    for inv in inventories {
        let row = report.sources.entry(inv.name.clone()).or_default();
        row.images += inv.image_ids.len() as u64;
        row.regions += inv.regions;
        row.concepts += inv.concepts.len() as u64;
    }
    for s in samples {
        let p = &s.provenance;
        let known = by_name.get(p.source.as_str()).is_some_and(|inv| inv.image_ids.contains(&p.image_id));
        if !known {
            return Err(ReportError::UnknownSample { source_name: p.source.clone(), image_id: p.image_id.clone() });
        }
        let row = report.sources.get_mut(&p.source).expect("inventory row exists");
        row.samples += 1;
        row.used_regions += p.regions.len() as u64;
        for m in &s.modality {
            match m {
                Modality::Visual => row.visual_tokens += 1,
                Modality::Text => row.textual_tokens += 1,
                Modality::Special => {}
            }
        }
    }
    for row in report.sources.values() {
        report.total.add(row);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub kind: LabelKind,
    /// `(label, count)` by descending count, ties by label.
    pub series: Vec<(String, u64)>,
    /// Fraction of labels seen fewer than [`LOW_FREQUENCY`] times.
    pub low_frequency_share: f64,
}

pub fn frequency_histogram(table: &FrequencyTable, kind: &str) -> Result<Histogram, ReportError> {
    let kind: LabelKind = kind.parse().map_err(|_| ReportError::UnknownKind(kind.to_string()))?;
    let mut series: Vec<(String, u64)> = table.of_kind(kind).map(|(l, n)| (l.to_string(), n)).collect();
    series.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let low = series.iter().filter(|(_, n)| *n < LOW_FREQUENCY).count();
    let low_frequency_share = if series.is_empty() { 0.0 } else { low as f64 / series.len() as f64 };
    Ok(Histogram { kind, series, low_frequency_share })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub covered: u64,
    pub total: u64,
    pub percentage: f64,
}

/// Lowercases and collapses runs of whitespace.
pub fn normalize_concept(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Share of the evaluation concepts that appear in the training concepts,
/// with set semantics after normalization.
pub fn concept_overlap<'a, T, E>(train: T, eval: E) -> Result<OverlapReport, ReportError>
where
    T: IntoIterator<Item = &'a str>,
    E: IntoIterator<Item = &'a str>,
{
    let norm = |it: &mut dyn Iterator<Item = &'a str>| -> BTreeSet<String> {
        it.map(normalize_concept).filter(|c| !c.is_empty()).collect()
    };
    let train = norm(&mut train.into_iter());
    let eval = norm(&mut eval.into_iter());
    if eval.is_empty() {
        return Err(ReportError::EmptyEval);
    }
    let covered = eval.iter().filter(|c| train.contains(*c)).count() as u64;
    let total = eval.len() as u64;
    Ok(OverlapReport { covered, total, percentage: covered as f64 * 100.0 / total as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_order_and_share() {
        let mut t = FrequencyTable::default();
        t.add("a", LabelKind::Object, 3);
        t.add("b", LabelKind::Object, 3);
        t.add("c", LabelKind::Object, 10);
        t.add("z", LabelKind::Attribute, 1);
        let h = frequency_histogram(&t, "object").unwrap();
        let names: Vec<_> = h.series.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(names, ["c", "a", "b"]);
        assert!((h.low_frequency_share - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(frequency_histogram(&t, "colour"), Err(ReportError::UnknownKind("colour".into())));
    }

    #[test]
    fn overlap_cases() {
        let r = concept_overlap(["a", "b", "c"], ["b", "c", "d"]).unwrap();
        assert_eq!((r.covered, r.total), (2, 3));
        assert!((r.percentage - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(concept_overlap(["Red  Car"], ["red car"]).unwrap().percentage, 100.0);
        assert_eq!(concept_overlap(["x"], ["y"]).unwrap().percentage, 0.0);
        assert_eq!(concept_overlap(["x"], Vec::<&str>::new()), Err(ReportError::EmptyEval));
    }

    #[test]
    fn empty_corpus_is_all_zero() {
        assert_eq!(compute_stats(&[], &[]).unwrap(), StatsReport::default());
    }
}
