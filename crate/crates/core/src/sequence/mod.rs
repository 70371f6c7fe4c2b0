//! Token sequences: assembly, packing under a length budget, repetition
//! passes and per-token loss weights.

mod io;
mod tokenizer;

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compose::{
    choose_variant, render_document, ComposeError, RecipeConfig, RenderedDocument, Segment, SftSample, SftSegment,
    TemplateKind, Variant,
};
use crate::regions::RegionSpec;
use crate::schema::{AnnotatedImage, LabelTable};
use crate::seed::{unit_rng, Stream};

pub use io::{read_binary, read_jsonl, write_binary, write_jsonl, BINARY_MAGIC, BINARY_VERSION};
pub use tokenizer::{
    split_words, MockTextTokenizer, MockVisualTokenizer, TextTokenizer, TokenizerSpec, VisualTokenizer,
    MAX_VISUAL_LEN, MIN_VISUAL_LEN,
};

pub const DEFAULT_BUDGET: usize = 2048;

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("text vocabulary full ({capacity} content ids)")]
    VocabOverflow { capacity: u32 },
    #[error("word `{0}` is not in the vocabulary")]
    UnknownWord(String),
    #[error("invalid vocabulary file: {0}")]
    BadVocab(String),
    #[error("unresolved visual reference `{0}`")]
    UnresolvedRef(String),
    #[error("answer span {span:?} cuts through a visual run")]
    SpanInsideVisualRun { span: Range<usize> },
    #[error("answer span {span:?} out of bounds for {len} tokens")]
    SpanOutOfBounds { span: Range<usize>, len: usize },
    #[error("invalid loss config: {0}")]
    InvalidLossConfig(String),
    #[error("malformed sample file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Text = 0,
    Visual = 1,
    Special = 2,
}

impl Modality {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Modality::Text),
            1 => Some(Modality::Visual),
            2 => Some(Modality::Special),
            _ => None,
        }
    }
}

impl Serialize for Modality {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for Modality {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Modality::from_u8(v).ok_or_else(|| serde::de::Error::custom(format!("modality tag {v}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source: String,
    pub image_id: String,
    pub repetition: u32,
    /// Template kind for corpus samples, task name for SFT samples.
    pub kind: String,
    pub with_descriptions: bool,
    /// Region pool indices present in the sample.
    pub regions: Vec<usize>,
    pub visual_masked: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenizedSample {
    pub ids: Vec<u32>,
    pub modality: Vec<Modality>,
    pub weights: Vec<f32>,
    pub provenance: Provenance,
}

impl TokenizedSample {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn push(&mut self, id: u32, m: Modality) {
        self.ids.push(id);
        self.modality.push(m);
    }

    fn push_visual(&mut self, run: &[u32]) {
        self.push(TokenizerSpec::IMG_BEGIN, Modality::Special);
        for &id in run {
            self.push(id, Modality::Visual);
        }
        self.push(TokenizerSpec::IMG_END, Modality::Special);
    }

    pub fn count(&self, m: Modality) -> usize {
        self.modality.iter().filter(|&&x| x == m).count()
    }

    /// `[IMG] .. [/IMG]` spans, framing included.
    pub fn visual_runs(&self) -> Vec<Range<usize>> {
        let mut runs = Vec::new();
        let mut open = None;
        for (i, &id) in self.ids.iter().enumerate() {
            if id == TokenizerSpec::IMG_BEGIN {
                open = Some(i);
            } else if id == TokenizerSpec::IMG_END {
                if let Some(s) = open.take() {
                    runs.push(s..i + 1);
                }
            }
        }
        runs
    }
}

/// Visual key of a document segment.
pub fn segment_key(doc: &RenderedDocument, regions: &[RegionSpec], seg: &Segment) -> Option<String> {
    match seg {
        Segment::Text { .. } => None,
        Segment::Image { image_id } => Some(image_id.clone()),
        Segment::Region { index } => regions.get(*index).map(|r| r.visual_key(&doc.image_id)),
    }
}

/// `<s>`, text ids, `[IMG] visual [/IMG]` per visual segment, `</s>`.
/// Weights are left empty.
pub fn assemble<T, V>(
    doc: &RenderedDocument,
    regions: &[RegionSpec],
    text: &T,
    visual: &V,
) -> Result<TokenizedSample, SequenceError>
where
    T: TextTokenizer + ?Sized,
    V: VisualTokenizer + ?Sized,
{
    let mut s = TokenizedSample::default();
    s.push(TokenizerSpec::BOS, Modality::Special);
    for seg in &doc.segments {
        match seg {
            Segment::Text { text: t } => {
                for id in text.encode(t)? {
                    s.push(id, Modality::Text);
                }
            }
            Segment::Image { .. } | Segment::Region { .. } => {
                let key = segment_key(doc, regions, seg).ok_or_else(|| SequenceError::UnresolvedRef(format!("{seg:?}")))?;
                s.push_visual(&visual.encode(&key)?);
            }
        }
    }
    s.push(TokenizerSpec::EOS, Modality::Special);
    s.provenance = Provenance {
        image_id: doc.image_id.clone(),
        kind: kind_name(doc.template_kind).to_string(),
        with_descriptions: doc.with_descriptions,
        regions: doc.regions_included.clone(),
        ..Provenance::default()
    };
    Ok(s)
}

fn kind_name(k: TemplateKind) -> &'static str {
    match k {
        TemplateKind::ImageFirst => "image_first",
        TemplateKind::TextFirst => "text_first",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Loss scale of visual tokens relative to text tokens.
    pub alpha: f32,
    /// Per-sample probability that visual tokens carry no loss.
    pub mask_prob: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.1, mask_prob: 0.9 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), SequenceError> {
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(SequenceError::InvalidLossConfig(format!("mask_prob {} outside [0, 1]", self.mask_prob)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(SequenceError::InvalidLossConfig(format!("alpha {} must be finite and >= 0", self.alpha)));
        }
        Ok(())
    }
}

/// Whether the visual tokens of one `(image, repetition)` sample are masked.
pub fn draw_visual_mask(seed: u64, image_id: &str, repetition: u32, mask_prob: f64) -> bool {
    unit_rng(seed, Stream::Mask, image_id, repetition).random_bool(mask_prob)
}

/// Pre-training weights: text and `</s>` 1, leading `<s>` 0, and every
/// visual run with its framing either `alpha` or 0 when masked.
pub fn emit_loss_weights(sample: &mut TokenizedSample, config: &LossConfig, masked: bool) {
    let visual = if masked { 0.0 } else { config.alpha };
    let mut weights = vec![1.0f32; sample.len()];
    for run in sample.visual_runs() {
        weights[run].fill(visual);
    }
    if let Some(w) = weights.first_mut() {
        if sample.ids[0] == TokenizerSpec::BOS {
            *w = 0.0;
        }
    }
    sample.weights = weights;
    sample.provenance.visual_masked = masked;
}

/// SFT weights: 1 on text and `</s>` inside answer spans, `alpha` on visual
/// runs inside them, 0 elsewhere. Spans must not split a visual run.
pub fn emit_sft_mask(sample: &TokenizedSample, spans: &[Range<usize>], alpha: f32) -> Result<Vec<f32>, SequenceError> {
    let runs = sample.visual_runs();
    let mut weights = vec![0.0f32; sample.len()];
    for span in spans {
        if span.start > span.end || span.end > sample.len() {
            return Err(SequenceError::SpanOutOfBounds { span: span.clone(), len: sample.len() });
        }
        let cuts = |p: usize| runs.iter().any(|r| r.start < p && p < r.end);
        if cuts(span.start) || cuts(span.end) {
            return Err(SequenceError::SpanInsideVisualRun { span: span.clone() });
        }
        for i in span.clone() {
            let in_run = runs.iter().any(|r| r.contains(&i));
            weights[i] = if in_run { alpha } else { 1.0 };
        }
    }
    Ok(weights)
}

/// Tokenizes an SFT sample; each round's answer span runs from the first
/// answer token through its `</s>`.
pub fn assemble_sft<T, V>(sample: &SftSample, text: &T, visual: &V, alpha: f32) -> Result<(TokenizedSample, Vec<Range<usize>>), SequenceError>
where
    T: TextTokenizer + ?Sized,
    V: VisualTokenizer + ?Sized,
{
    let mut s = TokenizedSample::default();
    let mut spans = Vec::new();
    let mut answer_start: Option<usize> = None;
    for seg in sample.segments() {
        match seg {
            SftSegment::Bos => s.push(TokenizerSpec::BOS, Modality::Special),
            SftSegment::Eos => {
                s.push(TokenizerSpec::EOS, Modality::Special);
                let end = s.len();
                spans.push(answer_start.take().unwrap_or(end - 1)..end);
            }
            SftSegment::Text { text: t, answer } => {
                let ids = text.encode(&t)?;
                if answer && !ids.is_empty() {
                    answer_start.get_or_insert(s.len());
                }
                for id in ids {
                    s.push(id, Modality::Text);
                }
            }
            SftSegment::Image { image_ref, answer } => {
                if answer {
                    answer_start.get_or_insert(s.len());
                }
                s.push_visual(&visual.encode(&image_ref)?);
            }
        }
    }
    s.weights = emit_sft_mask(&s, &spans, alpha)?;
    s.provenance.kind = sample.task.name().to_string();
    Ok((s, spans))
}

/// Everything needed to render one image.
#[derive(Debug, Clone, Copy)]
pub struct Unit<'a> {
    pub image: &'a AnnotatedImage,
    pub labels: &'a LabelTable,
    pub regions: &'a [RegionSpec],
    pub recipe: &'a RecipeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discard {
    pub image_id: String,
    pub repetition: u32,
    /// Length with no regions and no descriptions.
    pub base_length: usize,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum PackOutcome {
    Packed { document: RenderedDocument, sample: TokenizedSample },
    Discard(Discard),
}

impl PackOutcome {
    pub fn sample(&self) -> Option<&TokenizedSample> {
        match self {
            PackOutcome::Packed { sample, .. } => Some(sample),
            PackOutcome::Discard(_) => None,
        }
    }
}

fn render_and_assemble<T, V>(unit: &Unit, order: &[usize], variant: Variant, text: &T, visual: &V) -> Result<(RenderedDocument, TokenizedSample), SequenceError>
where
    T: TextTokenizer + ?Sized,
    V: VisualTokenizer + ?Sized,
{
    let doc = render_document(unit.image, unit.labels, unit.regions, order, unit.recipe, variant)?;
    let sample = assemble(&doc, unit.regions, text, visual)?;
    Ok((doc, sample))
}

/// Keeps the longest prefix of `order` whose sample fits in `budget`.
/// Sample length grows with every added region, so the longest fitting
/// prefix is found by bisection. Falls back to the description-free
/// rendering when not even the bare document fits.
pub fn pack<T, V>(unit: &Unit, variant: Variant, order: &[usize], budget: usize, text: &T, visual: &V) -> Result<PackOutcome, SequenceError>
where
    T: TextTokenizer + ?Sized,
    V: VisualTokenizer + ?Sized,
{
    let order = if unit.recipe.regions { order } else { &[] };
    let mut attempts = vec![variant];
    if variant.with_descriptions {
        attempts.push(Variant { with_descriptions: false, ..variant });
    }
    let mut base_length = 0;
    for v in attempts {
        let (doc, sample) = render_and_assemble(unit, &[], v, text, visual)?;
        base_length = sample.len();
        if sample.len() > budget {
            continue;
        }
        let mut best = (doc, sample);
        let (mut lo, mut hi) = (0usize, order.len());
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            let (doc, sample) = render_and_assemble(unit, &order[..mid], v, text, visual)?;
            if sample.len() <= budget {
                lo = mid;
                best = (doc, sample);
            } else {
                hi = mid - 1;
            }
        }
        return Ok(PackOutcome::Packed { document: best.0, sample: best.1 });
    }
    Ok(PackOutcome::Discard(Discard { image_id: unit.image.id.clone(), repetition: 0, base_length, budget }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub seed: u64,
    pub budget: usize,
    pub loss: LossConfig,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { seed: 0, budget: DEFAULT_BUDGET, loss: LossConfig::default() }
    }
}

/// One `(image, repetition)` unit: variant draw, region shuffle, packing and
/// loss weights, each from its own keyed generator.
pub fn sample_once<T, V>(unit: &Unit, repetition: u32, config: &SampleConfig, text: &T, visual: &V) -> Result<PackOutcome, SequenceError>
where
    T: TextTokenizer + ?Sized,
    V: VisualTokenizer + ?Sized,
{
    let id = &unit.image.id;
    let variant = choose_variant(config.seed, id, repetition, unit.recipe);
    let mut order: Vec<usize> = (0..unit.regions.len()).collect();
    order.shuffle(&mut unit_rng(config.seed, Stream::Shuffle, id, repetition));
    let mut out = pack(unit, variant, &order, config.budget, text, visual)?;
    match &mut out {
        PackOutcome::Packed { sample, .. } => {
            sample.provenance.repetition = repetition;
            let masked = draw_visual_mask(config.seed, id, repetition, config.loss.mask_prob);
            emit_loss_weights(sample, &config.loss, masked);
        }
        PackOutcome::Discard(d) => d.repetition = repetition,
    }
    Ok(out)
}

/// Runs [`sample_once`] for repetitions `0..repeat`.
pub fn repetition_pass<T, V>(unit: &Unit, repeat: u32, config: &SampleConfig, text: &T, visual: &V) -> Result<Vec<PackOutcome>, SequenceError>
where
    T: TextTokenizer + ?Sized,
    V: VisualTokenizer + ?Sized,
{
    (0..repeat).map(|rep| sample_once(unit, rep, config, text, visual)).collect()
}

/// Adds every word any rendering of `unit` can produce. Descriptions and
/// all regions give a superset of the words of every other variant.
pub fn observe_unit(tok: &mut MockTextTokenizer, unit: &Unit) -> Result<(), SequenceError> {
    let all: Vec<usize> = (0..unit.regions.len()).collect();
    for with_descriptions in [true, false] {
        let v = Variant { kind: TemplateKind::ImageFirst, with_descriptions };
        let doc = render_document(unit.image, unit.labels, unit.regions, &all, unit.recipe, v)?;
        for seg in &doc.segments {
            if let Segment::Text { text } = seg {
                tok.observe(text)?;
            }
        }
    }
    Ok(())
}

pub fn observe_sft(tok: &mut MockTextTokenizer, sample: &SftSample) -> Result<(), SequenceError> {
    for seg in sample.segments() {
        if let SftSegment::Text { text, .. } = seg {
            tok.observe(&text)?;
        }
    }
    Ok(())
}
