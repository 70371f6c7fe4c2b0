//! End-to-end corpus build over one or more sources.
//!
//! Stages run in order: cleansing, caption fill-in, region construction, a
//! serial vocabulary pass, and a parallel sampling pass over
//! `(source, image, repetition)` units. Units are independent and keyed by
//! their own seeds, so output is identical for any worker count. Results
//! are merged in `(source name, image id, repetition)` order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cleanse::{filter_and_resize, compute_frequencies, prune_labels, CleanseConfig, CleanseError, DropRecord};
use crate::compose::{ComposeError, RecipeConfig, RenderedDocument};
use crate::regions::{build_regions, RegionConfig, RegionError, RegionSpec};
use crate::schema::{AnnotatedImage, LabelTable};
use crate::sequence::{
    observe_unit, sample_once, Discard, MockTextTokenizer, MockVisualTokenizer, PackOutcome, SampleConfig,
    SequenceError, TokenizedSample, TokenizerSpec, Unit,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cleanse: {0}")]
    Cleanse(#[from] CleanseError),
    #[error("regions of image `{image_id}`: {source}")]
    Region { image_id: String, source: RegionError },
    #[error("compose: {0}")]
    Compose(#[from] ComposeError),
    #[error("sequence ({locus}): {source}")]
    Sequence { locus: String, source: SequenceError },
    #[error("worker pool: {0}")]
    Workers(String),
}

/// Validated records of one source.
#[derive(Debug, Clone)]
pub struct SourceData {
    pub name: String,
    pub images: Vec<AnnotatedImage>,
    pub labels: LabelTable,
}

#[derive(Debug, Clone)]
pub struct CleansedSource {
    pub name: String,
    pub images: Vec<AnnotatedImage>,
    pub labels: LabelTable,
    pub drops: Vec<DropRecord>,
    pub removed_labels: usize,
    pub repeat: u32,
}

/// Label pruning with frequencies counted over the whole source, then the
/// per-image size filters and canvas resize.
pub fn cleanse_source(source: SourceData, config: &CleanseConfig) -> Result<CleansedSource, CleanseError> {
    config.validate()?;
    let thresholds = config.thresholds_for(&source.name)?;
    let freq = compute_frequencies(&source.images);
    let pruned = prune_labels(source.images, &freq, thresholds);
    let mut images = Vec::with_capacity(pruned.images.len());
    let mut drops = Vec::new();
    for img in &pruned.images {
        match filter_and_resize(img, config) {
            Ok(kept) => images.push(kept),
            Err(reason) => drops.push(DropRecord { image_id: img.id.clone(), reason }),
        }
    }
    Ok(CleansedSource {
        repeat: config.repeat_for(&source.name),
        name: source.name,
        images,
        labels: source.labels,
        drops,
        removed_labels: pruned.removed_labels.len(),
    })
}

/// Gives captionless images their selected caption. Returns how many were
/// filled.
pub fn fill_captions(images: &mut [AnnotatedImage], selected: &BTreeMap<String, String>) -> usize {
    let mut filled = 0;
    for img in images.iter_mut().filter(|i| i.caption.is_none()) {
        if let Some(c) = selected.get(&img.id) {
            img.caption = Some(c.clone());
            filled += 1;
        }
    }
    filled
}

#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub image: AnnotatedImage,
    pub regions: Vec<RegionSpec>,
}

#[derive(Debug, Clone)]
pub struct PreparedSource {
    pub name: String,
    pub labels: LabelTable,
    pub images: Vec<PreparedImage>,
    pub repeat: u32,
    pub drops: Vec<DropRecord>,
}

pub fn prepare_source(source: CleansedSource, config: &RegionConfig) -> Result<PreparedSource, PipelineError> {
    let images = source
        .images
        .into_iter()
        .map(|image| {
            let regions =
                build_regions(&image, config).map_err(|e| PipelineError::Region { image_id: image.id.clone(), source: e })?;
            Ok(PreparedImage { image, regions })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(PreparedSource { name: source.name, labels: source.labels, images, repeat: source.repeat, drops: source.drops })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub recipe: RecipeConfig,
    pub sample: SampleConfig,
    pub tokenizer: TokenizerSpec,
    /// Worker threads; 0 picks the pool default.
    pub workers: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            recipe: RecipeConfig::CLDR,
            sample: SampleConfig::default(),
            tokenizer: TokenizerSpec::default(),
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDiscard {
    pub source: String,
    #[serde(flatten)]
    pub discard: Discard,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub samples: Vec<TokenizedSample>,
    pub documents: Vec<RenderedDocument>,
    pub discards: Vec<SourceDiscard>,
    pub vocab: MockTextTokenizer,
}

struct UnitKey {
    source: usize,
    image: usize,
    repetition: u32,
}

fn run_units<F>(keys: &[UnitKey], workers: usize, f: F) -> Result<Vec<PackOutcome>, PipelineError>
where
    F: Fn(&UnitKey) -> Result<PackOutcome, PipelineError> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| PipelineError::Workers(e.to_string()))?;
        pool.install(|| keys.par_iter().map(&f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        keys.iter().map(f).collect()
    }
}

/// Samples every image of every source `repeat` times.
pub fn build_samples(sources: &[PreparedSource], config: &BuildConfig) -> Result<BuildOutput, PipelineError> {
    config.recipe.validate()?;
    config.sample.loss.validate().map_err(|e| PipelineError::Sequence { locus: "config".into(), source: e })?;
    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.sort_by(|&a, &b| sources[a].name.cmp(&sources[b].name));

    let unit = |s: usize, i: usize| {
        let src = &sources[s];
        let p = &src.images[i];
        Unit { image: &p.image, labels: &src.labels, regions: &p.regions, recipe: &config.recipe }
    };

    let mut vocab = MockTextTokenizer::new(config.tokenizer);
    let mut keys = Vec::new();
    for &s in &order {
        for i in 0..sources[s].images.len() {
            observe_unit(&mut vocab, &unit(s, i)).map_err(|e| PipelineError::Sequence {
                locus: format!("{}/{}", sources[s].name, sources[s].images[i].image.id),
                source: e,
            })?;
            for repetition in 0..sources[s].repeat {
                keys.push(UnitKey { source: s, image: i, repetition });
            }
        }
    }
    let visual = MockVisualTokenizer::new(config.tokenizer);

    let outcomes = run_units(&keys, config.workers, |k| {
        sample_once(&unit(k.source, k.image), k.repetition, &config.sample, &vocab, &visual).map_err(|e| {
            PipelineError::Sequence {
                locus: format!("{}/{}#{}", sources[k.source].name, sources[k.source].images[k.image].image.id, k.repetition),
                source: e,
            }
        })
    })?;

    let mut out = BuildOutput { samples: Vec::new(), documents: Vec::new(), discards: Vec::new(), vocab };
    for (k, outcome) in keys.iter().zip(outcomes) {
        let name = &sources[k.source].name;
        match outcome {
            PackOutcome::Packed { document, mut sample } => {
                sample.provenance.source = name.clone();
                out.samples.push(sample);
                out.documents.push(document);
            }
            PackOutcome::Discard(discard) => out.discards.push(SourceDiscard { source: name.clone(), discard }),
        }
    }
    Ok(out)
}
