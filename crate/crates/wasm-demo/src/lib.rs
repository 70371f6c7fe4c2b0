//! Browser demo: crops and label merging, template rendering, and a packing
//! and loss-weight preview for one image at a time.
//!
//! Every operation takes the annotation JSON and label JSONL as text and
//! returns a JSON string, so the page needs no bindings beyond strings. The
//! same functions are plain Rust and are exercised natively by the tests.

use mgic_core::cleanse::{filter_and_resize, CleanseConfig};
use mgic_core::compose::{choose_variant, render_document, RecipeConfig};
use mgic_core::regions::{build_regions, RegionConfig, RegionSpec};
use mgic_core::schema::{parse_corpus_str, AnnotatedImage, LabelTable};
use mgic_core::sequence::{
    observe_unit, sample_once, LossConfig, Modality, MockTextTokenizer, MockVisualTokenizer, PackOutcome, SampleConfig,
    TokenizerSpec, Unit,
};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

struct Prepared {
    original: AnnotatedImage,
    image: AnnotatedImage,
    labels: LabelTable,
    regions: Vec<RegionSpec>,
}

fn prepare(annotations: &str, labels: &str, image_id: &str) -> Result<Prepared, String> {
    let corpus = parse_corpus_str(annotations, labels).map_err(|e| e.to_string())?;
    if let Some(e) = corpus.errors.first() {
        return Err(format!("rejected record: {}", serde_json::to_string(e).unwrap_or_default()));
    }
    let original = if image_id.is_empty() {
        corpus.images.into_iter().next()
    } else {
        corpus.images.into_iter().find(|i| i.id == image_id)
    }
    .ok_or_else(|| "no matching image in the annotations".to_string())?;
    let image = filter_and_resize(&original, &CleanseConfig::default())
        .map_err(|r| format!("image dropped by the filters: {r:?}"))?;
    let regions = build_regions(&image, &RegionConfig::default()).map_err(|e| e.to_string())?;
    Ok(Prepared { original, image, labels: corpus.labels, regions })
}

fn parse_recipe(recipe: &str) -> Result<RecipeConfig, String> {
    recipe.parse::<RecipeConfig>().map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct RegionView<'a> {
    x0: u32,
    y0: u32,
    side: u32,
    source_object_id: &'a str,
    labels: &'a [String],
    location: &'static str,
}

/// Resized boxes and the regions built from them.
pub fn regions_json(annotations: &str, labels: &str, image_id: &str) -> Result<String, String> {
    let p = prepare(annotations, labels, image_id)?;
    let objects: Vec<_> = p
        .image
        .objects
        .iter()
        .map(|o| json!({"id": o.id, "label": o.label, "x": o.bbox.x, "y": o.bbox.y, "w": o.bbox.w, "h": o.bbox.h}))
        .collect();
    let regions: Vec<RegionView> = p
        .regions
        .iter()
        .map(|r| RegionView {
            x0: r.square.x0,
            y0: r.square.y0,
            side: r.square.side,
            source_object_id: &r.source_object_id,
            labels: &r.labels,
            location: r.location.name(),
        })
        .collect();
    Ok(json!({
        "image_id": p.image.id,
        "original": {"width": p.original.width, "height": p.original.height},
        "canvas": {"width": p.image.width, "height": p.image.height},
        "objects": objects,
        "regions": regions,
    })
    .to_string())
}

/// Document for one `(seed, repetition)` draw with every region included.
pub fn render_json(annotations: &str, labels: &str, image_id: &str, recipe: &str, seed: u64, repetition: u32) -> Result<String, String> {
    let p = prepare(annotations, labels, image_id)?;
    let recipe = parse_recipe(recipe)?;
    let variant = choose_variant(seed, &p.image.id, repetition, &recipe);
    let order: Vec<usize> = (0..p.regions.len()).collect();
    let doc = render_document(&p.image, &p.labels, &p.regions, &order, &recipe, variant).map_err(|e| e.to_string())?;
    Ok(json!({
        "template_kind": doc.template_kind,
        "with_descriptions": doc.with_descriptions,
        "text": doc.display_text(),
    })
    .to_string())
}

/// Packs one sample under `budget` and summarises its tokens as runs of equal
/// modality and weight.
#[allow(clippy::too_many_arguments)]
pub fn pack_json(
    annotations: &str,
    labels: &str,
    image_id: &str,
    recipe: &str,
    seed: u64,
    repetition: u32,
    budget: usize,
    mask_prob: f64,
) -> Result<String, String> {
    let p = prepare(annotations, labels, image_id)?;
    let recipe = parse_recipe(recipe)?;
    let loss = LossConfig { mask_prob, ..LossConfig::default() };
    loss.validate().map_err(|e| e.to_string())?;
    let unit = Unit { image: &p.image, labels: &p.labels, regions: &p.regions, recipe: &recipe };
    let spec = TokenizerSpec::default();
    let mut text = MockTextTokenizer::new(spec);
    observe_unit(&mut text, &unit).map_err(|e| e.to_string())?;
    let visual = MockVisualTokenizer::new(spec);
    let config = SampleConfig { seed, budget, loss };
    match sample_once(&unit, repetition, &config, &text, &visual).map_err(|e| e.to_string())? {
        PackOutcome::Discard(d) => Ok(json!({"packed": false, "base_length": d.base_length, "budget": d.budget}).to_string()),
        PackOutcome::Packed { document, sample } => {
            let mut runs: Vec<(Modality, f32, usize)> = Vec::new();
            for (&m, &w) in sample.modality.iter().zip(&sample.weights) {
                match runs.last_mut() {
                    Some((lm, lw, n)) if *lm == m && *lw == w => *n += 1,
                    _ => runs.push((m, w, 1)),
                }
            }
            let modality = |m: Modality| match m {
                Modality::Text => "text",
                Modality::Visual => "visual",
                Modality::Special => "special",
            };
            let runs: Vec<_> =
                runs.into_iter().map(|(m, w, n)| json!({"modality": modality(m), "weight": w, "len": n})).collect();
            Ok(json!({
                "packed": true,
                "length": sample.len(),
                "budget": budget,
                "text_tokens": sample.count(Modality::Text),
                "visual_tokens": sample.count(Modality::Visual),
                "special_tokens": sample.count(Modality::Special),
                "regions_included": document.regions_included,
                "regions_available": p.regions.len(),
                "with_descriptions": document.with_descriptions,
                "visual_masked": sample.provenance.visual_masked,
                "runs": runs,
                "text": document.display_text(),
            })
            .to_string())
        }
    }
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = regions)]
pub fn regions_js(annotations: &str, labels: &str, image_id: &str) -> Result<String, JsError> {
    js(regions_json(annotations, labels, image_id))
}

#[wasm_bindgen(js_name = render)]
pub fn render_js(annotations: &str, labels: &str, image_id: &str, recipe: &str, seed: u32, repetition: u32) -> Result<String, JsError> {
    js(render_json(annotations, labels, image_id, recipe, seed.into(), repetition))
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen(js_name = pack)]
pub fn pack_js(
    annotations: &str,
    labels: &str,
    image_id: &str,
    recipe: &str,
    seed: u32,
    repetition: u32,
    budget: u32,
    mask_prob: f64,
) -> Result<String, JsError> {
    js(pack_json(annotations, labels, image_id, recipe, seed.into(), repetition, budget as usize, mask_prob))
}
