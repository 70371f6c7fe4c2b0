#![allow(dead_code)]

use mgic_core::compose::RecipeConfig;
use mgic_core::pipeline::{cleanse_source, prepare_source, PreparedSource, SourceData};
use mgic_core::regions::{build_regions, GridCell, RegionConfig, RegionSpec, Square};
use mgic_core::schema::{
    AnnotatedImage, AttributeAnnotation, BoundingBox, LabelEntry, LabelKind, LabelTable, ObjectAnnotation,
    RelationshipAnnotation,
};
use mgic_core::cleanse::CleanseConfig;
use mgic_core::CANVAS;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn obj(image: &str, id: &str, label: &str, bbox: (u32, u32, u32, u32)) -> ObjectAnnotation {
    ObjectAnnotation {
        id: id.into(),
        image_id: image.into(),
        bbox: BoundingBox::new(bbox.0, bbox.1, bbox.2, bbox.3),
        label: label.into(),
    }
}

pub fn entry(kind: LabelKind, name: &str, description: Option<&str>) -> LabelEntry {
    LabelEntry { name: name.into(), kind, description: description.map(str::to_string), rename: None }
}

/// The record behind the golden template files.
pub fn golden_image() -> AnnotatedImage {
    AnnotatedImage {
        id: "img-1".into(),
        width: CANVAS,
        height: CANVAS,
        caption: Some("A brown dog leaps to catch a red frisbee on the lawn.".into()),
        localized_narrative: Some("In this picture we can see a dog jumping and a frisbee in the air.".into()),
        split: None,
        objects: vec![obj("img-1", "o1", "dog", (10, 70, 90, 80)), obj("img-1", "o2", "frisbee", (160, 20, 40, 30))],
        attributes: vec![
            AttributeAnnotation { label: "airborne".into(), member_ids: vec!["o1".into()] },
            AttributeAnnotation { label: "brown".into(), member_ids: vec!["o1".into()] },
            AttributeAnnotation { label: "airborne".into(), member_ids: vec!["o2".into()] },
        ],
        relationships: vec![
            RelationshipAnnotation { label: "catching".into(), subject_id: "o1".into(), object_id: "o2".into() },
            RelationshipAnnotation { label: "near".into(), subject_id: "o1".into(), object_id: "o2".into() },
            RelationshipAnnotation { label: "near".into(), subject_id: "o2".into(), object_id: "o1".into() },
        ],
    }
}

pub fn golden_labels() -> LabelTable {
    let mut t = LabelTable::new();
    for e in [
        entry(LabelKind::Object, "dog", Some("A domesticated four-legged animal with fur and a tail.")),
        entry(LabelKind::Object, "frisbee", Some("A flat plastic disc thrown and caught in games.")),
        entry(LabelKind::Attribute, "airborne", Some("Moving or suspended in the air.")),
        entry(LabelKind::Attribute, "brown", Some("A dark color like wood or soil.")),
        entry(LabelKind::Relationship, "catching", Some("Seizing something that is moving through the air.")),
        entry(LabelKind::Relationship, "near", Some("Located a short distance away.")),
    ] {
        t.insert(e);
    }
    t
}

pub fn golden_regions() -> Vec<RegionSpec> {
    vec![
        RegionSpec {
            square: Square { x0: 10, y0: 65, side: 90 },
            source_object_id: "o1".into(),
            labels: vec!["dog".into(), "frisbee".into()],
            location: GridCell::MiddleLeft,
        },
        RegionSpec {
            square: Square { x0: 160, y0: 15, side: 40 },
            source_object_id: "o2".into(),
            labels: vec!["frisbee".into()],
            location: GridCell::TopRight,
        },
    ]
}

const OBJECTS: &[&str] = &["dog", "cat", "red car", "traffic light", "tree", "person", "bench", "kite", "batter (baseball player)"];
const ATTRIBUTES: &[&str] = &["red", "wooden", "tall", "striped", "shiny"];
const RELATIONS: &[&str] = &["on", "next to", "holding", "behind"];
const WORDS: &[&str] = &["a", "the", "small", "dog", "runs", "across", "green", "field", "near", "old", "wooden", "bench", "while", "people", "watch"];

pub fn sentence(r: &mut impl Rng, lo: usize, hi: usize) -> String {
    let n = r.random_range(lo..=hi);
    let mut s: Vec<&str> = (0..n).map(|_| *WORDS.choose(r).unwrap()).collect();
    s[0] = "A";
    format!("{}.", s.join(" "))
}

/// Label table covering every label the random generators use. Some labels
/// lack descriptions and some carry display renames.
pub fn random_labels(r: &mut impl Rng) -> LabelTable {
    let mut t = LabelTable::new();
    for (kind, names) in [(LabelKind::Object, OBJECTS), (LabelKind::Attribute, ATTRIBUTES), (LabelKind::Relationship, RELATIONS)] {
        for n in names {
            let description = r.random_bool(0.8).then(|| sentence(r, 3, 12));
            let mut e = LabelEntry { name: n.to_string(), kind, description, rename: None };
            if kind == LabelKind::Object && *n == "kite" {
                e.rename = Some("kite (toy)".into());
            }
            t.insert(e);
        }
    }
    t
}

/// A canvas-sized image with random objects, attributes and relations.
pub fn random_image(r: &mut impl Rng, id: &str, size: u32) -> AnnotatedImage {
    let n = r.random_range(1..=6);
    let mut objects = Vec::new();
    for k in 0..n {
        let w = r.random_range(1..=size);
        let h = r.random_range(1..=size);
        let x = r.random_range(0..=size - w);
        let y = r.random_range(0..=size - h);
        objects.push(obj(id, &format!("{id}-o{k}"), OBJECTS.choose(r).unwrap(), (x, y, w, h)));
    }
    let mut attributes = Vec::new();
    for _ in 0..r.random_range(0..=3) {
        let m = r.random_range(1..=objects.len());
        let members = objects.choose_multiple(r, m).map(|o| o.id.clone()).collect();
        attributes.push(AttributeAnnotation { label: ATTRIBUTES.choose(r).unwrap().to_string(), member_ids: members });
    }
    let mut relationships = Vec::new();
    for _ in 0..r.random_range(0..=3) {
        let s = objects.choose(r).unwrap().id.clone();
        let o = objects.choose(r).unwrap().id.clone();
        relationships.push(RelationshipAnnotation { label: RELATIONS.choose(r).unwrap().to_string(), subject_id: s, object_id: o });
    }
    AnnotatedImage {
        id: id.into(),
        width: size,
        height: size,
        caption: r.random_bool(0.8).then(|| sentence(r, 5, 20)),
        localized_narrative: r.random_bool(0.5).then(|| sentence(r, 8, 30)),
        split: None,
        objects,
        attributes,
        relationships,
    }
}

pub fn random_unit(seed: u64) -> (AnnotatedImage, LabelTable, Vec<RegionSpec>) {
    let mut r = rng(seed);
    let labels = random_labels(&mut r);
    let image = random_image(&mut r, &format!("img{seed}"), CANVAS);
    let regions = build_regions(&image, &RegionConfig::default()).unwrap();
    (image, labels, regions)
}

pub fn random_recipe(r: &mut impl Rng) -> RecipeConfig {
    loop {
        let labels = r.random_bool(0.5);
        let rec = RecipeConfig {
            caption: r.random_bool(0.5),
            labels,
            descriptions: labels && r.random_bool(0.5),
            regions: r.random_bool(0.5),
        };
        if !rec.is_empty() {
            return rec;
        }
    }
}

/// Two small sources run through cleansing and region construction.
pub fn fixture_sources(seed: u64, per_source: usize) -> Vec<PreparedSource> {
    let mut r = rng(seed);
    ["visual_genome", "v3det"]
        .iter()
        .map(|name| {
            let labels = random_labels(&mut r);
            let images = (0..per_source)
                .map(|i| {
                    let mut img = random_image(&mut r, &format!("{name}-{i:03}"), 448);
                    if i % 7 == 3 {
                        img.width = 200;
                    }
                    img
                })
                .collect();
            let cleansed = cleanse_source(SourceData { name: name.to_string(), images, labels }, &CleanseConfig::default()).unwrap();
            prepare_source(cleansed, &RegionConfig::default()).unwrap()
        })
        .collect()
}

/// One id per word with no vocabulary to maintain.
pub struct HashText;

impl mgic_core::sequence::TextTokenizer for HashText {
    fn encode(&self, text: &str) -> Result<Vec<u32>, mgic_core::sequence::SequenceError> {
        Ok(mgic_core::sequence::split_words(text)
            .into_iter()
            .map(|w| 4 + w.bytes().fold(0u32, |h, b| h.wrapping_mul(31).wrapping_add(b as u32)) % 1000)
            .collect())
    }
}

/// Visual runs of fixed length: `image_len` for whole images, `region_len`
/// for region keys (those containing `#`).
pub struct FixedVisual {
    pub image_len: usize,
    pub region_len: usize,
}

impl mgic_core::sequence::VisualTokenizer for FixedVisual {
    fn encode(&self, key: &str) -> Result<Vec<u32>, mgic_core::sequence::SequenceError> {
        let n = if key.contains('#') { self.region_len } else { self.image_len };
        Ok(vec![32_000; n])
    }
}

/// A canvas image with `n` well separated 40px objects, each yielding one
/// region.
pub fn many_region_image(id: &str, n: usize) -> AnnotatedImage {
    let objects = (0..n)
        .map(|k| {
            let (row, col) = ((k / 5) as u32, (k % 5) as u32);
            obj(id, &format!("{id}-o{k:02}"), OBJECTS[k % OBJECTS.len()], (col * 44, row * 36, 40, 30))
        })
        .collect();
    AnnotatedImage {
        id: id.into(),
        width: CANVAS,
        height: CANVAS,
        caption: Some("A crowded scene with many objects.".into()),
        localized_narrative: None,
        split: None,
        objects,
        attributes: vec![],
        relationships: vec![],
    }
}
