mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;

use common::*;
use mgic_core::compose::*;
use mgic_core::schema::{parse_jsonl, LabelKind};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn fixture(rel: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn golden(kind: TemplateKind, with_descriptions: bool) -> String {
    let doc = render_document(
        &golden_image(),
        &golden_labels(),
        &golden_regions(),
        &[0, 1],
        &RecipeConfig::CLDR,
        Variant { kind, with_descriptions },
    )
    .unwrap();
    doc.display_text()
}

#[test]
fn golden_templates_match_byte_for_byte() {
    for (kind, kname) in [(TemplateKind::ImageFirst, "image_first"), (TemplateKind::TextFirst, "text_first")] {
        for (d, dname) in [(true, "with"), (false, "without")] {
            let expected = fixture(&format!("templates/{kname}_{dname}_descriptions.txt"));
            assert_eq!(golden(kind, d), expected, "{kname} {dname} descriptions");
        }
    }
}

#[test]
fn golden_sft_tasks_match_byte_for_byte() {
    let specs: Vec<SftSpec> = parse_jsonl("specs.jsonl", &fixture("sft/specs.jsonl")).unwrap();
    assert_eq!(specs.len(), SftTask::ALL.len());
    let mut seen = BTreeSet::new();
    for spec in &specs {
        let sample = render_sft(spec).unwrap();
        seen.insert(sample.task.name());
        assert_eq!(sample.display_text(), fixture(&format!("sft/{}.txt", sample.task.name())), "{}", sample.task);
    }
    assert_eq!(seen.len(), SftTask::ALL.len());
}

#[test]
fn caption_only_recipe_has_two_lines() {
    let img = golden_image();
    let recipe: RecipeConfig = "C".parse().unwrap();
    for kind in [TemplateKind::ImageFirst, TemplateKind::TextFirst] {
        let doc = render_document(&img, &golden_labels(), &golden_regions(), &[0, 1], &recipe, Variant { kind, with_descriptions: true })
            .unwrap();
        let mut lines = vec!["Image: [IMG]".to_string(), format!("Caption: {}", img.caption.as_ref().unwrap())];
        lines.push(format!("Localized narrative caption: {}", img.localized_narrative.as_ref().unwrap()));
        if kind == TemplateKind::TextFirst {
            lines.rotate_left(1);
        }
        assert_eq!(doc.display_text(), lines.join("\n") + "\n");
        assert!(!doc.with_descriptions);
        assert!(doc.regions_included.is_empty());
    }
    let mut no_ln = img.clone();
    no_ln.localized_narrative = None;
    let doc = render_document(&no_ln, &golden_labels(), &[], &[], &recipe, Variant { kind: TemplateKind::ImageFirst, with_descriptions: false }).unwrap();
    assert_eq!(doc.display_text(), format!("Image: [IMG]\nCaption: {}\n", no_ln.caption.unwrap()));
}

#[test]
fn empty_recipe_is_an_error() {
    let err = render_document(&golden_image(), &golden_labels(), &[], &[], &RecipeConfig::default(), Variant { kind: TemplateKind::ImageFirst, with_descriptions: false });
    assert_eq!(err, Err(ComposeError::EmptyRecipe));
}

/// Removes every description suffix and the heading qualifier, using only
/// the label table.
fn strip_descriptions(text: &str, labels: &mgic_core::schema::LabelTable) -> String {
    let descriptions: Vec<String> = labels.iter().filter_map(|e| e.description.clone()).collect();
    text.lines()
        .map(|l| {
            let l = l.replace(" and their descriptions:", ":");
            if l.starts_with("- ") {
                for d in &descriptions {
                    for sep in [" : ", ": "] {
                        if let Some(head) = l.strip_suffix(&format!("{sep}{d}")) {
                            return head.to_string();
                        }
                    }
                }
            }
            l
        })
        .map(|l| l + "\n")
        .collect()
}

#[test]
fn without_descriptions_is_the_stripped_with_variant() {
    for seed in 0..300u64 {
        let (img, labels, regions) = random_unit(seed);
        let order: Vec<usize> = (0..regions.len()).collect();
        for kind in [TemplateKind::ImageFirst, TemplateKind::TextFirst] {
            let with = render_document(&img, &labels, &regions, &order, &RecipeConfig::CLDR, Variant { kind, with_descriptions: true }).unwrap();
            let without = render_document(&img, &labels, &regions, &order, &RecipeConfig::CLDR, Variant { kind, with_descriptions: false }).unwrap();
            assert_eq!(without.display_text(), strip_descriptions(&with.display_text(), &labels), "seed {seed}");
        }
    }
}

fn is_subsequence(small: &str, big: &str) -> bool {
    let mut it = big.chars();
    small.chars().all(|c| it.any(|b| b == c))
}

#[test]
fn adding_a_flag_only_adds_text() {
    let mut r = rng(99);
    for seed in 0..300u64 {
        let (img, labels, regions) = random_unit(seed);
        let order: Vec<usize> = (0..regions.len()).collect();
        let base = random_recipe(&mut r);
        let variant = Variant { kind: if r.random_bool(0.5) { TemplateKind::ImageFirst } else { TemplateKind::TextFirst }, with_descriptions: true };
        let text = |rec: &RecipeConfig| render_document(&img, &labels, &regions, &order, rec, variant).unwrap().display_text();
        let small = text(&base);
        let mut grown = Vec::new();
        grown.push(RecipeConfig { caption: true, ..base });
        grown.push(RecipeConfig { labels: true, ..base });
        grown.push(RecipeConfig { regions: true, ..base });
        if base.labels {
            grown.push(RecipeConfig { descriptions: true, ..base });
        }
        for g in grown {
            assert!(is_subsequence(&small, &text(&g)), "seed {seed}: {base} -> {g}");
        }
    }
}

#[test]
fn segment_structure_invariants() {
    let mut r = rng(7);
    for seed in 0..500u64 {
        let (img, labels, regions) = random_unit(seed);
        let recipe = random_recipe(&mut r);
        let v = choose_variant(seed, &img.id, 0, &recipe);
        let mut order: Vec<usize> = (0..regions.len()).collect();
        order.shuffle(&mut r);
        let doc = render_document(&img, &labels, &regions, &order, &recipe, v).unwrap();
        let images: Vec<usize> = doc.segments.iter().enumerate().filter(|(_, s)| matches!(s, Segment::Image { .. })).map(|(i, _)| i).collect();
        assert_eq!(images.len(), 1);
        let img_pos = images[0];
        assert!(doc.segments.iter().take(img_pos).all(|s| matches!(s, Segment::Text { .. })));
        for (i, s) in doc.segments.iter().enumerate() {
            if matches!(s, Segment::Region { .. }) {
                assert!(i > img_pos);
            }
        }
        let before: String = doc.segments[..img_pos]
            .iter()
            .map(|s| if let Segment::Text { text } = s { text.as_str() } else { "" })
            .collect();
        match v.kind {
            TemplateKind::ImageFirst => {
                let header = recipe.labels || recipe.regions;
                let want = if header { format!("{DOC_HEADER}\n\nImage: ") } else { "Image: ".to_string() };
                assert_eq!(before, want);
            }
            TemplateKind::TextFirst => {
                if let (true, Some(c)) = (recipe.caption, &img.caption) {
                    let cap = format!("Caption: {c}");
                    assert!(before.contains(&cap));
                }
            }
        }
        let regions_in_doc: Vec<usize> = doc.segments.iter().filter_map(|s| if let Segment::Region { index } = s { Some(*index) } else { None }).collect();
        assert_eq!(regions_in_doc, doc.regions_included);
    }
}

/// Expected parse of a rendering, computed from the record directly.
struct Expected {
    caption: Option<String>,
    ln: Option<String>,
    objects: Vec<String>,
    attributes: Vec<(String, BTreeSet<String>)>,
    relationships: Vec<(String, BTreeSet<String>)>,
    regions: Vec<(mgic_core::regions::GridCell, Vec<String>)>,
}

fn expected(
    img: &mgic_core::schema::AnnotatedImage,
    labels: &mgic_core::schema::LabelTable,
    regions: &[mgic_core::regions::RegionSpec],
    order: &[usize],
    recipe: &RecipeConfig,
) -> Expected {
    let show = |k, n: &str| labels.display(k, n).to_string();
    let obj_of = |id: &str| show(LabelKind::Object, &img.object(id).unwrap().label);
    let mut objects = Vec::new();
    let mut attributes: Vec<(String, BTreeSet<String>)> = Vec::new();
    let mut relationships: Vec<(String, BTreeSet<String>)> = Vec::new();
    if recipe.labels {
        for o in &img.objects {
            let s = show(LabelKind::Object, &o.label);
            if !objects.contains(&s) {
                objects.push(s);
            }
        }
        for a in &img.attributes {
            let name = show(LabelKind::Attribute, &a.label);
            let members = a.member_ids.iter().map(|m| obj_of(m));
            match attributes.iter_mut().find(|(n, _)| *n == name) {
                Some((_, set)) => set.extend(members),
                None => attributes.push((name, members.collect())),
            }
        }
        for rel in &img.relationships {
            let name = show(LabelKind::Relationship, &rel.label);
            let pair = format!("{}-{}", obj_of(&rel.subject_id), obj_of(&rel.object_id));
            match relationships.iter_mut().find(|(n, _)| *n == name) {
                Some((_, set)) => {
                    set.insert(pair);
                }
                None => relationships.push((name, BTreeSet::from([pair]))),
            }
        }
    }
    Expected {
        caption: img.caption.clone().filter(|_| recipe.caption),
        ln: img.localized_narrative.clone().filter(|_| recipe.caption),
        objects,
        attributes,
        relationships,
        regions: if recipe.regions {
            order.iter().map(|&i| (regions[i].location, regions[i].labels.iter().map(|l| show(LabelKind::Object, l)).collect())).collect()
        } else {
            Vec::new()
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn inverse_parser_recovers_content(seed in any::<u64>(), recipe_seed in any::<u64>()) {
        let (img, labels, regions) = random_unit(seed);
        let mut r = rng(recipe_seed);
        let recipe = random_recipe(&mut r);
        let variant = choose_variant(recipe_seed, &img.id, 0, &recipe);
        let mut order: Vec<usize> = (0..regions.len()).collect();
        order.shuffle(&mut r);
        order.truncate(r.random_range(0..=regions.len()));
        let doc = render_document(&img, &labels, &regions, &order, &recipe, variant).unwrap();
        let parsed = parse_document(&doc.display_text()).unwrap();
        let exp = expected(&img, &labels, &regions, &order, &recipe);

        prop_assert_eq!(parsed.caption, exp.caption);
        prop_assert_eq!(parsed.localized_narrative, exp.ln);
        prop_assert_eq!(parsed.objects.iter().map(|o| o.name.clone()).collect::<Vec<_>>(), exp.objects);
        let groups = |g: &[ParsedGroup]| g.iter().map(|x| (x.name.clone(), x.members.iter().cloned().collect::<BTreeSet<_>>())).collect::<Vec<_>>();
        prop_assert_eq!(groups(&parsed.attributes), exp.attributes);
        prop_assert_eq!(groups(&parsed.relationships), exp.relationships);
        let got: Vec<_> = parsed.regions.iter().map(|r| (r.location, r.labels.clone())).collect();
        prop_assert_eq!(got, exp.regions);
        prop_assert_eq!(parsed.with_descriptions, doc.with_descriptions && !img.objects.is_empty() && recipe.labels);
        if recipe.labels || !doc.regions_included.is_empty() || (recipe.caption && (img.caption.is_some() || img.localized_narrative.is_some())) {
            prop_assert_eq!(parsed.kind, doc.template_kind);
        }
    }
}

#[test]
fn rendering_is_reproducible() {
    for seed in 0..50u64 {
        let (img, labels, regions) = random_unit(seed);
        let v = choose_variant(5, &img.id, 1, &RecipeConfig::CLDR);
        let order: Vec<usize> = (0..regions.len()).rev().collect();
        let a = render_document(&img, &labels, &regions, &order, &RecipeConfig::CLDR, v).unwrap();
        let b = render_document(&img.clone(), &labels.clone(), &regions.clone(), &order, &RecipeConfig::CLDR, v).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

#[test]
fn mgic_playback_matches_the_document_parts() {
    let img = golden_image();
    let labels = golden_labels();
    let regions = golden_regions();
    let spec = mgic_sft_spec(&img, &labels, &regions, &RecipeConfig::CLDR, TemplateKind::TextFirst, false);
    let sample = render_sft(&spec).unwrap();
    assert_eq!(sample.task, SftTask::MgicTextFirst);
    assert_eq!(sample.rounds.len(), 1 + regions.len());
    let doc = golden(TemplateKind::TextFirst, false);
    let first = match &sample.rounds[0].instruction[0] {
        SftPiece::Text { text } => text.clone(),
        other => panic!("{other:?}"),
    };
    let doc_lines: BTreeSet<&str> = doc.lines().collect();
    assert!(first.lines().all(|l| doc_lines.contains(l)), "{first}");
    assert_eq!(sample.rounds[0].answer, vec![SftPiece::Image { image_ref: "img-1".into() }]);
    assert_eq!(sample.rounds[1].answer, vec![SftPiece::Image { image_ref: regions[0].visual_key("img-1") }]);
}
