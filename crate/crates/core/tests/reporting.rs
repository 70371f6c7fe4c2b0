mod common;

use std::collections::BTreeSet;

use common::*;
use mgic_core::reporting::*;
use mgic_core::schema::{AnnotatedImage, LabelKind};
use mgic_core::sequence::{Modality, Provenance, TokenizedSample};
use rand::Rng;

fn sample(source: &str, image_id: &str, regions: Vec<usize>, modality: &[(Modality, usize)]) -> TokenizedSample {
    let modality: Vec<Modality> = modality.iter().flat_map(|&(m, n)| std::iter::repeat_n(m, n)).collect();
    TokenizedSample {
        ids: vec![0; modality.len()],
        weights: vec![1.0; modality.len()],
        modality,
        provenance: Provenance { source: source.into(), image_id: image_id.into(), regions, ..Default::default() },
    }
}

#[test]
fn stats_match_a_hand_count() {
    use Modality::*;
    let golden = golden_image();
    let second = AnnotatedImage {
        id: "img-2".into(),
        objects: vec![obj("img-2", "p1", "dog", (0, 0, 50, 50)), obj("img-2", "p2", "cat", (60, 60, 50, 50))],
        attributes: vec![mgic_core::schema::AttributeAnnotation { label: "brown".into(), member_ids: vec!["p1".into()] }],
        relationships: vec![],
        ..golden.clone()
    };
    let bare = AnnotatedImage { id: "v-1".into(), attributes: vec![], relationships: vec![], ..golden.clone() };
    let labels = golden_labels();
    let vg = SourceInventory::new("visual_genome", &labels, [(&golden, 2), (&second, 0)]);
    let v3 = SourceInventory::new("v3det", &labels, [(&bare, 1)]);
    // dog, frisbee, airborne, brown, catching, near, and the undescribed cat
    assert_eq!(vg.concepts.len(), 7);
    assert!(vg.concepts.contains(&(LabelKind::Object, "cat".into(), None)));

    let samples = vec![
        sample("visual_genome", "img-1", vec![0, 1], &[(Special, 1), (Text, 5), (Special, 1), (Visual, 3), (Special, 2)]),
        sample("visual_genome", "img-2", vec![], &[(Special, 1), (Text, 2), (Special, 1), (Visual, 4), (Special, 2)]),
    ];
    let report = compute_stats(&[vg.clone(), v3.clone()], &samples).unwrap();
    let row = |regions, images, concepts, visual_tokens, textual_tokens, used_regions, samples| StatsRow {
        regions,
        images,
        concepts,
        visual_tokens,
        textual_tokens,
        used_regions,
        samples,
    };
    assert_eq!(report.sources["visual_genome"], row(2, 2, 7, 7, 7, 2, 2));
    assert_eq!(report.sources["v3det"], row(1, 1, 2, 0, 0, 0, 0));
    assert_eq!(report.total, row(3, 3, 9, 7, 7, 2, 2));

    let json = serde_json::to_value(&report).unwrap();
    let keys: BTreeSet<&str> = json["total"].as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, BTreeSet::from(["regions", "images", "concepts", "visual_tokens", "textual_tokens", "used_regions", "samples"]));

    let stray = sample("v3det", "img-1", vec![], &[(Special, 2)]);
    assert!(matches!(compute_stats(&[vg, v3], &[stray]), Err(ReportError::UnknownSample { .. })));
}

#[test]
fn histogram_counts_from_a_corpus() {
    let img = golden_image();
    let table = mgic_core::cleanse::compute_frequencies([&img]);
    let h = frequency_histogram(&table, "attribute").unwrap();
    assert_eq!(h.series, vec![("airborne".to_string(), 2), ("brown".to_string(), 1)]);
    assert_eq!(h.low_frequency_share, 1.0);
    let h = frequency_histogram(&table, "relationship").unwrap();
    assert_eq!(h.series, vec![("near".to_string(), 2), ("catching".to_string(), 1)]);
}

#[test]
fn overlap_matches_set_intersection() {
    let vocab: Vec<String> = (0..40).map(|i| format!("concept {i}")).collect();
    let mut r = rng(12);
    let variant = |r: &mut rand_chacha::ChaCha8Rng, c: &str| match r.random_range(0..3) {
        0 => c.to_string(),
        1 => c.to_uppercase(),
        _ => format!("  {}  ", c.replace(' ', "   ")),
    };
    for _ in 0..100 {
        let train: BTreeSet<&String> = vocab.iter().filter(|_| r.random_bool(0.4)).collect();
        let mut eval: BTreeSet<&String> = vocab.iter().filter(|_| r.random_bool(0.3)).collect();
        if eval.is_empty() {
            eval.insert(&vocab[0]);
        }
        let expected = eval.intersection(&train).count() as f64 / eval.len() as f64 * 100.0;
        let train_in: Vec<String> = train.iter().map(|c| variant(&mut r, c)).collect();
        let eval_in: Vec<String> = eval.iter().flat_map(|c| [variant(&mut r, c), c.to_string()]).collect();
        let got = concept_overlap(train_in.iter().map(String::as_str), eval_in.iter().map(String::as_str)).unwrap();
        assert_eq!(got.total, eval.len() as u64);
        assert!((got.percentage - expected).abs() < 1e-9, "{} vs {expected}", got.percentage);
    }
}
