//! Client side of the scorer bridge, driven against a small Python mock.

mod common;

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use common::*;
use mgic_core::captions::*;

fn python() -> Option<&'static str> {
    ["python3", "python"].into_iter().find(|p| std::process::Command::new(p).arg("--version").output().is_ok())
}

fn script() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bridge/mock_scorer.py")
}

struct Fixture {
    _dir: tempfile::TempDir,
    refs_path: PathBuf,
    refs: HashMap<String, String>,
}

fn fixture(n_images: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let refs_path = dir.path().join("refs.jsonl");
    let mut r = rng(5);
    let refs: HashMap<String, String> = (0..n_images).map(|i| (format!("img{i}"), sentence(&mut r, 5, 15))).collect();
    let mut f = std::fs::File::create(&refs_path).unwrap();
    let mut keys: Vec<_> = refs.keys().collect();
    keys.sort();
    for k in keys {
        writeln!(f, "{}", serde_json::json!({"image_ref": k, "text": refs[k]})).unwrap();
    }
    Fixture { _dir: dir, refs_path, refs }
}

fn command(py: &str, fx: &Fixture, mode: &str, expect: usize) -> String {
    format!("{py} {} --refs {} --mode {mode} --expect {expect}", script().display(), fx.refs_path.display())
}

fn requests(n: usize, n_images: usize) -> Vec<ScoreRequest> {
    let mut r = rng(6);
    (0..n)
        .map(|i| {
            let img = format!("img{}", i % n_images);
            ScoreRequest { id: format!("{img}/1/{i}"), image_ref: img, caption: sentence(&mut r, 3, 20), round: 1 }
        })
        .collect()
}

#[test]
fn thousand_requests_match_independent_scores() {
    let Some(py) = python() else {
        eprintln!("python not available; skipping");
        return;
    };
    let fx = fixture(50);
    let reqs = requests(1000, 50);
    for mode in ["ok", "reverse"] {
        let mut bridge = BridgeScorer::spawn(&command(py, &fx, mode, reqs.len()), Duration::from_secs(20)).unwrap();
        let scores = request_scores(&mut bridge, &reqs).unwrap();
        assert_eq!(scores.len(), 1000);
        for (req, s) in reqs.iter().zip(&scores) {
            assert!((s - jaccard(&req.caption, &fx.refs[&req.image_ref])).abs() <= 1e-12, "{mode} {}", req.id);
        }
    }
}

#[test]
fn bridge_and_static_scores_select_the_same_captions() {
    let Some(py) = python() else { return };
    let fx = fixture(20);
    let mut r = rng(8);
    let records: Vec<CandidateRecord> = (0..20)
        .flat_map(|i| (1..=3).flat_map(move |round| (0..3).map(move |k| (i, round, k))))
        .map(|(i, round, _)| CandidateRecord { image_id: format!("img{i}"), round, text: sentence(&mut r, 3, 28) })
        .collect();
    let config = CaptionFilterConfig::default();
    let mut bridge = BridgeScorer::spawn(&command(py, &fx, "ok", records.len()), Duration::from_secs(20)).unwrap();
    let over_bridge = score_candidates(&records, &mut bridge, &config).unwrap();
    let statics = StaticScores::new(records.iter().map(|c| ScoreRecord {
        image_id: c.image_id.clone(),
        round: c.round,
        text_hash: text_hash(&c.text),
        score: jaccard(&c.text, &fx.refs[&c.image_id]),
    }));
    let over_static = score_candidates(&records, &mut { statics }, &config).unwrap();
    assert_eq!(over_bridge.len(), 20);
    for (img, rounds) in &over_bridge {
        let a = select_caption(rounds, &config).unwrap();
        let b = select_caption(&over_static[img], &config).unwrap();
        assert_eq!(a.text, b.text);
        assert!((a.score - b.score).abs() <= 1e-12);
    }
}

#[test]
fn protocol_failures_are_reported() {
    let Some(py) = python() else { return };
    let fx = fixture(5);
    let reqs = requests(10, 5);
    let run = |mode: &str, timeout: u64| {
        let mut bridge = BridgeScorer::spawn(&command(py, &fx, mode, reqs.len()), Duration::from_secs(timeout)).unwrap();
        request_scores(&mut bridge, &reqs).unwrap_err()
    };
    assert!(matches!(run("garbage", 20), ScorerError::Protocol(_)));
    assert!(matches!(run("error", 20), ScorerError::Protocol(_)));
    assert!(matches!(run("unknown-id", 20), ScorerError::Protocol(_)));
    assert!(matches!(run("missing", 20), ScorerError::MissingScore(_)));
    assert!(matches!(run("exit", 20), ScorerError::MissingScore(_)));
    let hang = run("hang", 1);
    assert!(matches!(hang, ScorerError::Transport(_)) && hang.is_retriable());
}

#[test]
fn duplicate_request_ids_are_rejected_before_sending() {
    let mut reqs = requests(3, 1);
    reqs[2].id = reqs[0].id.clone();
    let mut scorer = JaccardScorer::default();
    assert!(matches!(request_scores(&mut scorer, &reqs), Err(ScorerError::Protocol(_))));
}

#[test]
fn missing_executable_fails_to_produce_scores() {
    let mut bridge = BridgeScorer::spawn("/nonexistent/scorer-binary", Duration::from_secs(5)).unwrap();
    assert!(request_scores(&mut bridge, &requests(2, 1)).is_err());
}
