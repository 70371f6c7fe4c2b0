//! Caption selection from generated candidates.
//!
//! Candidates arrive in rounds. Within a round, captions that are too short,
//! too long or score below the similarity floor are dropped and the best
//! survivor wins. The first round with a survivor decides; when every round
//! fails, the best-scoring candidate overall is used.
//!
//! Similarity scores come from a [`Scorer`]: a static score file, the
//! Jaccard mock, or an external bridge process speaking line-delimited JSON.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionCandidate {
    pub image_id: String,
    pub text: String,
    pub word_count: usize,
    pub score: f64,
    pub round: u32,
}

impl CaptionCandidate {
    pub fn new(image_id: &str, round: u32, text: &str, score: f64) -> Self {
        Self {
            image_id: image_id.to_string(),
            text: text.to_string(),
            word_count: text.split_whitespace().count(),
            score,
            round,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptionFilterConfig {
    pub min_words: usize,
    pub max_words: usize,
    pub min_score: f64,
    pub max_rounds: u32,
}

impl Default for CaptionFilterConfig {
    fn default() -> Self {
        Self { min_words: 5, max_words: 25, min_score: 0.25, max_rounds: 10 }
    }
}

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("no caption candidates for image `{0}`")]
    Missing(String),
    #[error("invalid caption filter config: {0}")]
    InvalidConfig(String),
    #[error("candidate round {round} for image `{image_id}` is outside 1..={max}")]
    BadRound { image_id: String, round: u32, max: u32 },
}

impl CaptionFilterConfig {
    pub fn validate(&self) -> Result<(), CaptionError> {
        if self.min_words > self.max_words {
            return Err(CaptionError::InvalidConfig("min_words > max_words".into()));
        }
        if self.max_rounds < 1 {
            return Err(CaptionError::InvalidConfig("max_rounds must be >= 1".into()));
        }
        Ok(())
    }

    /// Length bounds are inclusive, the score floor is inclusive.
    pub fn passes(&self, c: &CaptionCandidate) -> bool {
        c.word_count >= self.min_words && c.word_count <= self.max_words && c.score >= self.min_score
    }
}

/// Higher score first; equal scores fall back to lexicographic text.
fn better(a: &CaptionCandidate, b: &CaptionCandidate) -> bool {
    match a.score.total_cmp(&b.score) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => a.text < b.text,
    }
}

fn best<'a>(it: impl Iterator<Item = &'a CaptionCandidate>) -> Option<&'a CaptionCandidate> {
    it.filter(|c| !c.score.is_nan())
        .fold(None, |acc, c| match acc {
            Some(b) if !better(c, b) => Some(b),
            _ => Some(c),
        })
}

/// Best candidate of one round after filtering.
pub fn filter_round<'a>(candidates: &'a [CaptionCandidate], config: &CaptionFilterConfig) -> Option<&'a CaptionCandidate> {
    best(candidates.iter().filter(|c| config.passes(c)))
}

/// Final caption over up to `max_rounds` rounds.
pub fn select_caption(rounds: &[Vec<CaptionCandidate>], config: &CaptionFilterConfig) -> Result<CaptionCandidate, CaptionError> {
    let considered = &rounds[..rounds.len().min(config.max_rounds as usize)];
    if let Some(hit) = considered.iter().find_map(|r| filter_round(r, config)) {
        return Ok(hit.clone());
    }
    best(considered.iter().flatten())
        .cloned()
        .ok_or_else(|| CaptionError::Missing(rounds.iter().flatten().next().map(|c| c.image_id.clone()).unwrap_or_default()))
}

// ---------------------------------------------------------------------------
// File formats

/// Candidate file line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub image_id: String,
    pub round: u32,
    pub text: String,
}

/// Static score file line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub image_id: String,
    pub round: u32,
    pub text_hash: String,
    pub score: f64,
}

/// Lowercase hex SHA-256 of the caption's UTF-8 bytes.
pub fn text_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Scorers

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: String,
    pub image_ref: String,
    pub caption: String,
    /// Only used for static score lookups; not sent over the bridge.
    #[serde(skip)]
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum ScorerError {
    /// Timeouts and broken pipes; the request may be retried.
    #[error("scorer transport: {0}")]
    Transport(String),
    #[error("scorer protocol violation: {0}")]
    Protocol(String),
    #[error("no score received for request `{0}`")]
    MissingScore(String),
    #[error("failed to start scorer `{cmd}`: {source}")]
    Spawn {
        cmd: String,
        #[source]
        source: std::io::Error,
    },
}

impl ScorerError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, ScorerError::Transport(_))
    }
}

pub trait Scorer {
    /// Returns scores keyed by request id. Implementations may answer in any
    /// order; missing ids are detected by [`request_scores`].
    fn score_batch(&mut self, requests: &[ScoreRequest]) -> Result<HashMap<String, f64>, ScorerError>;
}

/// Scores `requests` and returns them in request order.
pub fn request_scores(scorer: &mut dyn Scorer, requests: &[ScoreRequest]) -> Result<Vec<f64>, ScorerError> {
    let mut ids = HashSet::new();
    for r in requests {
        if !ids.insert(r.id.as_str()) {
            return Err(ScorerError::Protocol(format!("duplicate request id `{}`", r.id)));
        }
    }
    let got = scorer.score_batch(requests)?;
    if let Some(extra) = got.keys().find(|k| !ids.contains(k.as_str())) {
        return Err(ScorerError::Protocol(format!("response for unknown id `{extra}`")));
    }
    requests
        .iter()
        .map(|r| match got.get(&r.id) {
            Some(s) if s.is_finite() => Ok(*s),
            Some(s) => Err(ScorerError::Protocol(format!("non-finite score {s} for `{}`", r.id))),
            None => Err(ScorerError::MissingScore(r.id.clone())),
        })
        .collect()
}

/// Lookup in a precomputed score file keyed by `(image_id, round, text_hash)`.
#[derive(Debug, Clone, Default)]
pub struct StaticScores {
    scores: HashMap<(String, u32, String), f64>,
}

impl StaticScores {
    pub fn new(records: impl IntoIterator<Item = ScoreRecord>) -> Self {
        Self {
            scores: records.into_iter().map(|r| ((r.image_id, r.round, r.text_hash), r.score)).collect(),
        }
    }
}

impl Scorer for StaticScores {
    fn score_batch(&mut self, requests: &[ScoreRequest]) -> Result<HashMap<String, f64>, ScorerError> {
        Ok(requests
            .iter()
            .filter_map(|r| {
                self.scores
                    .get(&(r.image_ref.clone(), r.round, text_hash(&r.caption)))
                    .map(|s| (r.id.clone(), *s))
            })
            .collect())
    }
}

/// Jaccard similarity of lowercase whitespace-separated word sets.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let words = |s: &str| s.split_whitespace().map(str::to_lowercase).collect::<HashSet<_>>();
    let (wa, wb) = (words(a), words(b));
    let union = wa.union(&wb).count();
    if union == 0 {
        return 0.0;
    }
    wa.intersection(&wb).count() as f64 / union as f64
}

/// Deterministic stand-in for an image-text similarity model: compares the
/// caption with a reference text per image. Unknown images score 0.
#[derive(Debug, Clone, Default)]
pub struct JaccardScorer {
    refs: HashMap<String, String>,
    pub unknown_refs: usize,
}

impl JaccardScorer {
    pub fn new(refs: HashMap<String, String>) -> Self {
        Self { refs, unknown_refs: 0 }
    }
}

impl Scorer for JaccardScorer {
    fn score_batch(&mut self, requests: &[ScoreRequest]) -> Result<HashMap<String, f64>, ScorerError> {
        let mut out = HashMap::new();
        for r in requests {
            let score = match self.refs.get(&r.image_ref) {
                Some(reference) => jaccard(&r.caption, reference),
                None => {
                    self.unknown_refs += 1;
                    0.0
                }
            };
            out.insert(r.id.clone(), score);
        }
        Ok(out)
    }
}

/// Client for an external scorer process. Requests go to its stdin, one JSON
/// object per line; responses come back on stdout in any order.
pub struct BridgeScorer {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

impl BridgeScorer {
    /// Runs `cmd` through `sh -c`.
    pub fn spawn(cmd: &str, timeout: Duration) -> Result<Self, ScorerError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ScorerError::Spawn { cmd: cmd.to_string(), source })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, lines: rx, timeout })
    }
}

impl Scorer for BridgeScorer {
    fn score_batch(&mut self, requests: &[ScoreRequest]) -> Result<HashMap<String, f64>, ScorerError> {
        let stdin = self.stdin.as_mut().ok_or_else(|| ScorerError::Transport("bridge stdin closed".into()))?;
        for r in requests {
            let line = serde_json::to_string(r).expect("request serializes");
            writeln!(stdin, "{line}")
                .and_then(|_| stdin.flush())
                .map_err(|e| ScorerError::Transport(format!("write failed: {e}")))?;
        }
        let pending: HashSet<&str> = requests.iter().map(|r| r.id.as_str()).collect();
        let mut out = HashMap::new();
        while out.len() < pending.len() {
            let line = match self.lines.recv_timeout(self.timeout) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(ScorerError::Transport(format!("read failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(ScorerError::Transport(format!("no response within {:?}", self.timeout)))
                }
                // stream ended: the caller reports whichever ids are missing
                Err(RecvTimeoutError::Disconnected) => break,
            };
            if line.trim().is_empty() {
                continue;
            }
            let resp: ScoreResponse = serde_json::from_str(&line)
                .map_err(|e| ScorerError::Protocol(format!("bad response line `{line}`: {e}")))?;
            match (resp.id, resp.score, resp.error) {
                (Some(id), Some(score), None) => {
                    if !pending.contains(id.as_str()) {
                        return Err(ScorerError::Protocol(format!("response for unknown id `{id}`")));
                    }
                    if out.insert(id.clone(), score).is_some() {
                        return Err(ScorerError::Protocol(format!("duplicate response for `{id}`")));
                    }
                }
                (id, _, Some(err)) => {
                    return Err(ScorerError::Protocol(format!("scorer error for {id:?}: {err}")))
                }
                (id, _, _) => return Err(ScorerError::Protocol(format!("response for {id:?} has no score"))),
            }
        }
        Ok(out)
    }
}

impl Drop for BridgeScorer {
    fn drop(&mut self) {
        // closing stdin lets a well-behaved bridge exit on EOF
        self.stdin.take();
        if matches!(self.child.try_wait(), Ok(None)) {
            std::thread::sleep(Duration::from_millis(10));
            if matches!(self.child.try_wait(), Ok(None)) {
                let _ = self.child.kill();
            }
        }
        let _ = self.child.wait();
    }
}

/// Groups candidate records into per-image round lists (round order) and
/// scores them. Request ids are `image_id/round/index`.
pub fn score_candidates(
    records: &[CandidateRecord],
    scorer: &mut dyn Scorer,
    config: &CaptionFilterConfig,
) -> Result<BTreeMap<String, Vec<Vec<CaptionCandidate>>>, CaptionPipelineError> {
    let mut requests = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if r.round < 1 || r.round > config.max_rounds {
            return Err(CaptionError::BadRound { image_id: r.image_id.clone(), round: r.round, max: config.max_rounds }.into());
        }
        requests.push(ScoreRequest {
            id: format!("{}/{}/{i}", r.image_id, r.round),
            image_ref: r.image_id.clone(),
            caption: r.text.clone(),
            round: r.round,
        });
    }
    let scores = request_scores(scorer, &requests)?;
    let mut grouped: BTreeMap<String, BTreeMap<u32, Vec<CaptionCandidate>>> = BTreeMap::new();
    for (r, s) in records.iter().zip(scores) {
        grouped
            .entry(r.image_id.clone())
            .or_default()
            .entry(r.round)
            .or_default()
            .push(CaptionCandidate::new(&r.image_id, r.round, &r.text, s));
    }
    Ok(grouped.into_iter().map(|(k, v)| (k, v.into_values().collect())).collect())
}

#[derive(Debug, Error)]
pub enum CaptionPipelineError {
    #[error(transparent)]
    Caption(#[from] CaptionError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(round: u32, text: &str, score: f64) -> CaptionCandidate {
        CaptionCandidate::new("img", round, text, score)
    }

    const FIVE: &str = "a dog on the grass";

    #[test]
    fn round_filters() {
        let cfg = CaptionFilterConfig::default();
        assert!(filter_round(&[c(1, "a dog on grass", 0.9)], &cfg).is_none());
        let round = vec![c(1, "one two three four five", 0.24), c(1, "six seven eight nine ten", 0.26), c(1, FIVE, 0.30)];
        assert_eq!(filter_round(&round, &cfg).unwrap().score, 0.30);
        assert!(filter_round(&[c(1, FIVE, 0.25)], &cfg).is_some());
        let long = vec!["w"; 26].join(" ");
        assert!(filter_round(&[c(1, &long, 0.9)], &cfg).is_none());
        let edge = vec!["w"; 25].join(" ");
        assert!(filter_round(&[c(1, &edge, 0.9)], &cfg).is_some());
        assert!(filter_round(&[], &cfg).is_none());
    }

    #[test]
    fn ties_break_on_text() {
        let cfg = CaptionFilterConfig::default();
        let round = vec![c(1, "b b b b b", 0.5), c(1, "a a a a a", 0.5)];
        assert_eq!(filter_round(&round, &cfg).unwrap().text, "a a a a a");
        let rev: Vec<_> = round.into_iter().rev().collect();
        assert_eq!(filter_round(&rev, &cfg).unwrap().text, "a a a a a");
    }

    #[test]
    fn first_round_with_survivor_wins() {
        let cfg = CaptionFilterConfig::default();
        let rounds = vec![vec![c(1, FIVE, 0.3)], vec![c(2, "a much better caption here", 0.9)]];
        assert_eq!(select_caption(&rounds, &cfg).unwrap().round, 1);
    }

    #[test]
    fn fallback_ignores_filters() {
        let cfg = CaptionFilterConfig::default();
        let rounds: Vec<Vec<_>> = (1..=10)
            .map(|r| vec![c(r, "short one", 0.1), c(r, "x", if r == 4 { 0.18 } else { 0.05 })])
            .collect();
        let mut rounds = rounds;
        rounds[6].push(c(7, "dog cat", 0.18));
        let got = select_caption(&rounds, &cfg).unwrap();
        assert_eq!((got.text.as_str(), got.score), ("dog cat", 0.18));
        assert!(matches!(select_caption(&[vec![], vec![]], &cfg), Err(CaptionError::Missing(_))));
    }

    #[test]
    fn jaccard_mock() {
        assert_eq!(jaccard("a red dog", "the red dog runs"), 0.4);
        assert_eq!(jaccard("Same Words", "same words"), 1.0);
        assert_eq!(jaccard("a", "b"), 0.0);
        assert_eq!(jaccard("", ""), 0.0);
    }

    #[test]
    fn static_scores_and_protocol_checks() {
        let mut s = StaticScores::new([ScoreRecord { image_id: "i".into(), round: 1, text_hash: text_hash("hello"), score: 0.7 }]);
        let req = |id: &str, cap: &str| ScoreRequest { id: id.into(), image_ref: "i".into(), caption: cap.into(), round: 1 };
        assert_eq!(request_scores(&mut s, &[req("a", "hello")]).unwrap(), vec![0.7]);
        assert!(matches!(request_scores(&mut s, &[req("a", "nope")]), Err(ScorerError::MissingScore(_))));
        assert!(matches!(
            request_scores(&mut s, &[req("a", "hello"), req("a", "hello")]),
            Err(ScorerError::Protocol(_))
        ));
        assert_eq!(text_hash("").len(), 64);
    }
}
