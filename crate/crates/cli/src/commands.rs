use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context};
use mgic_core::captions::{score_candidates, select_caption, BridgeScorer, CandidateRecord, CaptionPipelineError, ScoreRecord, Scorer, StaticScores};
use mgic_core::cleanse::{compute_frequencies, coverage_downsample, CaptionConcepts, DropReason, FrequencyTable};
use mgic_core::compose::{render_sft, SftSpec};
use mgic_core::pipeline::{build_samples, cleanse_source, fill_captions, prepare_source, BuildConfig, CleansedSource, PreparedSource, SourceData};
use mgic_core::regions::RegionRecord;
use mgic_core::reporting::{compute_stats, concept_overlap, frequency_histogram, SourceInventory};
use mgic_core::schema::{apply_rename_map, parse_corpus, parse_jsonl, read_to_string, RecordError, RenameEntry};
use mgic_core::sequence::{self, assemble_sft, observe_sft, MockTextTokenizer, MockVisualTokenizer, SampleConfig, TokenizedSample};
use serde::Serialize;

use crate::config::{Overrides, PipelineConfig, SourceConfig};
use crate::output::{atomic_write, write_json, write_jsonl};
use crate::{Classify, Failure};

pub const SCORER_ENV: &str = "MGIC_SCORER_CMD";

fn load_config(path: &Path, overrides: &Overrides) -> Result<PipelineConfig, Failure> {
    let mut cfg = PipelineConfig::load(path).config()?;
    cfg.apply(overrides);
    cfg.finalize().config()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct SourceRecordError<'a> {
    source: &'a str,
    #[serde(flatten)]
    error: &'a RecordError,
}

#[derive(Serialize)]
struct SourceDrop<'a> {
    source: &'a str,
    image_id: &'a str,
    reason: DropReason,
}

/// Parses a source and attaches its display names.
fn load_source(s: &SourceConfig) -> Result<(SourceData, Vec<RecordError>), Failure> {
    let parsed = parse_corpus(&s.annotations, &s.labels).input()?;
    let mut labels = parsed.labels;
    if let Some(path) = &s.renames {
        let text = read_to_string(path).input()?;
        let entries: Vec<RenameEntry> = parse_jsonl(&path.display().to_string(), &text).input()?;
        let outcome = apply_rename_map(&labels, &entries).input()?;
        for u in &outcome.unknown {
            eprintln!("warning: {}: rename for unknown {} label `{}` ignored", s.name, u.kind, u.name);
        }
        labels = outcome.table;
    }
    Ok((SourceData { name: s.name.clone(), images: parsed.images, labels }, parsed.errors))
}

struct Loaded {
    cleansed: Vec<CleansedSource>,
    record_errors: Vec<(String, RecordError)>,
}

fn load_and_cleanse(cfg: &PipelineConfig) -> Result<Loaded, Failure> {
    let mut out = Loaded { cleansed: Vec::new(), record_errors: Vec::new() };
    for s in &cfg.sources {
        let (data, errors) = load_source(s)?;
        out.record_errors.extend(errors.into_iter().map(|e| (s.name.clone(), e)));
        out.cleansed.push(cleanse_source(data, &cfg.cleanse).config()?);
    }
    Ok(out)
}

fn scorer_for(source: &SourceConfig, timeout: Duration) -> Result<(Box<dyn Scorer>, bool), Failure> {
    if let Some(path) = &source.scores {
        let text = read_to_string(path).input()?;
        let records: Vec<ScoreRecord> = parse_jsonl(&path.display().to_string(), &text).input()?;
        return Ok((Box::new(StaticScores::new(records)), false));
    }
    let cmd = std::env::var(SCORER_ENV).map_err(|_| {
        Failure::Config(anyhow!(
            "source `{}` has caption candidates but neither a score file nor {SCORER_ENV}",
            source.name
        ))
    })?;
    let bridge = BridgeScorer::spawn(&cmd, timeout).bridge()?;
    Ok((Box::new(bridge), true))
}

/// Picks captions for kept images that have none. Returns `(image id, caption)`.
fn select_captions(cfg: &PipelineConfig, source: &SourceConfig, cleansed: &mut CleansedSource) -> Result<BTreeMap<String, String>, Failure> {
    let Some(path) = &source.candidates else { return Ok(BTreeMap::new()) };
    let text = read_to_string(path).input()?;
    let records: Vec<CandidateRecord> = parse_jsonl(&path.display().to_string(), &text).input()?;
    let wanted: std::collections::HashSet<&str> =
        cleansed.images.iter().filter(|i| i.caption.is_none()).map(|i| i.id.as_str()).collect();
    let records: Vec<CandidateRecord> = records.into_iter().filter(|r| wanted.contains(r.image_id.as_str())).collect();
    if records.is_empty() {
        return Ok(BTreeMap::new());
    }
    let (mut scorer, is_bridge) = scorer_for(source, Duration::from_secs(cfg.scorer_timeout_secs))?;
    let grouped = match score_candidates(&records, scorer.as_mut(), &cfg.caption_filter) {
        Ok(g) => g,
        Err(CaptionPipelineError::Scorer(e)) if is_bridge => return Err(Failure::Bridge(e.into())),
        Err(e) => return Err(Failure::Input(anyhow!(e).context(format!("scoring captions of `{}`", source.name)))),
    };
    let mut selected = BTreeMap::new();
    for (image_id, rounds) in grouped {
        let c = select_caption(&rounds, &cfg.caption_filter).input()?;
        selected.insert(image_id, c.text);
    }
    fill_captions(&mut cleansed.images, &selected);
    Ok(selected)
}

#[derive(Serialize)]
struct SelectedCaption<'a> {
    source: &'a str,
    image_id: &'a str,
    caption: &'a str,
}

pub fn build(config: &Path, overrides: &Overrides) -> Result<(), Failure> {
    let cfg = load_config(config, overrides)?;
    let mut loaded = load_and_cleanse(&cfg)?;

    let mut captions = Vec::new();
    for (src_cfg, cleansed) in cfg.sources.iter().zip(loaded.cleansed.iter_mut()) {
        let selected = select_captions(&cfg, src_cfg, cleansed)?;
        captions.extend(selected.into_iter().map(|(id, c)| (src_cfg.name.clone(), id, c)));
    }

    let prepared: Vec<PreparedSource> = loaded
        .cleansed
        .into_iter()
        .map(|c| prepare_source(c, &cfg.regions))
        .collect::<Result<_, _>>()
        .input()?;

    let build_cfg = BuildConfig {
        recipe: cfg.recipe,
        sample: SampleConfig { seed: cfg.seed, budget: cfg.budget, loss: cfg.loss },
        tokenizer: cfg.tokenizer,
        workers: cfg.workers,
    };
    let built = build_samples(&prepared, &build_cfg).input()?;
    let inventories: Vec<SourceInventory> = prepared.iter().map(SourceInventory::of_source).collect();
    let report = compute_stats(&inventories, &built.samples).input()?;

    let out = &cfg.output_dir;
    let write = |name: &str, f: &dyn Fn(&Path) -> anyhow::Result<()>| f(&out.join(name)).input();
    write("samples.jsonl", &|p| atomic_write(p, |w| Ok(sequence::write_jsonl(w, &built.samples)?)))?;
    if cfg.binary {
        write("samples.bin", &|p| atomic_write(p, |w| Ok(sequence::write_binary(w, &built.samples)?)))?;
    }
    write("documents.jsonl", &|p| write_jsonl(p, &built.documents))?;
    let regions: Vec<RegionRecord> = prepared
        .iter()
        .flat_map(|s| s.images.iter().flat_map(|p| p.regions.iter().map(|r| RegionRecord::new(&p.image.id, r))))
        .collect();
    write("regions.jsonl", &|p| write_jsonl(p, &regions))?;
    let drops: Vec<SourceDrop> = prepared
        .iter()
        .flat_map(|s| s.drops.iter().map(|d| SourceDrop { source: &s.name, image_id: &d.image_id, reason: d.reason }))
        .collect();
    write("drops.jsonl", &|p| write_jsonl(p, &drops))?;
    write("discards.jsonl", &|p| write_jsonl(p, &built.discards))?;
    let errors: Vec<SourceRecordError> =
        loaded.record_errors.iter().map(|(s, e)| SourceRecordError { source: s, error: e }).collect();
    write("record_errors.jsonl", &|p| write_jsonl(p, &errors))?;
    let caption_rows: Vec<SelectedCaption> = captions
        .iter()
        .map(|(s, i, c)| SelectedCaption { source: s, image_id: i, caption: c })
        .collect();
    write("captions.jsonl", &|p| write_jsonl(p, &caption_rows))?;
    write("stats.json", &|p| write_json(p, &report))?;
    write("vocab.json", &|p| atomic_write(p, |w| Ok(w.write_all(built.vocab.to_json().as_bytes())?)))?;

    eprintln!(
        "built {} samples from {} images ({} dropped, {} discarded, {} rejected records) into {}",
        built.samples.len(),
        report.total.images,
        drops.len(),
        built.discards.len(),
        errors.len(),
        out.display()
    );
    if built.samples.is_empty() {
        eprintln!("warning: no samples were emitted; every unit was discarded or no images survived cleansing");
    }
    Ok(())
}

fn prepare_without_captions(cfg: &PipelineConfig) -> Result<Vec<PreparedSource>, Failure> {
    let loaded = load_and_cleanse(cfg)?;
    loaded.cleansed.into_iter().map(|c| prepare_source(c, &cfg.regions)).collect::<Result<_, _>>().input()
}

pub fn stats(
    config: &Path,
    overrides: &Overrides,
    samples: Option<&Path>,
    histogram: Option<&str>,
    csv_path: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = load_config(config, overrides)?;
    let prepared = prepare_without_captions(&cfg)?;
    let samples_path: PathBuf = samples.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join("samples.jsonl"));
    let file = std::fs::File::open(&samples_path).with_context(|| format!("opening {}", samples_path.display())).input()?;
    let samples: Vec<TokenizedSample> = sequence::read_jsonl(std::io::BufReader::new(file)).input()?;
    let inventories: Vec<SourceInventory> = prepared.iter().map(SourceInventory::of_source).collect();
    let report = compute_stats(&inventories, &samples).input()?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));

    if let (Some(kind), Some(csv_path)) = (histogram, csv_path) {
        let table = prepared.iter().fold(FrequencyTable::default(), |acc, s| {
            acc.merge(&compute_frequencies(s.images.iter().map(|p| &p.image)))
        });
        let h = frequency_histogram(&table, kind).config()?;
        atomic_write(csv_path, |w| {
            let mut wr = csv::Writer::from_writer(w);
            wr.write_record(["label", "kind", "count"])?;
            for (label, count) in &h.series {
                wr.write_record([label.as_str(), h.kind.as_str(), &count.to_string()])?;
            }
            wr.flush()?;
            Ok(())
        })
        .input()?;
        eprintln!("{} {} labels, {:.2}% below frequency 5", h.series.len(), h.kind, h.low_frequency_share * 100.0);
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>, Failure> {
    let text = read_to_string(path).input()?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

pub fn overlap(train: &Path, eval: &Path) -> Result<(), Failure> {
    let train = read_lines(train)?;
    let eval = read_lines(eval)?;
    let report = concept_overlap(train.iter().map(String::as_str), eval.iter().map(String::as_str)).input()?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}

#[derive(Serialize)]
struct SftText<'a> {
    task: &'a str,
    text: String,
}

pub fn sft(input: &Path, out: &Path, alpha: f32) -> Result<(), Failure> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Failure::Config(anyhow!("alpha must be finite and >= 0")));
    }
    let text = read_to_string(input).input()?;
    let specs: Vec<SftSpec> = parse_jsonl(&input.display().to_string(), &text).input()?;
    let samples = specs
        .iter()
        .enumerate()
        .map(|(i, s)| render_sft(s).with_context(|| format!("{} line {}", input.display(), i + 1)))
        .collect::<anyhow::Result<Vec<_>>>()
        .input()?;

    let spec = mgic_core::sequence::TokenizerSpec::default();
    let mut vocab = MockTextTokenizer::new(spec);
    for s in &samples {
        observe_sft(&mut vocab, s).input()?;
    }
    let visual = MockVisualTokenizer::new(spec);
    let mut tokenized = Vec::with_capacity(samples.len());
    let mut texts = Vec::with_capacity(samples.len());
    for (s, input_spec) in samples.iter().zip(&specs) {
        let (mut t, _) = assemble_sft(s, &vocab, &visual, alpha).input()?;
        t.provenance.image_id = input_spec.image_id.clone().unwrap_or_default();
        tokenized.push(t);
        texts.push(SftText { task: s.task.name(), text: s.display_text() });
    }
    atomic_write(&out.join("sft_samples.jsonl"), |w| Ok(sequence::write_jsonl(w, &tokenized)?)).input()?;
    write_jsonl(&out.join("sft_text.jsonl"), &texts).input()?;
    atomic_write(&out.join("vocab.json"), |w| Ok(w.write_all(vocab.to_json().as_bytes())?)).input()?;
    eprintln!("rendered {} SFT samples into {}", tokenized.len(), out.display());
    Ok(())
}

pub fn validate(config: &Path) -> Result<(), Failure> {
    let mut cfg = PipelineConfig::load(config).config()?;
    cfg.finalize().config()?;
    let mut rejected = 0usize;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for s in &cfg.sources {
        let (_, errors) = load_source(s)?;
        for e in &errors {
            let line = serde_json::to_string(&SourceRecordError { source: &s.name, error: e }).expect("serializes");
            writeln!(lock, "{line}").input()?;
        }
        rejected += errors.len();
    }
    if rejected > 0 {
        return Err(Failure::Input(anyhow!("{rejected} records rejected")));
    }
    Ok(())
}

pub fn downsample(concepts: &Path, min_freq: usize, cap: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    let text = read_to_string(concepts).input()?;
    let records: Vec<CaptionConcepts> = parse_jsonl(&concepts.display().to_string(), &text).input()?;
    let selected = coverage_downsample(&records, min_freq, cap, seed).config()?;
    atomic_write(out, |w| {
        for id in &selected {
            writeln!(w, "{id}")?;
        }
        Ok(())
    })
    .input()?;
    eprintln!("selected {} of {} captions", selected.len(), records.len());
    Ok(())
}
