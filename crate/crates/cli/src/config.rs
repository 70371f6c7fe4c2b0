use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mgic_core::captions::CaptionFilterConfig;
use mgic_core::cleanse::{CleanseConfig, KindThresholds};
use mgic_core::compose::RecipeConfig;
use mgic_core::regions::RegionConfig;
use mgic_core::sequence::{LossConfig, TokenizerSpec, DEFAULT_BUDGET};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub name: String,
    pub annotations: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub renames: Option<PathBuf>,
    /// Synthesized caption candidates, one JSON record per line.
    #[serde(default)]
    pub candidates: Option<PathBuf>,
    /// Precomputed candidate scores. Without it the scorer bridge is used.
    #[serde(default)]
    pub scores: Option<PathBuf>,
    #[serde(default)]
    pub repeat_factor: Option<u32>,
    #[serde(default)]
    pub label_min_freq: Option<KindThresholds>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub budget: usize,
    pub workers: usize,
    pub recipe: RecipeConfig,
    pub binary: bool,
    pub output_dir: PathBuf,
    pub scorer_timeout_secs: u64,
    pub loss: LossConfig,
    pub caption_filter: CaptionFilterConfig,
    pub cleanse: CleanseConfig,
    pub regions: RegionConfig,
    pub tokenizer: TokenizerSpec,
    pub sources: Vec<SourceConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            budget: DEFAULT_BUDGET,
            workers: 0,
            recipe: RecipeConfig::CLDR,
            binary: false,
            output_dir: PathBuf::from("out"),
            scorer_timeout_secs: 30,
            loss: LossConfig::default(),
            caption_filter: CaptionFilterConfig::default(),
            cleanse: CleanseConfig::default(),
            regions: RegionConfig::default(),
            tokenizer: TokenizerSpec::default(),
            sources: Vec::new(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub recipe: Option<RecipeConfig>,
    pub mask_prob: Option<f64>,
    pub workers: Option<usize>,
    pub budget: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl PipelineConfig {
    /// Reads TOML, or JSON when the extension is `.json`. Relative paths are
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        for s in &mut cfg.sources {
            resolve(&mut s.annotations);
            resolve(&mut s.labels);
            for p in [&mut s.renames, &mut s.candidates, &mut s.scores].into_iter().flatten() {
                resolve(p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.recipe {
            self.recipe = v;
        }
        if let Some(v) = o.mask_prob {
            self.loss.mask_prob = v;
        }
        if let Some(v) = o.workers {
            self.workers = v;
        }
        if let Some(v) = o.budget {
            self.budget = v;
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
    }

    /// Folds per-source overrides into the cleanse tables and checks every
    /// setting and referenced path.
    pub fn finalize(&mut self) -> Result<()> {
        if self.sources.is_empty() {
            bail!("config lists no sources");
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.sources {
            if !names.insert(s.name.as_str()) {
                bail!("source `{}` listed twice", s.name);
            }
            if let Some(f) = s.repeat_factor {
                self.cleanse.repeat_factor.insert(s.name.clone(), f);
            }
            if let Some(t) = s.label_min_freq {
                self.cleanse.label_min_freq.insert(s.name.clone(), t);
            }
            if !self.cleanse.label_min_freq.contains_key(&s.name) {
                bail!("source `{}` has no label frequency thresholds; set `label_min_freq`", s.name);
            }
            let paths = [Some(&s.annotations), Some(&s.labels), s.renames.as_ref(), s.candidates.as_ref(), s.scores.as_ref()];
            for p in paths.into_iter().flatten() {
                if !p.exists() {
                    bail!("source `{}`: {} does not exist", s.name, p.display());
                }
            }
        }
        self.recipe.validate()?;
        if self.recipe.is_empty() {
            bail!("recipe enables nothing");
        }
        self.loss.validate()?;
        self.cleanse.validate()?;
        self.caption_filter.validate()?;
        if self.budget < 2 {
            bail!("budget {} leaves no room for <s> and </s>", self.budget);
        }
        if self.tokenizer.text_vocab_size <= TokenizerSpec::FIRST_TEXT_ID || self.tokenizer.visual_codebook_size == 0 {
            bail!("tokenizer spec leaves no room for content ids");
        }
        Ok(())
    }
}
