//! Instruction-format samples in the Llama-2 chat layout.
//!
//! The first round carries the `<<SYS>>` block; later rounds start with a
//! bare `<s>[INST]`. Everything after `[/INST]` up to and including the
//! closing `</s>` belongs to the answer and is the only part that carries
//! loss.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{playback_texts, ComposeError, RecipeConfig, TemplateKind, IMG};
use crate::regions::RegionSpec;
use crate::schema::{AnnotatedImage, LabelTable};

pub const SFT_SYSTEM_PROMPT: &str = "You are a helpful, respectful and honest assistant. Always answer as helpfully as possible, while being safe. Your answers should not include any harmful, unethical, racist, sexist, toxic, dangerous, or illegal content. Please ensure that your responses are socially unbiased and positive in nature";

pub const DEFAULT_DETAIL_INSTRUCTION: &str = "Explain the visual content of the image in great detail.";

const VQA_SUFFIX: &str = "\nAnswer the question using a single word or phrase.";
const MULTI_CHOICE_SUFFIX: &str = "\nAnswer with the option\u{2019}s letter from the given choices directly.";
const CAPTION_INSTRUCTION: &str = "Provide a one-sentence caption for the provided image.";
const TEXT2IMAGE_PREFIX: &str = "Create an image that visually represents the description: ";
const EDITED_ANSWER: &str = "Here is the edited image: ";
const GENERATED_ANSWER: &str = "Here is the image: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftTask {
    Conversation,
    OpenVqa,
    MultiChoice,
    DetailedCaption,
    ImageCaption,
    ImageEditing,
    Text2image,
    TextOnly,
    MgicTextFirst,
    MgicImageFirst,
}

impl SftTask {
    pub const ALL: [SftTask; 10] = [
        SftTask::Conversation,
        SftTask::OpenVqa,
        SftTask::MultiChoice,
        SftTask::DetailedCaption,
        SftTask::ImageCaption,
        SftTask::ImageEditing,
        SftTask::Text2image,
        SftTask::TextOnly,
        SftTask::MgicTextFirst,
        SftTask::MgicImageFirst,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SftTask::Conversation => "conversation",
            SftTask::OpenVqa => "open_vqa",
            SftTask::MultiChoice => "multi_choice",
            SftTask::DetailedCaption => "detailed_caption",
            SftTask::ImageCaption => "image_caption",
            SftTask::ImageEditing => "image_editing",
            SftTask::Text2image => "text2image",
            SftTask::TextOnly => "text_only",
            SftTask::MgicTextFirst => "mgic_text_first",
            SftTask::MgicImageFirst => "mgic_image_first",
        }
    }
}

impl fmt::Display for SftTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SftTask {
    type Err = ComposeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SftTask::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| ComposeError::UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaTurn {
    pub question: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionTurn {
    pub image_ref: String,
    pub text: String,
}

/// One line of an instruction file. Which fields are needed depends on the
/// task; unused ones are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SftSpec {
    pub task: Option<String>,
    pub image_id: Option<String>,
    pub target_image_id: Option<String>,
    pub question: Option<String>,
    pub response: Option<String>,
    pub rounds: Vec<QaTurn>,
    pub instruction: Option<String>,
    pub caption: Option<String>,
    pub image_text: Option<String>,
    pub regions: Vec<RegionTurn>,
    pub system_prompt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SftPiece {
    Text { text: String },
    Image { image_ref: String },
}

impl SftPiece {
    fn text(s: impl Into<String>) -> Self {
        SftPiece::Text { text: s.into() }
    }
    fn image(r: impl Into<String>) -> Self {
        SftPiece::Image { image_ref: r.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRound {
    pub instruction: Vec<SftPiece>,
    pub answer: Vec<SftPiece>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSample {
    pub task: SftTask,
    pub system_prompt: String,
    pub rounds: Vec<SftRound>,
}

/// Flattened sample piece with its loss role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SftSegment {
    Bos,
    Eos,
    Text { text: String, answer: bool },
    Image { image_ref: String, answer: bool },
}

impl SftSample {
    /// Flattens rounds into framing, instruction and answer segments.
    pub fn segments(&self) -> Vec<SftSegment> {
        let mut out = Vec::new();
        let push = |out: &mut Vec<SftSegment>, pieces: &[SftPiece], answer: bool| {
            for p in pieces {
                out.push(match p {
                    SftPiece::Text { text } => SftSegment::Text { text: text.clone(), answer },
                    SftPiece::Image { image_ref } => SftSegment::Image { image_ref: image_ref.clone(), answer },
                });
            }
        };
        for (i, round) in self.rounds.iter().enumerate() {
            out.push(SftSegment::Bos);
            let open = if i == 0 {
                format!(" [INST] <<SYS>>\n{}\n<</SYS>>\n\n", self.system_prompt)
            } else {
                "[INST] ".to_string()
            };
            out.push(SftSegment::Text { text: open, answer: false });
            push(&mut out, &round.instruction, false);
            out.push(SftSegment::Text { text: " [/INST] ".into(), answer: false });
            push(&mut out, &round.answer, true);
            out.push(SftSegment::Text { text: " ".into(), answer: false });
            out.push(SftSegment::Eos);
        }
        out
    }

    /// Display form with `[IMG]` placeholders.
    pub fn display_text(&self) -> String {
        self.segments()
            .into_iter()
            .map(|s| match s {
                SftSegment::Bos => "<s>".to_string(),
                SftSegment::Eos => "</s>".to_string(),
                SftSegment::Text { text, .. } => text,
                SftSegment::Image { .. } => IMG.to_string(),
            })
            .collect()
    }
}

fn need<'a>(task: SftTask, field: &'static str, v: &'a Option<String>) -> Result<&'a str, ComposeError> {
    v.as_deref().ok_or(ComposeError::MissingField { task, field })
}

fn qa_turns(task: SftTask, spec: &SftSpec) -> Result<Vec<QaTurn>, ComposeError> {
    let mut turns = Vec::new();
    if let Some(q) = &spec.question {
        turns.push(QaTurn { question: q.clone(), response: spec.response.clone().unwrap_or_default() });
    }
    turns.extend(spec.rounds.iter().cloned());
    if turns.is_empty() {
        return Err(ComposeError::MissingField { task, field: "rounds" });
    }
    Ok(turns)
}

/// Builds a sample for the task named in `spec.task`.
pub fn render_sft(spec: &SftSpec) -> Result<SftSample, ComposeError> {
    let task: SftTask = spec.task.as_deref().unwrap_or_default().parse()?;
    let image = || need(task, "image_id", &spec.image_id);
    let response = || spec.response.clone().unwrap_or_default();
    let with_image = |image_id: &str, text: String| vec![SftPiece::image(image_id), SftPiece::text(text)];

    let rounds = match task {
        SftTask::Conversation | SftTask::TextOnly => {
            let turns = qa_turns(task, spec)?;
            let first_image = if task == SftTask::Conversation { Some(image()?) } else { None };
            turns
                .into_iter()
                .enumerate()
                .map(|(i, t)| {
                    let instruction = match (i, first_image) {
                        (0, Some(img)) => with_image(img, format!("\n{}", t.question)),
                        _ => vec![SftPiece::text(t.question)],
                    };
                    SftRound { instruction, answer: vec![SftPiece::text(t.response)] }
                })
                .collect()
        }
        SftTask::OpenVqa | SftTask::MultiChoice => {
            let q = need(task, "question", &spec.question)?;
            let suffix = if task == SftTask::OpenVqa { VQA_SUFFIX } else { MULTI_CHOICE_SUFFIX };
            vec![SftRound {
                instruction: with_image(image()?, format!("\n{q}{suffix}")),
                answer: vec![SftPiece::text(response())],
            }]
        }
        SftTask::DetailedCaption => {
            let instr = spec.instruction.as_deref().unwrap_or(DEFAULT_DETAIL_INSTRUCTION);
            vec![SftRound {
                instruction: with_image(image()?, format!("\n{instr}")),
                answer: vec![SftPiece::text(response())],
            }]
        }
        SftTask::ImageCaption => vec![SftRound {
            instruction: with_image(image()?, format!("\n{CAPTION_INSTRUCTION}")),
            answer: vec![SftPiece::text(response())],
        }],
        SftTask::ImageEditing => {
            let instr = need(task, "instruction", &spec.instruction)?;
            let target = need(task, "target_image_id", &spec.target_image_id)?;
            vec![SftRound {
                instruction: with_image(image()?, format!(" {instr}")),
                answer: vec![SftPiece::text(EDITED_ANSWER), SftPiece::image(target)],
            }]
        }
        SftTask::Text2image => {
            let caption = need(task, "caption", &spec.caption)?;
            vec![SftRound {
                instruction: vec![SftPiece::text(format!("{TEXT2IMAGE_PREFIX}{caption}"))],
                answer: vec![SftPiece::text(GENERATED_ANSWER), SftPiece::image(image()?)],
            }]
        }
        SftTask::MgicTextFirst | SftTask::MgicImageFirst => {
            let text_first = task == SftTask::MgicTextFirst;
            let pair = |text: &str, image_ref: &str| {
                let (t, v) = (vec![SftPiece::text(text)], vec![SftPiece::image(image_ref)]);
                if text_first {
                    SftRound { instruction: t, answer: v }
                } else {
                    SftRound { instruction: v, answer: t }
                }
            };
            let mut rounds = vec![pair(need(task, "image_text", &spec.image_text)?, image()?)];
            rounds.extend(spec.regions.iter().map(|r| pair(&r.text, &r.image_ref)));
            rounds
        }
    };

    Ok(SftSample {
        task,
        system_prompt: spec.system_prompt.clone().unwrap_or_else(|| SFT_SYSTEM_PROMPT.to_string()),
        rounds,
    })
}

/// Re-expresses a corpus document as an instruction sample: the image-level
/// part is the first round and every region adds one more.
pub fn mgic_sft_spec(
    image: &AnnotatedImage,
    labels: &LabelTable,
    regions: &[RegionSpec],
    recipe: &RecipeConfig,
    kind: TemplateKind,
    with_descriptions: bool,
) -> SftSpec {
    let (image_text, region_texts) = playback_texts(image, labels, regions, recipe, with_descriptions);
    let task = match kind {
        TemplateKind::TextFirst => SftTask::MgicTextFirst,
        TemplateKind::ImageFirst => SftTask::MgicImageFirst,
    };
    SftSpec {
        task: Some(task.name().to_string()),
        image_id: Some(image.id.clone()),
        image_text: Some(image_text),
        regions: regions
            .iter()
            .zip(region_texts)
            .map(|(r, text)| RegionTurn { image_ref: r.visual_key(&image.id), text })
            .collect(),
        ..SftSpec::default()
    }
}
