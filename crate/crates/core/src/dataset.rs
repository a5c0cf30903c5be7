//! Fine-tuning data: multi-task mixtures of single-task and
//! recognize-then-translate conversations.
//!
//! A recognize-then-translate (`pcot_chained`) example is a four-turn
//! conversation: the user asks for the text in the image, the assistant
//! answers with the OCR text, the user asks for a translation, the
//! assistant answers with the reference translation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::jsonl::{JsonlRecord, SchemaViolation};
use crate::types::{Segment, Split, TrackKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    OcrOnly,
    MtOnly,
    PcotChained,
    EndToEnd,
}

impl TaskKind {
    /// Canonical order; the seeded draw walks kinds in this order.
    pub const ALL: [TaskKind; 4] = [TaskKind::OcrOnly, TaskKind::MtOnly, TaskKind::PcotChained, TaskKind::EndToEnd];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::OcrOnly => "ocr_only",
            TaskKind::MtOnly => "mt_only",
            TaskKind::PcotChained => "pcot_chained",
            TaskKind::EndToEnd => "end_to_end",
        }
    }

    /// The first segment field this task needs but `segment` lacks.
    pub fn missing_field(self, segment: &Segment) -> Option<&'static str> {
        let needs_source = matches!(self, TaskKind::OcrOnly | TaskKind::MtOnly | TaskKind::PcotChained);
        let needs_reference = matches!(self, TaskKind::MtOnly | TaskKind::PcotChained | TaskKind::EndToEnd);
        if self == TaskKind::EndToEnd && !segment.has_image() {
            return Some("image_ref");
        }
        if needs_source && !segment.has_source() {
            return Some("source_text");
        }
        if needs_reference && !segment.has_reference() {
            return Some("reference_translation");
        }
        None
    }

    pub fn is_feasible(self, segment: &Segment) -> bool {
        self.missing_field(segment).is_none()
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown task kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

impl Turn {
    pub fn user(content: impl Into<String>) -> Self {
        Turn { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Turn { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub example_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub turns: Vec<Turn>,
    pub task: TaskKind,
    pub track: TrackKind,
    pub split: Split,
}

impl JsonlRecord for TrainingExample {
    fn validate(&self) -> Result<(), SchemaViolation> {
        if self.example_id.is_empty() {
            return Err(SchemaViolation::new("example_id", "must be non-empty"));
        }
        if self.turns.len() < 2 || !self.turns.len().is_multiple_of(2) {
            return Err(SchemaViolation::new(
                "turns",
                format!("expected an even number of turns >= 2, got {}", self.turns.len()),
            ));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if turn.role != expected {
                return Err(SchemaViolation::new("turns", format!("turn {i} should be {expected:?}")));
            }
            if turn.role == Role::Assistant && turn.content.is_empty() {
                return Err(SchemaViolation::new("turns", format!("assistant turn {i} is empty")));
            }
        }
        if self.task == TaskKind::PcotChained && self.turns.len() != 4 {
            return Err(SchemaViolation::new("turns", "pcot_chained examples have exactly 4 turns"));
        }
        Ok(())
    }

    fn record_id(&self) -> Option<&str> {
        Some(&self.example_id)
    }
}

pub const PLACEHOLDERS: [&str; 2] = ["source_text", "segment_id"];

/// User-turn prompts. `{source_text}` and `{segment_id}` are substituted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplates {
    pub ocr_only: String,
    pub mt_only: String,
    pub pcot_recognize: String,
    pub pcot_translate: String,
    pub end_to_end: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            ocr_only: "<image>\nRecognize all text in this document image and output it in reading order.".into(),
            mt_only: "Translate the following English text into Chinese.\n{source_text}".into(),
            pcot_recognize: "<image>\nFirst, recognize all text in this document image in reading order.".into(),
            pcot_translate: "Now translate the recognized text into Chinese.".into(),
            end_to_end: "<image>\nTranslate the text in this document image into Chinese.".into(),
        }
    }
}

impl PromptTemplates {
    fn entries(&self) -> [(&'static str, &str); 5] {
        [
            ("ocr_only", &self.ocr_only),
            ("mt_only", &self.mt_only),
            ("pcot_recognize", &self.pcot_recognize),
            ("pcot_translate", &self.pcot_translate),
            ("end_to_end", &self.end_to_end),
        ]
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for (name, template) in self.entries() {
            if template.trim().is_empty() {
                return Err(DatasetError::Template(format!("template `{name}` is empty")));
            }
            for placeholder in placeholders(template) {
                if !PLACEHOLDERS.contains(&placeholder) {
                    return Err(DatasetError::Template(format!(
                        "template `{name}` uses unknown placeholder {{{placeholder}}}"
                    )));
                }
            }
        }
        if !self.mt_only.contains("{source_text}") {
            return Err(DatasetError::Template("template `mt_only` must contain {source_text}".into()));
        }
        Ok(())
    }
}

fn placeholders(template: &str) -> impl Iterator<Item = &str> {
    template.split('{').skip(1).filter_map(|rest| {
        let name = rest.split('}').next()?;
        let ok = rest.contains('}') && !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        ok.then_some(name)
    })
}

fn render(template: &str, segment: &Segment) -> String {
    template
        .replace("{source_text}", &segment.source_text)
        .replace("{segment_id}", &segment.id)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("segment {segment_id}: task {task} requires `{field}`")]
    MissingField {
        segment_id: String,
        task: TaskKind,
        field: &'static str,
    },
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("invalid prompt template: {0}")]
    Template(String),
}

/// Builds one conversation for `segment`.
pub fn build_example(
    segment: &Segment,
    task: TaskKind,
    templates: &PromptTemplates,
    track: TrackKind,
    split: Split,
) -> Result<TrainingExample, DatasetError> {
    if let Some(field) = task.missing_field(segment) {
        return Err(DatasetError::MissingField { segment_id: segment.id.clone(), task, field });
    }
    let reference = || segment.reference_translation.clone().unwrap_or_default();
    let turns = match task {
        TaskKind::OcrOnly => vec![
            Turn::user(render(&templates.ocr_only, segment)),
            Turn::assistant(segment.source_text.clone()),
        ],
        TaskKind::MtOnly => vec![
            Turn::user(render(&templates.mt_only, segment)),
            Turn::assistant(reference()),
        ],
        TaskKind::PcotChained => vec![
            Turn::user(render(&templates.pcot_recognize, segment)),
            Turn::assistant(segment.source_text.clone()),
            Turn::user(render(&templates.pcot_translate, segment)),
            Turn::assistant(reference()),
        ],
        TaskKind::EndToEnd => vec![
            Turn::user(render(&templates.end_to_end, segment)),
            Turn::assistant(reference()),
        ],
    };
    Ok(TrainingExample {
        example_id: segment.id.clone(),
        image_ref: segment.image_ref.clone(),
        turns,
        task,
        track,
        split,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub weights: BTreeMap<TaskKind, f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub templates: PromptTemplates,
}

impl MixtureSpec {
    pub fn new(weights: impl IntoIterator<Item = (TaskKind, f64)>, seed: u64) -> Self {
        MixtureSpec { weights: weights.into_iter().collect(), seed, templates: PromptTemplates::default() }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for (kind, w) in &self.weights {
            if !w.is_finite() || *w < 0.0 {
                return Err(DatasetError::InvalidMixture(format!("weight for {kind} must be finite and >= 0, got {w}")));
            }
        }
        if !self.weights.values().any(|&w| w > 0.0) {
            return Err(DatasetError::InvalidMixture("at least one weight must be positive".into()));
        }
        self.templates.validate()
    }

    /// Weights in [`TaskKind::ALL`] order, summing to 1.
    pub fn normalized(&self) -> [f64; 4] {
        let sum: f64 = self.weights.values().sum();
        TaskKind::ALL.map(|k| self.weights.get(&k).copied().unwrap_or(0.0) / sum)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MixtureSummary {
    pub segments_seen: usize,
    pub realized: BTreeMap<TaskKind, usize>,
    pub skipped: usize,
    /// First [`MixtureSummary::MAX_LISTED`] skipped segment ids.
    pub skipped_ids: Vec<String>,
}

impl MixtureSummary {
    pub const MAX_LISTED: usize = 100;

    pub fn emitted(&self) -> usize {
        self.realized.values().sum()
    }
}

/// Seeded per-segment task assignment.
///
/// Each segment consumes one 64-bit draw from a ChaCha8 stream seeded with
/// the mixture seed, so the assignment of a segment depends only on its
/// position and on which kinds it can satisfy.
#[derive(Debug, Clone)]
pub struct MixtureBuilder {
    weights: [f64; 4],
    templates: PromptTemplates,
    track: TrackKind,
    split: Split,
    rng: ChaCha8Rng,
    summary: MixtureSummary,
}

impl MixtureBuilder {
    pub fn new(spec: &MixtureSpec, track: TrackKind, split: Split) -> Result<Self, DatasetError> {
        spec.validate()?;
        Ok(MixtureBuilder {
            weights: spec.normalized(),
            templates: spec.templates.clone(),
            track,
            split,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            summary: MixtureSummary::default(),
        })
    }

    fn unit_draw(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn choose(&mut self, segment: &Segment) -> Option<TaskKind> {
        let u = self.unit_draw();
        let feasible: Vec<(TaskKind, f64)> = TaskKind::ALL
            .into_iter()
            .zip(self.weights)
            .filter(|&(k, w)| w > 0.0 && k.is_feasible(segment))
            .collect();
        let total: f64 = feasible.iter().map(|(_, w)| w).sum();
        let target = u * total;
        let mut cum = 0.0;
        for &(kind, w) in &feasible {
            cum += w;
            if target < cum {
                return Some(kind);
            }
        }
        feasible.last().map(|&(k, _)| k)
    }

    /// Assigns a task to `segment` and builds its example, or records the
    /// segment as skipped when no weighted task fits it.
    pub fn push(&mut self, segment: &Segment) -> Option<TrainingExample> {
        self.summary.segments_seen += 1;
        let Some(task) = self.choose(segment) else {
            self.summary.skipped += 1;
            if self.summary.skipped_ids.len() < MixtureSummary::MAX_LISTED {
                self.summary.skipped_ids.push(segment.id.clone());
            }
            return None;
        };
        let example = build_example(segment, task, &self.templates, self.track, self.split)
            .expect("task was checked feasible");
        *self.summary.realized.entry(task).or_default() += 1;
        Some(example)
    }

    pub fn summary(&self) -> &MixtureSummary {
        &self.summary
    }
}

/// Streams examples for `segments`; see [`MixtureBuilder`].
pub fn build_mixture<I>(segments: I, spec: &MixtureSpec, track: TrackKind, split: Split) -> Result<Mixture<I::IntoIter>, DatasetError>
where
    I: IntoIterator<Item = Segment>,
{
    Ok(Mixture { segments: segments.into_iter(), builder: MixtureBuilder::new(spec, track, split)? })
}

pub struct Mixture<I> {
    segments: I,
    builder: MixtureBuilder,
}

impl<I> Mixture<I> {
    pub fn summary(&self) -> &MixtureSummary {
        self.builder.summary()
    }
}

impl<I: Iterator<Item = Segment>> Iterator for Mixture<I> {
    type Item = TrainingExample;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let segment = self.segments.next()?;
            if let Some(example) = self.builder.push(&segment) {
                return Some(example);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }

    fn bump(&mut self, split: Split) {
        match split {
            Split::Train => self.train += 1,
            Split::Valid => self.valid += 1,
            Split::Test => self.test += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }
}

/// Example counts per track and split (the layout of the published
/// training-data table) and per task kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub tracks: BTreeMap<TrackKind, SplitCounts>,
    pub splits: SplitCounts,
    pub tasks: BTreeMap<TaskKind, usize>,
}

impl Default for DatasetStats {
    fn default() -> Self {
        DatasetStats {
            total: 0,
            tracks: TrackKind::ALL.into_iter().map(|t| (t, SplitCounts::default())).collect(),
            splits: SplitCounts::default(),
            tasks: TaskKind::ALL.into_iter().map(|k| (k, 0)).collect(),
        }
    }
}

impl DatasetStats {
    pub fn add(&mut self, example: &TrainingExample) {
        self.total += 1;
        self.tracks.entry(example.track).or_default().bump(example.split);
        self.splits.bump(example.split);
        *self.tasks.entry(example.task).or_default() += 1;
    }

    pub fn count(&self, track: TrackKind, split: Split) -> usize {
        self.tracks.get(&track).map_or(0, |c| c.get(split))
    }

    /// Markdown table: Track | Dataset | Train | Valid | Test.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Track | Dataset | Train | Valid | Test |\n|---|---|---:|---:|---:|\n");
        for track in TrackKind::ALL {
            let c = self.tracks.get(&track).copied().unwrap_or_default();
            let label = match track {
                TrackKind::Track1WebDoc => "Track 1",
                TrackKind::Track2Arxiv => "Track 2",
            };
            out.push_str(&format!(
                "| {label} | {} | {} | {} | {} |\n",
                track.dataset_name(),
                c.train,
                c.valid,
                c.test
            ));
        }
        out
    }
}

pub fn dataset_stats<'a>(examples: impl IntoIterator<Item = &'a TrainingExample>) -> DatasetStats {
    let mut stats = DatasetStats::default();
    for e in examples {
        stats.add(e);
    }
    stats
}
