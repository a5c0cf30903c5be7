//! Id-joined corpus scoring and per-track report rendering.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bleu::{corpus_bleu, BleuConfig, BleuError, BleuScore};
use crate::jsonl::{read_jsonl, JsonlError, JsonlRecord, SchemaViolation};
use crate::types::{Segment, Split, SubTask, TrackKind};

/// A system output keyed by segment id.
///
/// Accepts the records written by the MBR stage (`segment_id`,
/// `selected_text`) and by the post-processing stage (`id`, `text`) as well
/// as plain `{"id", "text"}` lines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    #[serde(alias = "segment_id")]
    pub id: String,
    #[serde(alias = "selected_text", alias = "output_text")]
    pub text: String,
}

impl JsonlRecord for HypothesisRecord {
    fn validate(&self) -> Result<(), SchemaViolation> {
        if self.id.is_empty() {
            return Err(SchemaViolation::new("id", "must be non-empty"));
        }
        Ok(())
    }

    fn record_id(&self) -> Option<&str> {
        Some(&self.id)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Bleu(#[from] BleuError),
    #[error("duplicate id `{id}` in {}", path.display())]
    DuplicateId { id: String, path: std::path::PathBuf },
    #[error(
        "hypotheses and references do not align: {} reference id(s) without a hypothesis (first: {}), \
         {} hypothesis id(s) without a reference (first: {}); pass --allow-partial to score the intersection",
        .diagnostics.missing_hypotheses.len(),
        first_ten(&.diagnostics.missing_hypotheses),
        .diagnostics.unmatched_hypotheses.len(),
        first_ten(&.diagnostics.unmatched_hypotheses)
    )]
    Alignment { diagnostics: AlignmentDiagnostics },
    #[error("invalid report: {0}")]
    InvalidReport(String),
    #[error("cannot parse report: {0}")]
    Parse(#[from] serde_json::Error),
}

fn first_ten(ids: &[String]) -> String {
    if ids.is_empty() {
        return "none".into();
    }
    let shown: Vec<&str> = ids.iter().take(10).map(String::as_str).collect();
    if ids.len() > 10 {
        format!("{}, …", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

/// Ids that did not join; written to a sidecar when partial scoring is allowed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentDiagnostics {
    /// Reference ids with no hypothesis, in reference-file order.
    pub missing_hypotheses: Vec<String>,
    /// Hypothesis ids with no usable reference, in hypothesis-file order.
    pub unmatched_hypotheses: Vec<String>,
}

impl AlignmentDiagnostics {
    pub fn is_clean(&self) -> bool {
        self.missing_hypotheses.is_empty() && self.unmatched_hypotheses.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskScore {
    pub sub_task: SubTask,
    /// Corpus BLEU x 100, rounded to two decimals.
    pub bleu: f64,
    pub detail: BleuScore,
    pub pairs: usize,
    pub diagnostics: AlignmentDiagnostics,
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Corpus BLEU of the hypotheses in `hyp_path` against `ref_path`, joined
/// on segment id.
///
/// OCR compares against each segment's `source_text`, MT against its
/// `reference_translation`. Unjoined ids are an error unless
/// `allow_partial` is set, in which case they are reported in the returned
/// diagnostics and left out of the score.
pub fn score_subtask(
    hyp_path: impl AsRef<Path>,
    ref_path: impl AsRef<Path>,
    sub_task: SubTask,
    config: &BleuConfig,
    allow_partial: bool,
) -> Result<SubtaskScore, EvalError> {
    let hyp_path = hyp_path.as_ref();
    let ref_path = ref_path.as_ref();

    let mut hyps: HashMap<String, String> = HashMap::new();
    let mut hyp_order = Vec::new();
    for rec in read_jsonl::<HypothesisRecord>(hyp_path)?.records() {
        let rec = rec?;
        if hyps.contains_key(&rec.id) {
            return Err(EvalError::DuplicateId { id: rec.id, path: hyp_path.to_path_buf() });
        }
        hyp_order.push(rec.id.clone());
        hyps.insert(rec.id, rec.text);
    }

    let mut seen_refs = HashSet::new();
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut diagnostics = AlignmentDiagnostics::default();
    let mut joined = HashSet::new();
    for seg in read_jsonl::<Segment>(ref_path)?.records() {
        let seg = seg?;
        if !seen_refs.insert(seg.id.clone()) {
            return Err(EvalError::DuplicateId { id: seg.id, path: ref_path.to_path_buf() });
        }
        let reference = match sub_task {
            SubTask::Ocr => seg.has_source().then_some(seg.source_text),
            SubTask::Mt => seg.reference_translation.filter(|r| !r.is_empty()),
        };
        let Some(reference) = reference else { continue };
        match hyps.get(&seg.id) {
            Some(h) => {
                joined.insert(seg.id);
                pairs.push((h.clone(), reference));
            }
            None => diagnostics.missing_hypotheses.push(seg.id),
        }
    }
    diagnostics.unmatched_hypotheses = hyp_order.into_iter().filter(|id| !joined.contains(id)).collect();

    if !diagnostics.is_clean() && !allow_partial {
        return Err(EvalError::Alignment { diagnostics });
    }
    let detail = corpus_bleu(pairs.iter().map(|(h, r)| (h, [r])), config)?;
    Ok(SubtaskScore {
        sub_task,
        bleu: round2(detail.score * 100.0),
        detail,
        pairs: pairs.len(),
        diagnostics,
    })
}

/// Short stable hash of every scoring choice in `config`.
pub fn config_fingerprint(config: &BleuConfig) -> String {
    let digest = Sha256::digest(config.describe().as_bytes());
    digest.iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// One report column, e.g. track1 Valid-OCR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Column {
    pub track: TrackKind,
    pub split: Split,
    pub sub_task: SubTask,
}

impl Column {
    pub const fn new(track: TrackKind, split: Split, sub_task: SubTask) -> Self {
        Column { track, split, sub_task }
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.split.label(), self.sub_task.label())
    }
}

/// Report columns in display order: four for track 1, two for track 2.
pub const COLUMNS: [Column; 6] = [
    Column::new(TrackKind::Track1WebDoc, Split::Valid, SubTask::Ocr),
    Column::new(TrackKind::Track1WebDoc, Split::Valid, SubTask::Mt),
    Column::new(TrackKind::Track1WebDoc, Split::Test, SubTask::Ocr),
    Column::new(TrackKind::Track1WebDoc, Split::Test, SubTask::Mt),
    Column::new(TrackKind::Track2Arxiv, Split::Valid, SubTask::Mt),
    Column::new(TrackKind::Track2Arxiv, Split::Test, SubTask::Mt),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    #[serde(flatten)]
    pub column: Column,
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system_label: String,
    /// Present cells in [`COLUMNS`] order; absent cells are omitted.
    pub cells: Vec<Cell>,
}

impl ReportRow {
    pub fn get(&self, column: Column) -> Option<f64> {
        self.cells.iter().find(|c| c.column == column).map(|c| c.bleu)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_fingerprint: String,
    /// Human-readable scoring configuration behind the fingerprint.
    pub scoring: String,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn new(config: &BleuConfig) -> Self {
        EvalReport { config_fingerprint: config_fingerprint(config), scoring: config.describe(), rows: Vec::new() }
    }

    /// Adds an empty row, or returns the existing one with that label.
    pub fn row_mut(&mut self, system_label: &str) -> &mut ReportRow {
        let idx = match self.rows.iter().position(|r| r.system_label == system_label) {
            Some(i) => i,
            None => {
                self.rows.push(ReportRow { system_label: system_label.to_string(), cells: Vec::new() });
                self.rows.len() - 1
            }
        };
        &mut self.rows[idx]
    }

    /// Sets a cell; `bleu` is in percent and stored rounded to two decimals.
    pub fn set(&mut self, system_label: &str, column: Column, bleu: f64) -> Result<(), EvalError> {
        check_cell(column, bleu)?;
        let row = self.row_mut(system_label);
        row.cells.retain(|c| c.column != column);
        row.cells.push(Cell { column, bleu: round2(bleu) });
        row.cells.sort_by_key(|c| COLUMNS.iter().position(|k| *k == c.column));
        Ok(())
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        for row in &self.rows {
            let mut seen = HashSet::new();
            for cell in &row.cells {
                check_cell(cell.column, cell.bleu)?;
                if !seen.insert(cell.column) {
                    return Err(EvalError::InvalidReport(format!(
                        "row `{}` has two values for {} {}",
                        row.system_label,
                        cell.column.track,
                        cell.column.label()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_cell(column: Column, bleu: f64) -> Result<(), EvalError> {
    if !COLUMNS.contains(&column) {
        return Err(EvalError::InvalidReport(format!(
            "{} has no {} column",
            column.track,
            column.label()
        )));
    }
    if !(0.0..=100.0).contains(&bleu) {
        return Err(EvalError::InvalidReport(format!("BLEU {bleu} outside [0, 100]")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}` (markdown, csv, json)")),
        }
    }
}

impl ReportFormat {
    /// Guesses the format from a file extension, defaulting to Markdown.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ReportFormat::Json,
            Some("csv") => ReportFormat::Csv,
            _ => ReportFormat::Markdown,
        }
    }
}

fn cell_text(value: Option<f64>) -> String {
    value.map_or_else(|| "/".to_string(), |v| format!("{v:.2}"))
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

pub fn parse_report_json(text: &str) -> Result<EvalReport, EvalError> {
    let report: EvalReport = serde_json::from_str(text)?;
    report.validate()?;
    Ok(report)
}

fn render_markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("| Model | track1 | | | | track2 | |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    out.push_str("| |");
    for col in COLUMNS {
        let _ = write!(out, " {} |", col.label());
    }
    out.push('\n');
    for row in &report.rows {
        let _ = write!(out, "| {} |", row.system_label.replace('|', "\\|"));
        for col in COLUMNS {
            let _ = write!(out, " {} |", cell_text(row.get(col)));
        }
        out.push('\n');
    }
    let _ = writeln!(out, "\nScoring: `{}` (fingerprint `{}`)", report.scoring, report.config_fingerprint);
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render_csv(report: &EvalReport) -> String {
    let mut out = String::from("system");
    for col in COLUMNS {
        let _ = write!(out, ",{}/{}", col.track, col.label());
    }
    out.push_str(",config_fingerprint\n");
    for row in &report.rows {
        out.push_str(&csv_field(&row.system_label));
        for col in COLUMNS {
            let _ = write!(out, ",{}", cell_text(row.get(col)));
        }
        let _ = writeln!(out, ",{}", report.config_fingerprint);
    }
    out
}
