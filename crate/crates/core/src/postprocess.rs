//! Repair rules for selected translations.
//!
//! Three rules run in a fixed order:
//! 1. [`suppress_complex_table`] empties outputs that look like large tables;
//! 2. [`compress_runs`] caps runs of one repeated special symbol;
//! 3. [`normalize_spaces`] collapses runs of ASCII spaces and trims the ends.
//!
//! No rule touches characters other than ASCII spaces and configured
//! special symbols, except table suppression which drops the whole text.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::jsonl::{JsonlRecord, SchemaViolation};
use crate::text::is_cjk;

pub const DEFAULT_SPECIAL_SYMBOLS: [&str; 7] = ["-", "…", "_", "*", "=", "~", "."];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    /// Grapheme clusters whose runs are capped.
    pub special_symbols: Vec<String>,
    pub max_run_length: usize,
    /// A text with at least this many `|` is a complex table.
    pub table_pipe_threshold: usize,
    /// A text with at least this many lines holding two or more `|` is a
    /// complex table.
    pub table_row_threshold: usize,
    pub collapse_spaces: bool,
    /// Name of the Chinese segmenter, see [`segmenter_by_name`].
    pub segmenter: String,
    /// Drop space runs that sit between two CJK words. Off by default.
    pub join_cjk_words: bool,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            special_symbols: DEFAULT_SPECIAL_SYMBOLS.iter().map(|s| s.to_string()).collect(),
            max_run_length: 10,
            table_pipe_threshold: 50,
            table_row_threshold: 20,
            collapse_spaces: true,
            segmenter: LexiconSegmenter::NAME.to_string(),
            join_cjk_words: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid post-processing config: {0}")]
pub struct ConfigError(pub String);

impl PostprocessConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_run_length == 0 {
            return Err(ConfigError("max_run_length must be at least 1".into()));
        }
        if self.table_pipe_threshold == 0 || self.table_row_threshold == 0 {
            return Err(ConfigError("table thresholds must be at least 1".into()));
        }
        if self.special_symbols.is_empty() {
            return Err(ConfigError("special_symbols must not be empty".into()));
        }
        for s in &self.special_symbols {
            if s.graphemes(true).count() != 1 || s.chars().any(char::is_whitespace) {
                return Err(ConfigError(format!(
                    "special symbol {s:?} must be a single non-whitespace grapheme cluster"
                )));
            }
        }
        if segmenter_by_name(&self.segmenter).is_none() {
            return Err(ConfigError(format!(
                "unknown segmenter `{}` (available: {})",
                self.segmenter,
                SEGMENTERS.join(", ")
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    RunCompressed,
    TableSuppressed,
    SpacesCollapsed,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::RunCompressed => "run_compressed",
            Rule::TableSuppressed => "table_suppressed",
            Rule::SpacesCollapsed => "spaces_collapsed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostprocessReport {
    pub rules_fired: Vec<Rule>,
    pub runs_compressed: usize,
    pub output_text: String,
}

/// Caps every maximal run of one special symbol at `max_run_length`.
/// Returns the new text and the number of runs that were shortened.
pub fn compress_runs(text: &str, config: &PostprocessConfig) -> (String, usize) {
    let specials: HashSet<&str> = config.special_symbols.iter().map(String::as_str).collect();
    let mut out = String::with_capacity(text.len());
    let mut count = 0;
    let mut graphemes = text.graphemes(true).peekable();
    while let Some(g) = graphemes.next() {
        let mut run = 1;
        while graphemes.peek() == Some(&g) {
            graphemes.next();
            run += 1;
        }
        let keep = if specials.contains(g) && run > config.max_run_length {
            count += 1;
            config.max_run_length
        } else {
            run
        };
        for _ in 0..keep {
            out.push_str(g);
        }
    }
    (out, count)
}

pub fn is_complex_table(text: &str, config: &PostprocessConfig) -> bool {
    let pipes = text.matches('|').count();
    if pipes >= config.table_pipe_threshold {
        return true;
    }
    let rows = text.lines().filter(|l| l.matches('|').count() >= 2).count();
    rows >= config.table_row_threshold
}

/// Empties `text` when it looks like an overly complex table.
pub fn suppress_complex_table(text: &str, config: &PostprocessConfig) -> (String, bool) {
    if is_complex_table(text, config) {
        (String::new(), true)
    } else {
        (text.to_string(), false)
    }
}

/// Collapses runs of two or more ASCII spaces into one and trims leading
/// and trailing ASCII spaces. Tabs and newlines are left alone.
pub fn normalize_spaces(text: &str, config: &PostprocessConfig) -> String {
    if !config.collapse_spaces {
        return text.to_string();
    }
    let segmenter = segmenter_by_name(&config.segmenter).unwrap_or_else(|| Box::new(LexiconSegmenter::bundled()));
    let pieces = segmenter.segment(text);
    let mut joined = String::with_capacity(text.len());
    for (i, piece) in pieces.iter().enumerate() {
        let drop = config.join_cjk_words
            && is_space_run(piece)
            && i > 0
            && i + 1 < pieces.len()
            && pieces[i - 1].chars().next_back().is_some_and(is_cjk)
            && pieces[i + 1].chars().next().is_some_and(is_cjk);
        if !drop {
            joined.push_str(piece);
        }
    }

    let mut out = String::with_capacity(joined.len());
    let mut prev_space = false;
    for c in joined.chars() {
        if c == ' ' {
            if !prev_space {
                out.push(c);
            }
            prev_space = true;
        } else {
            out.push(c);
            prev_space = false;
        }
    }
    out.trim_matches(' ').to_string()
}

fn is_space_run(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b == b' ')
}

/// Suppress, then compress, then normalize spaces.
pub fn run_pipeline(text: &str, config: &PostprocessConfig) -> PostprocessReport {
    let mut rules_fired = Vec::new();

    let (suppressed, fired) = suppress_complex_table(text, config);
    if fired && suppressed != text {
        rules_fired.push(Rule::TableSuppressed);
    }
    let (compressed, runs_compressed) = compress_runs(&suppressed, config);
    if runs_compressed > 0 {
        rules_fired.push(Rule::RunCompressed);
    }
    let output_text = normalize_spaces(&compressed, config);
    if output_text != compressed {
        rules_fired.push(Rule::SpacesCollapsed);
    }

    PostprocessReport { rules_fired, runs_compressed, output_text }
}

/// Splits text into pieces whose concatenation is the original text.
pub trait Segmenter: Send + Sync {
    fn segment<'a>(&self, text: &'a str) -> Vec<&'a str>;
}

pub const SEGMENTERS: [&str; 2] = [LexiconSegmenter::NAME, CharSegmenter::NAME];

pub fn segmenter_by_name(name: &str) -> Option<Box<dyn Segmenter>> {
    match name {
        LexiconSegmenter::NAME => Some(Box::new(LexiconSegmenter::bundled())),
        CharSegmenter::NAME => Some(Box::new(CharSegmenter)),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Cjk,
    Space,
    Other,
}

fn class(c: char) -> Class {
    if c.is_whitespace() {
        Class::Space
    } else if is_cjk(c) {
        Class::Cjk
    } else {
        Class::Other
    }
}

/// Splits into maximal runs of CJK, whitespace and other characters, then
/// hands each CJK run to `split_cjk`.
fn split_runs<'a>(text: &'a str, mut split_cjk: impl FnMut(&'a str, &mut Vec<&'a str>)) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut current: Option<Class> = None;
    for (i, c) in text.char_indices() {
        let k = class(c);
        if current.is_some_and(|cur| cur != k) {
            let run = &text[start..i];
            if current == Some(Class::Cjk) {
                split_cjk(run, &mut out);
            } else {
                out.push(run);
            }
            start = i;
        }
        current = Some(k);
    }
    if start < text.len() {
        let run = &text[start..];
        if current == Some(Class::Cjk) {
            split_cjk(run, &mut out);
        } else {
            out.push(run);
        }
    }
    out
}

/// One piece per CJK character.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharSegmenter;

impl CharSegmenter {
    pub const NAME: &'static str = "char";
}

impl Segmenter for CharSegmenter {
    fn segment<'a>(&self, text: &'a str) -> Vec<&'a str> {
        split_runs(text, |run, out| {
            let mut idx = run.char_indices().map(|(i, _)| i).peekable();
            while let Some(i) = idx.next() {
                let end = idx.peek().copied().unwrap_or(run.len());
                out.push(&run[i..end]);
            }
        })
    }
}

/// Greedy longest-match over a word list, falling back to single characters.
#[derive(Debug, Clone)]
pub struct LexiconSegmenter {
    words: HashSet<String>,
    longest: usize,
}

const BUNDLED_LEXICON: &str = include_str!("lexicon.txt");

impl LexiconSegmenter {
    pub const NAME: &'static str = "lexicon";

    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: HashSet<String> = words.into_iter().map(Into::into).filter(|w| !w.is_empty()).collect();
        let longest = words.iter().map(|w| w.chars().count()).max().unwrap_or(1);
        LexiconSegmenter { words, longest }
    }

    pub fn bundled() -> Self {
        Self::new(BUNDLED_LEXICON.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')))
    }

    fn split_cjk<'a>(&self, run: &'a str, out: &mut Vec<&'a str>) {
        let bounds: Vec<usize> = run.char_indices().map(|(i, _)| i).chain([run.len()]).collect();
        let chars = bounds.len() - 1;
        let mut pos = 0;
        while pos < chars {
            let mut take = 1;
            for len in (2..=self.longest.min(chars - pos)).rev() {
                if self.words.contains(&run[bounds[pos]..bounds[pos + len]]) {
                    take = len;
                    break;
                }
            }
            out.push(&run[bounds[pos]..bounds[pos + take]]);
            pos += take;
        }
    }
}

impl Segmenter for LexiconSegmenter {
    fn segment<'a>(&self, text: &'a str) -> Vec<&'a str> {
        split_runs(text, |run, out| self.split_cjk(run, out))
    }
}

/// A post-processed hypothesis as written by the post-processing stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostprocessedRecord {
    pub id: String,
    pub text: String,
    pub rules_fired: Vec<Rule>,
    pub runs_compressed: usize,
}

impl JsonlRecord for PostprocessedRecord {
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
