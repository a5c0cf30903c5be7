//! Minimum-Bayes-risk selection over a candidate set.
//!
//! Every candidate is scored as a hypothesis against each other candidate
//! as a sole pseudo-reference; its expected utility is the mean of those
//! sentence-BLEU scores (self-comparison excluded) and the candidate with
//! the highest expected utility is selected, lowest index on ties.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bleu::{sentence_bleu_counts, BleuConfig, BleuError, NgramCounts};
use crate::jsonl::{JsonlRecord, SchemaViolation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Greedy (or beam) decoding output.
    Deterministic,
    /// Temperature / nucleus sample.
    Sampled,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Deterministic => "deterministic",
            Origin::Sampled => "sampled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
}

impl Candidate {
    pub fn deterministic(text: impl Into<String>) -> Self {
        Candidate { text: text.into(), origin: Origin::Deterministic, sample_index: None }
    }

    pub fn sampled(text: impl Into<String>, sample_index: u32) -> Self {
        Candidate { text: text.into(), origin: Origin::Sampled, sample_index: Some(sample_index) }
    }
}

/// How a candidate set was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationInfo {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub num_samples: usize,
    pub deterministic_pass: bool,
    /// Retried requests across the whole set.
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub segment_id: String,
    pub candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationInfo>,
}

impl CandidateSet {
    pub fn new(segment_id: impl Into<String>, candidates: Vec<Candidate>) -> Self {
        CandidateSet { segment_id: segment_id.into(), candidates, generation: None }
    }

    /// Builds a set of sampled candidates numbered from 0.
    pub fn from_samples<S: Into<String>>(segment_id: impl Into<String>, texts: impl IntoIterator<Item = S>) -> Self {
        let candidates = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| Candidate::sampled(t, i as u32))
            .collect();
        Self::new(segment_id, candidates)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

impl JsonlRecord for CandidateSet {
    fn validate(&self) -> Result<(), SchemaViolation> {
        if self.candidates.is_empty() {
            return Err(SchemaViolation::new("candidates", "must be non-empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, c) in self.candidates.iter().enumerate() {
            match (c.origin, c.sample_index) {
                (Origin::Deterministic, Some(_)) => {
                    return Err(SchemaViolation::new(
                        "sample_index",
                        format!("candidate {i} is deterministic but carries a sample_index"),
                    ))
                }
                (Origin::Deterministic, None) if i != 0 => {
                    return Err(SchemaViolation::new(
                        "origin",
                        format!("deterministic candidate must be at index 0, found at {i}"),
                    ))
                }
                (Origin::Sampled, None) => {
                    return Err(SchemaViolation::new(
                        "sample_index",
                        format!("sampled candidate {i} has no sample_index"),
                    ))
                }
                (Origin::Sampled, Some(k)) if !seen.insert(k) => {
                    return Err(SchemaViolation::new("sample_index", format!("duplicate sample_index {k}")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn record_id(&self) -> Option<&str> {
        Some(&self.segment_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbrResult {
    pub segment_id: String,
    pub selected_index: usize,
    pub selected_text: String,
    pub expected_utilities: Vec<f64>,
    /// `utility_matrix[i][j]` = BLEU of candidate `i` against candidate `j`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility_matrix: Option<Vec<Vec<f64>>>,
}

impl JsonlRecord for MbrResult {
    fn validate(&self) -> Result<(), SchemaViolation> {
        if self.selected_index >= self.expected_utilities.len() {
            return Err(SchemaViolation::new("selected_index", "out of range of expected_utilities"));
        }
        Ok(())
    }

    fn record_id(&self) -> Option<&str> {
        Some(&self.segment_id)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MbrError {
    #[error("segment {segment_id}: invalid candidate set: {violation}")]
    InvalidSet { segment_id: String, violation: SchemaViolation },
    #[error("segment {segment_id}: {source}")]
    Bleu {
        segment_id: String,
        #[source]
        source: BleuError,
    },
    #[error("parallelism must be at least 1")]
    InvalidParallelism,
}

/// Selects the candidate with the highest expected BLEU against the others.
pub fn mbr_select(set: &CandidateSet, config: &BleuConfig) -> Result<MbrResult, MbrError> {
    select(set, config, false)
}

/// As [`mbr_select`], also returning the full pairwise utility matrix.
pub fn mbr_select_with_matrix(set: &CandidateSet, config: &BleuConfig) -> Result<MbrResult, MbrError> {
    select(set, config, true)
}

fn select(set: &CandidateSet, config: &BleuConfig, keep_matrix: bool) -> Result<MbrResult, MbrError> {
    set.validate().map_err(|violation| MbrError::InvalidSet {
        segment_id: set.segment_id.clone(),
        violation,
    })?;
    config.validate().map_err(|source| MbrError::Bleu {
        segment_id: set.segment_id.clone(),
        source,
    })?;

    let n = set.len();
    let counts: Vec<NgramCounts> = set
        .candidates
        .iter()
        .map(|c| NgramCounts::from_text(&c.text, config))
        .collect();
    let matrix: Vec<Vec<f64>> = counts
        .iter()
        .map(|hyp| counts.iter().map(|r| sentence_bleu_counts(hyp, r, config).score).collect())
        .collect();

    let expected_utilities: Vec<f64> = if n == 1 {
        vec![1.0]
    } else {
        matrix
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let sum: f64 = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, u)| u).sum();
                sum / (n - 1) as f64
            })
            .collect()
    };

    let mut selected_index = 0;
    for (i, &u) in expected_utilities.iter().enumerate().skip(1) {
        if u > expected_utilities[selected_index] {
            selected_index = i;
        }
    }

    Ok(MbrResult {
        segment_id: set.segment_id.clone(),
        selected_index,
        selected_text: set.candidates[selected_index].text.clone(),
        expected_utilities,
        utility_matrix: keep_matrix.then_some(matrix),
    })
}

/// Runs [`mbr_select`] over `sets` on `parallelism` worker threads.
///
/// Results come back in input order and are identical to serial calls.
/// On failure the error of the earliest failing set is returned.
pub fn mbr_batch(sets: &[CandidateSet], config: &BleuConfig, parallelism: usize) -> Result<Vec<MbrResult>, MbrError> {
    if parallelism == 0 {
        return Err(MbrError::InvalidParallelism);
    }
    if parallelism == 1 {
        return sets.iter().map(|s| mbr_select(s, config)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .expect("failed to start MBR worker pool");
    let results: Vec<Result<MbrResult, MbrError>> =
        pool.install(|| sets.par_iter().map(|s| mbr_select(s, config)).collect());
    results.into_iter().collect()
}
