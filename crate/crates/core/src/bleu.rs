//! Sentence- and corpus-level BLEU.
//!
//! Scoring conventions:
//! - clipped n-gram counts take the maximum count over all references;
//! - the effective reference length is the reference closest in length to
//!   the hypothesis, the shorter one on ties;
//! - an order for which the hypothesis has no n-grams at all (it is shorter
//!   than the order) contributes precision 1.0, so any non-empty hypothesis
//!   scores exactly 1.0 against itself;
//! - an order with n-grams but no matches contributes 0, or
//!   `epsilon / total` under [`Smoothing::FloorEpsilon`];
//! - an empty hypothesis scores 0 and its brevity penalty is the limit
//!   value of `exp(1 - r/c)` as `c -> 0`, i.e. 0 (1 if the reference is
//!   empty as well).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::text::{tokenize, TokenScheme};

pub const MAX_SUPPORTED_ORDER: usize = 9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BleuError {
    #[error("max_order must be in 1..={MAX_SUPPORTED_ORDER}, got {0}")]
    InvalidOrder(usize),
    #[error("smoothing epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("at least one reference is required")]
    EmptyReferences,
    #[error("corpus is empty")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    None,
    /// Zero-match orders contribute `epsilon / total` instead of 0.
    FloorEpsilon,
}

impl Smoothing {
    pub fn as_str(self) -> &'static str {
        match self {
            Smoothing::None => "none",
            Smoothing::FloorEpsilon => "floor_epsilon",
        }
    }
}

impl fmt::Display for Smoothing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Smoothing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Smoothing::None),
            "floor" | "floor_epsilon" | "floor-epsilon" => Ok(Smoothing::FloorEpsilon),
            other => Err(format!("unknown smoothing `{other}` (none, floor)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BleuConfig {
    pub max_order: usize,
    pub smoothing: Smoothing,
    pub epsilon: f64,
    pub tokenization: TokenScheme,
    /// Lowercase before tokenizing. Scoring is case-sensitive by default.
    pub lowercase: bool,
}

impl Default for BleuConfig {
    /// Sentence-level defaults: 4-gram, floor smoothing at 0.1, mixed tokens.
    fn default() -> Self {
        BleuConfig {
            max_order: 4,
            smoothing: Smoothing::FloorEpsilon,
            epsilon: 0.1,
            tokenization: TokenScheme::Mixed,
            lowercase: false,
        }
    }
}

impl BleuConfig {
    /// Corpus-level defaults: as [`Default`] but unsmoothed.
    pub fn corpus() -> Self {
        BleuConfig { smoothing: Smoothing::None, ..Self::default() }
    }

    pub fn with_max_order(mut self, max_order: usize) -> Self {
        self.max_order = max_order;
        self
    }

    pub fn with_smoothing(mut self, smoothing: Smoothing) -> Self {
        self.smoothing = smoothing;
        self
    }

    pub fn with_tokenization(mut self, scheme: TokenScheme) -> Self {
        self.tokenization = scheme;
        self
    }

    pub fn validate(&self) -> Result<(), BleuError> {
        if !(1..=MAX_SUPPORTED_ORDER).contains(&self.max_order) {
            return Err(BleuError::InvalidOrder(self.max_order));
        }
        if self.smoothing == Smoothing::FloorEpsilon && !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(BleuError::InvalidEpsilon(self.epsilon));
        }
        Ok(())
    }

    /// Canonical one-line description of every scoring choice.
    pub fn describe(&self) -> String {
        format!(
            "bleu|order={}|smooth={}|eps={}|tok={}|case={}|norm=nfc",
            self.max_order,
            self.smoothing,
            self.epsilon,
            self.tokenization,
            if self.lowercase { "insensitive" } else { "sensitive" }
        )
    }

    fn tokens(&self, text: &str) -> Vec<String> {
        if self.lowercase {
            tokenize(&text.to_lowercase(), self.tokenization).tokens
        } else {
            tokenize(text, self.tokenization).tokens
        }
    }
}

/// Decomposed BLEU result; `score` and `precisions` are in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hypothesis_length: usize,
    pub reference_length: usize,
}

/// n-gram counts of one tokenized text, for every order up to `max_order`.
#[derive(Debug, Clone)]
pub struct NgramCounts {
    len: usize,
    orders: Vec<HashMap<Vec<String>, u32>>,
}

impl NgramCounts {
    pub fn from_tokens(tokens: &[String], max_order: usize) -> Self {
        let orders = (1..=max_order)
            .map(|n| {
                let mut map: HashMap<Vec<String>, u32> = HashMap::new();
                for gram in tokens.windows(n) {
                    *map.entry(gram.to_vec()).or_default() += 1;
                }
                map
            })
            .collect();
        NgramCounts { len: tokens.len(), orders }
    }

    pub fn from_text(text: &str, config: &BleuConfig) -> Self {
        Self::from_tokens(&config.tokens(text), config.max_order)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn max_order(&self) -> usize {
        self.orders.len()
    }

    fn merge_max(&mut self, other: &NgramCounts) {
        for (mine, theirs) in self.orders.iter_mut().zip(&other.orders) {
            for (gram, &count) in theirs {
                let slot = mine.entry(gram.clone()).or_default();
                *slot = (*slot).max(count);
            }
        }
    }
}

/// Additive sufficient statistics; corpus BLEU sums these before scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub hypothesis_length: usize,
    pub reference_length: usize,
}

impl BleuStats {
    pub fn zero(max_order: usize) -> Self {
        BleuStats {
            matches: vec![0; max_order],
            totals: vec![0; max_order],
            hypothesis_length: 0,
            reference_length: 0,
        }
    }

    /// Statistics of `hyp` against references whose lengths are given
    /// separately from their max-merged counts.
    pub fn compute(hyp: &NgramCounts, refs: &NgramCounts, ref_lens: &[usize]) -> Self {
        let max_order = hyp.max_order();
        let mut stats = BleuStats::zero(max_order);
        for k in 0..max_order {
            let reference = &refs.orders[k];
            let mut total = 0u64;
            let mut matched = 0u64;
            for (gram, &count) in &hyp.orders[k] {
                total += u64::from(count);
                if let Some(&r) = reference.get(gram) {
                    matched += u64::from(count.min(r));
                }
            }
            stats.matches[k] = matched;
            stats.totals[k] = total;
        }
        stats.hypothesis_length = hyp.len;
        stats.reference_length = closest_length(hyp.len, ref_lens);
        stats
    }

    pub fn add(&mut self, other: &BleuStats) {
        for k in 0..self.matches.len() {
            self.matches[k] += other.matches[k];
            self.totals[k] += other.totals[k];
        }
        self.hypothesis_length += other.hypothesis_length;
        self.reference_length += other.reference_length;
    }

    pub fn score(&self, config: &BleuConfig) -> BleuScore {
        let max_order = self.matches.len();
        let c = self.hypothesis_length;
        let r = self.reference_length;
        if c == 0 {
            return BleuScore {
                score: 0.0,
                precisions: vec![0.0; max_order],
                brevity_penalty: if r == 0 { 1.0 } else { 0.0 },
                hypothesis_length: c,
                reference_length: r,
            };
        }
        let precisions: Vec<f64> = self
            .matches
            .iter()
            .zip(&self.totals)
            .map(|(&m, &t)| match (m, t) {
                (_, 0) => 1.0,
                (0, t) => match config.smoothing {
                    Smoothing::None => 0.0,
                    Smoothing::FloorEpsilon => config.epsilon / t as f64,
                },
                (m, t) => m as f64 / t as f64,
            })
            .collect();
        let brevity_penalty = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
        let score = if precisions.contains(&0.0) {
            0.0
        } else {
            let log_sum: f64 = precisions.iter().map(|p| p.ln()).sum();
            (brevity_penalty * (log_sum / max_order as f64).exp()).min(1.0)
        };
        BleuScore {
            score,
            precisions,
            brevity_penalty,
            hypothesis_length: c,
            reference_length: r,
        }
    }
}

fn closest_length(hyp_len: usize, ref_lens: &[usize]) -> usize {
    ref_lens
        .iter()
        .copied()
        .min_by_key(|&r| (r.abs_diff(hyp_len), r))
        .unwrap_or(0)
}

/// Prepared references for one segment: max-merged counts plus lengths.
#[derive(Debug, Clone)]
pub struct PreparedReferences {
    counts: NgramCounts,
    lengths: Vec<usize>,
}

impl PreparedReferences {
    pub fn new<R: AsRef<str>>(refs: &[R], config: &BleuConfig) -> Result<Self, BleuError> {
        let mut iter = refs.iter().map(|r| NgramCounts::from_text(r.as_ref(), config));
        let mut counts = iter.next().ok_or(BleuError::EmptyReferences)?;
        let mut lengths = vec![counts.len];
        for other in iter {
            counts.merge_max(&other);
            lengths.push(other.len);
        }
        Ok(PreparedReferences { counts, lengths })
    }

    /// A single pre-counted reference.
    pub fn single(counts: NgramCounts) -> Self {
        let lengths = vec![counts.len];
        PreparedReferences { counts, lengths }
    }

    pub fn stats(&self, hyp: &NgramCounts) -> BleuStats {
        BleuStats::compute(hyp, &self.counts, &self.lengths)
    }
}

/// Sentence BLEU of `hypothesis` against one or more `references`.
pub fn sentence_bleu<R: AsRef<str>>(
    hypothesis: &str,
    references: &[R],
    config: &BleuConfig,
) -> Result<BleuScore, BleuError> {
    config.validate()?;
    let refs = PreparedReferences::new(references, config)?;
    let hyp = NgramCounts::from_text(hypothesis, config);
    Ok(refs.stats(&hyp).score(config))
}

/// Sentence BLEU over pre-counted texts; `hyp` and `reference` must have
/// been built with `config.max_order`.
pub fn sentence_bleu_counts(hyp: &NgramCounts, reference: &NgramCounts, config: &BleuConfig) -> BleuScore {
    BleuStats::compute(hyp, reference, &[reference.len]).score(config)
}

/// Corpus BLEU: match counts, totals and lengths are summed over all pairs
/// before precisions and the brevity penalty are computed.
pub fn corpus_bleu<I, H, Rs>(pairs: I, config: &BleuConfig) -> Result<BleuScore, BleuError>
where
    I: IntoIterator<Item = (H, Rs)>,
    H: AsRef<str>,
    Rs: IntoIterator,
    Rs::Item: AsRef<str>,
{
    config.validate()?;
    let mut total = BleuStats::zero(config.max_order);
    let mut seen = 0usize;
    for (hyp, refs) in pairs {
        let refs: Vec<Rs::Item> = refs.into_iter().collect();
        let prepared = PreparedReferences::new(&refs, config)?;
        total.add(&prepared.stats(&NgramCounts::from_text(hyp.as_ref(), config)));
        seen += 1;
    }
    if seen == 0 {
        return Err(BleuError::EmptyCorpus);
    }
    Ok(total.score(config))
}
