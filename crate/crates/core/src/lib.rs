//! Inference- and data-side tooling for document image machine translation.
//!
//! The crate covers the pieces that sit around a vision-language model:
//!
//! - [`bleu`]: sentence and corpus BLEU with clipped n-gram counting;
//! - [`mbr`]: minimum-Bayes-risk selection over a candidate set, using
//!   pairwise sentence BLEU as the utility;
//! - [`postprocess`]: repair rules for selected translations (symbol-run
//!   compression, complex-table suppression, space normalization);
//! - [`dataset`]: multi-task and recognize-then-translate conversation
//!   records for fine-tuning;
//! - [`evaluate`]: id-joined corpus scoring and per-track report rendering.
//!
//! Records move between stages as JSONL, see [`jsonl`].

pub mod bleu;
pub mod dataset;
pub mod evaluate;
pub mod jsonl;
pub mod mbr;
pub mod postprocess;
pub mod text;
pub mod types;

pub use bleu::{corpus_bleu, sentence_bleu, BleuConfig, BleuScore, Smoothing};
pub use jsonl::{read_jsonl, write_jsonl, JsonlError, JsonlRecord};
pub use mbr::{mbr_batch, mbr_select, Candidate, CandidateSet, MbrResult, Origin};
pub use text::{tokenize, TokenScheme, TokenSequence};
pub use types::{Segment, Split, SubTask, Track, TrackKind};
