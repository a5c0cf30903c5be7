//! Candidate collection for MBR selection.
//!
//! For each segment the client sends one greedy request and `num_samples`
//! temperature/nucleus-sampled requests to an OpenAI-compatible
//! `/chat/completions` endpoint, and assembles the answers into a
//! [`CandidateSet`](dimt_core::mbr::CandidateSet) with the deterministic
//! output first. [`mock`] provides a scripted endpoint for tests and
//! offline fixture runs.

mod client;
mod config;
mod error;
pub mod mock;
mod request;

pub use client::{GenClient, SegmentOutcome};
pub use config::{EndpointConfig, SamplingConfig, DEFAULT_API_KEY_ENV};
pub use error::GenError;
pub use request::{PromptTemplate, RequestKind};
