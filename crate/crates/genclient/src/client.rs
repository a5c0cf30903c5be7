use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use dimt_core::mbr::{Candidate, CandidateSet, GenerationInfo};
use dimt_core::types::Segment;
use futures::stream::{self, StreamExt};
use rand::Rng;
use serde_json::Value;
use tokio::sync::Semaphore;

use crate::config::{EndpointConfig, SamplingConfig};
use crate::error::GenError;
use crate::request::{build_body, image_url, response_content, PromptTemplate, RequestKind, REQUEST_ID_HEADER};

pub type SegmentOutcome = Result<CandidateSet, GenError>;

enum Failure {
    Retryable(String),
    Fatal { status: u16, body: String },
}

/// Chat-completion client with a shared in-flight request limit.
pub struct GenClient {
    http: reqwest::Client,
    endpoint: EndpointConfig,
    sampling: SamplingConfig,
    token: Option<String>,
    permits: Arc<Semaphore>,
    image_root: Option<PathBuf>,
    requests_sent: AtomicU64,
    retries: AtomicU64,
}

impl GenClient {
    /// Validates both configs and reads the bearer token from the
    /// endpoint's environment variable, if set.
    pub fn new(endpoint: EndpointConfig, sampling: SamplingConfig) -> Result<Self, GenError> {
        endpoint.validate()?;
        sampling.validate()?;
        let http = reqwest::Client::builder()
            .build()
            .map_err(|e| GenError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(GenClient {
            http,
            token: endpoint.auth_token(),
            permits: Arc::new(Semaphore::new(endpoint.max_concurrent_requests)),
            endpoint,
            sampling,
            image_root: None,
            requests_sent: AtomicU64::new(0),
            retries: AtomicU64::new(0),
        })
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    /// Directory that relative `image_ref` paths are resolved against.
    pub fn with_image_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    pub fn endpoint(&self) -> &EndpointConfig {
        &self.endpoint
    }

    pub fn sampling(&self) -> &SamplingConfig {
        &self.sampling
    }

    /// HTTP requests issued so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests_sent.load(Ordering::Relaxed)
    }

    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    fn kinds(&self) -> Vec<RequestKind> {
        let det = self.sampling.deterministic_pass.then_some(RequestKind::Deterministic);
        det.into_iter()
            .chain((0..self.sampling.num_samples as u32).map(RequestKind::Sampled))
            .collect()
    }

    /// Collects one deterministic output (if enabled) and `num_samples`
    /// samples for `segment`, all requests in flight concurrently.
    pub async fn collect_candidates(&self, segment: &Segment, prompt: &str) -> Result<CandidateSet, GenError> {
        if prompt.trim().is_empty() {
            return Err(GenError::Config(format!("segment {}: empty prompt", segment.id)));
        }
        let image = image_url(segment, self.image_root.as_deref())?;
        let kinds = self.kinds();
        let requests = kinds.iter().map(|&kind| {
            let body = build_body(prompt, image.as_deref(), kind, &self.sampling, &self.endpoint);
            async move { self.send(&segment.id, kind, body).await }
        });
        let answers = futures::future::join_all(requests).await;

        let mut candidates = Vec::with_capacity(kinds.len());
        let mut retries = 0;
        for (kind, answer) in kinds.into_iter().zip(answers) {
            let (text, r) = answer?;
            retries += r;
            candidates.push(match kind {
                RequestKind::Deterministic => Candidate::deterministic(text),
                RequestKind::Sampled(i) => Candidate::sampled(text, i),
            });
        }
        Ok(CandidateSet {
            segment_id: segment.id.clone(),
            candidates,
            generation: Some(GenerationInfo {
                model: self.endpoint.model_name.clone(),
                temperature: self.sampling.temperature,
                top_p: self.sampling.top_p,
                num_samples: self.sampling.num_samples,
                deterministic_pass: self.sampling.deterministic_pass,
                retries,
            }),
        })
    }

    /// Collects candidates for every segment, results in input order.
    ///
    /// Per-segment failures are returned inline. With `fail_fast` the first
    /// failure (in input order) aborts the batch instead.
    pub async fn collect_batch(
        &self,
        segments: Vec<Segment>,
        template: &PromptTemplate,
        fail_fast: bool,
    ) -> Result<Vec<SegmentOutcome>, GenError> {
        let width = self.endpoint.max_concurrent_requests;
        let mut outcomes = stream::iter(segments)
            .map(|segment| async move {
                let prompt = template.render(&segment);
                self.collect_candidates(&segment, &prompt).await
            })
            .buffered(width);
        let mut results = Vec::new();
        while let Some(outcome) = outcomes.next().await {
            match outcome {
                Err(e) if fail_fast => return Err(e),
                other => results.push(other),
            }
        }
        Ok(results)
    }

    async fn send(&self, segment_id: &str, kind: RequestKind, body: Value) -> Result<(String, u32), GenError> {
        let url = self.endpoint.completions_url();
        let request_id = kind.request_id(segment_id);
        let mut last_error = String::new();
        for attempt in 0..=self.endpoint.max_retries {
            let outcome = {
                let _permit = self.permits.acquire().await.expect("semaphore is never closed");
                self.requests_sent.fetch_add(1, Ordering::Relaxed);
                self.attempt(&url, &request_id, &body).await
            };
            match outcome {
                Ok(text) => return Ok((text, attempt)),
                Err(Failure::Fatal { status, body }) => {
                    return Err(GenError::Rejected { segment_id: segment_id.to_string(), kind, status, body })
                }
                Err(Failure::Retryable(msg)) => last_error = msg,
            }
            if attempt < self.endpoint.max_retries {
                self.retries.fetch_add(1, Ordering::Relaxed);
                tokio::time::sleep(jittered(self.endpoint.backoff_ceiling(attempt))).await;
            }
        }
        Err(GenError::Exhausted {
            segment_id: segment_id.to_string(),
            kind,
            attempts: self.endpoint.max_retries + 1,
            last_error,
        })
    }

    async fn attempt(&self, url: &url::Url, request_id: &str, body: &Value) -> Result<String, Failure> {
        let mut req = self
            .http
            .post(url.clone())
            .header(REQUEST_ID_HEADER, request_id)
            .timeout(self.endpoint.timeout())
            .json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().await.map_err(|e| Failure::Retryable(format!("transport: {e}")))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| Failure::Retryable(format!("reading body: {e}")))?;
        if status.is_client_error() && status.as_u16() != 408 && status.as_u16() != 429 {
            return Err(Failure::Fatal { status: status.as_u16(), body: truncate(&text) });
        }
        if !status.is_success() {
            return Err(Failure::Retryable(format!("HTTP {status}: {}", truncate(&text))));
        }
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Retryable(format!("malformed response JSON: {e}")))?;
        response_content(&parsed)
            .map(str::to_string)
            .ok_or_else(|| Failure::Retryable("response has no choices[0].message.content".into()))
    }
}

/// Uniform in `[ceiling / 2, ceiling]`.
fn jittered(ceiling: Duration) -> Duration {
    let half = ceiling / 2;
    half + rand::rng().random_range(Duration::ZERO..=half)
}

fn truncate(text: &str) -> String {
    text.chars().take(500).collect()
}
