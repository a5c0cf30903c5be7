//! Scripted chat-completion endpoint.
//!
//! The server records every request it receives in a ledger (body, request
//! id, attempt number, arrival time, concurrency at arrival) and answers
//! through a [`Responder`]. Used by the test suites and by the CLI's
//! `mock-server` command for offline fixture runs.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Router;
use dimt_core::jsonl::{read_all, JsonlError, JsonlRecord, SchemaViolation};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use url::Url;

use crate::request::{RequestKind, REQUEST_ID_HEADER};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    /// 200 with a well-formed completion whose content is this text.
    Content(String),
    /// The given status with a plain-text body.
    Status(u16, String),
    /// 200 with a body that is not JSON.
    Malformed,
}

pub struct MockRequest<'a> {
    pub request_id: Option<&'a str>,
    pub body: &'a Value,
    /// How many earlier requests carried the same request id.
    pub attempt: usize,
}

impl MockRequest<'_> {
    pub fn kind(&self) -> Option<(&str, RequestKind)> {
        self.request_id.and_then(RequestKind::parse_request_id)
    }

    /// Text of the first user message (string content or first text part).
    pub fn prompt(&self) -> &str {
        let content = &self.body["messages"][0]["content"];
        content
            .as_str()
            .or_else(|| {
                content
                    .as_array()?
                    .iter()
                    .find(|p| p["type"] == "text")?
                    .get("text")?
                    .as_str()
            })
            .unwrap_or("")
    }
}

pub trait Responder: Send + Sync + 'static {
    fn respond(&self, request: &MockRequest<'_>) -> MockReply;
}

impl<F> Responder for F
where
    F: Fn(&MockRequest<'_>) -> MockReply + Send + Sync + 'static,
{
    fn respond(&self, request: &MockRequest<'_>) -> MockReply {
        self(request)
    }
}

/// Answers with the prompt, suffixed ` #k` for sample `k`.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoResponder;

impl Responder for EchoResponder {
    fn respond(&self, request: &MockRequest<'_>) -> MockReply {
        let prompt = request.prompt();
        MockReply::Content(match request.kind() {
            Some((_, RequestKind::Sampled(k))) => format!("{prompt} #{k}"),
            _ => prompt.to_string(),
        })
    }
}

/// Fails the first `failures` attempts of every request id with `status`,
/// then defers to `inner`.
pub struct FailFirst<R> {
    pub failures: usize,
    pub status: u16,
    pub inner: R,
}

impl<R: Responder> Responder for FailFirst<R> {
    fn respond(&self, request: &MockRequest<'_>) -> MockReply {
        if request.attempt < self.failures {
            MockReply::Status(self.status, "scripted failure".into())
        } else {
            self.inner.respond(request)
        }
    }
}

/// Pre-recorded outputs for one segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedResponse {
    pub segment_id: String,
    pub deterministic: String,
    pub samples: Vec<String>,
}

impl JsonlRecord for RecordedResponse {
    fn validate(&self) -> Result<(), SchemaViolation> {
        if self.segment_id.is_empty() {
            return Err(SchemaViolation::new("segment_id", "must be non-empty"));
        }
        Ok(())
    }
}

/// Replays [`RecordedResponse`]s keyed by the request-id header. Sample `k`
/// beyond the recorded list wraps around; unknown segments get a 404.
#[derive(Debug, Clone, Default)]
pub struct Recorded {
    responses: HashMap<String, RecordedResponse>,
}

impl Recorded {
    pub fn new(responses: impl IntoIterator<Item = RecordedResponse>) -> Self {
        Recorded { responses: responses.into_iter().map(|r| (r.segment_id.clone(), r)).collect() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, JsonlError> {
        Ok(Self::new(read_all::<RecordedResponse>(path)?))
    }
}

impl Responder for Recorded {
    fn respond(&self, request: &MockRequest<'_>) -> MockReply {
        let Some((segment, kind)) = request.kind() else {
            return MockReply::Status(400, "missing or malformed x-request-id".into());
        };
        let Some(rec) = self.responses.get(segment) else {
            return MockReply::Status(404, format!("no recording for segment {segment}"));
        };
        match kind {
            RequestKind::Deterministic => MockReply::Content(rec.deterministic.clone()),
            RequestKind::Sampled(_) if rec.samples.is_empty() => MockReply::Content(rec.deterministic.clone()),
            RequestKind::Sampled(k) => MockReply::Content(rec.samples[k as usize % rec.samples.len()].clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub seq: usize,
    pub request_id: Option<String>,
    pub attempt: usize,
    pub body: Value,
    pub status: u16,
    /// Arrival time since server start.
    pub arrived: Duration,
    /// Requests being handled when this one arrived, itself included.
    pub in_flight: usize,
}

#[derive(Debug, Clone, Default)]
pub struct MockOptions {
    /// Delay before every reply, to make concurrency observable.
    pub latency: Duration,
    /// Bind address; an ephemeral localhost port when `None`.
    pub addr: Option<SocketAddr>,
}

struct Shared {
    responder: Box<dyn Responder>,
    latency: Duration,
    started: Instant,
    ledger: Mutex<Vec<LedgerEntry>>,
    attempts: Mutex<HashMap<String, usize>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
}

impl MockServer {
    pub async fn start(responder: impl Responder) -> std::io::Result<Self> {
        Self::start_with(responder, MockOptions::default()).await
    }

    pub async fn start_with(responder: impl Responder, options: MockOptions) -> std::io::Result<Self> {
        let shared = Arc::new(Shared {
            responder: Box::new(responder),
            latency: options.latency,
            started: Instant::now(),
            ledger: Mutex::new(Vec::new()),
            attempts: Mutex::new(HashMap::new()),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        });
        let app = Router::new().fallback(handle).with_state(shared.clone());
        let bind = options.addr.unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 0)));
        let listener = tokio::net::TcpListener::bind(bind).await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(MockServer { addr, shared, shutdown: Some(tx) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `http://{addr}/v1`, suitable as an endpoint base URL.
    pub fn base_url(&self) -> Url {
        Url::parse(&format!("http://{}/v1", self.addr)).expect("socket address forms a valid URL")
    }

    pub fn ledger(&self) -> Vec<LedgerEntry> {
        self.shared.ledger.lock().expect("ledger lock").clone()
    }

    pub fn request_count(&self) -> usize {
        self.shared.ledger.lock().expect("ledger lock").len()
    }

    pub fn max_in_flight(&self) -> usize {
        self.shared.max_in_flight.load(Ordering::SeqCst)
    }

    /// Blocks until the task is cancelled; for the CLI's foreground server.
    pub async fn serve_forever(self) {
        std::future::pending::<()>().await;
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

async fn handle(State(shared): State<Arc<Shared>>, headers: HeaderMap, body: Bytes) -> Response {
    let now = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    shared.max_in_flight.fetch_max(now, Ordering::SeqCst);
    let arrived = shared.started.elapsed();

    let request_id = headers
        .get(REQUEST_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let attempt = match &request_id {
        Some(id) => {
            let mut attempts = shared.attempts.lock().expect("attempt lock");
            let n = attempts.entry(id.clone()).or_default();
            *n += 1;
            *n - 1
        }
        None => 0,
    };
    let parsed: Option<Value> = serde_json::from_slice(&body).ok();
    let reply = match &parsed {
        Some(value) => shared.responder.respond(&MockRequest {
            request_id: request_id.as_deref(),
            body: value,
            attempt,
        }),
        None => MockReply::Status(400, "request body is not JSON".into()),
    };
    if !shared.latency.is_zero() {
        tokio::time::sleep(shared.latency).await;
    }

    let (status, response) = match reply {
        MockReply::Content(text) => (
            200,
            axum::Json(json!({
                "id": request_id.clone().unwrap_or_default(),
                "object": "chat.completion",
                "model": parsed.as_ref().and_then(|b| b["model"].as_str()).unwrap_or(""),
                "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
            }))
            .into_response(),
        ),
        MockReply::Status(code, text) => {
            let code = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (code.as_u16(), (code, text).into_response())
        }
        MockReply::Malformed => (200, (StatusCode::OK, "{not json").into_response()),
    };

    {
        let mut ledger = shared.ledger.lock().expect("ledger lock");
        let seq = ledger.len();
        ledger.push(LedgerEntry {
            seq,
            request_id,
            attempt,
            body: parsed.unwrap_or(Value::Null),
            status,
            arrived,
            in_flight: now,
        });
    }
    shared.in_flight.fetch_sub(1, Ordering::SeqCst);
    response
}
