use std::fmt;
use std::path::{Path, PathBuf};

use base64::Engine;
use dimt_core::types::Segment;
use serde_json::{json, Map, Value};

use crate::config::{EndpointConfig, SamplingConfig};
use crate::error::GenError;

/// Header carrying `{segment_id}/{kind}` on every request.
pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RequestKind {
    Deterministic,
    Sampled(u32),
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RequestKind::Deterministic => f.write_str("deterministic"),
            RequestKind::Sampled(i) => write!(f, "sample-{i}"),
        }
    }
}

impl RequestKind {
    pub fn request_id(&self, segment_id: &str) -> String {
        format!("{segment_id}/{self}")
    }

    /// Inverse of [`RequestKind::request_id`].
    pub fn parse_request_id(id: &str) -> Option<(&str, RequestKind)> {
        let (segment, kind) = id.rsplit_once('/')?;
        let kind = match kind {
            "deterministic" => RequestKind::Deterministic,
            other => RequestKind::Sampled(other.strip_prefix("sample-")?.parse().ok()?),
        };
        Some((segment, kind))
    }
}

/// User prompt with a required `{source_text}` placeholder; `{segment_id}`
/// is also substituted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate(String);

impl PromptTemplate {
    pub const DEFAULT: &'static str =
        "Translate the following English text into Chinese. Output only the translation.\n\n{source_text}";

    pub fn new(template: impl Into<String>) -> Result<Self, GenError> {
        let template = template.into();
        if !template.contains("{source_text}") {
            return Err(GenError::Config("prompt template must contain {source_text}".into()));
        }
        Ok(PromptTemplate(template))
    }

    pub fn render(&self, segment: &Segment) -> String {
        self.0
            .replace("{source_text}", &segment.source_text)
            .replace("{segment_id}", &segment.id)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate(Self::DEFAULT.to_string())
    }
}

fn mime_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

/// URL for an `image_url` content part: remote and data URLs pass through,
/// local paths (relative to `image_root`) are inlined as base64 data URLs.
pub fn image_url(segment: &Segment, image_root: Option<&Path>) -> Result<Option<String>, GenError> {
    let Some(reference) = segment.image_ref.as_deref().filter(|r| !r.is_empty()) else {
        return Ok(None);
    };
    if ["http://", "https://", "data:"].iter().any(|p| reference.starts_with(p)) {
        return Ok(Some(reference.to_string()));
    }
    let path = match image_root {
        Some(root) if Path::new(reference).is_relative() => root.join(reference),
        _ => PathBuf::from(reference),
    };
    let bytes = std::fs::read(&path).map_err(|source| GenError::Image {
        segment_id: segment.id.clone(),
        path: path.clone(),
        source,
    })?;
    let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(Some(format!("data:{};base64,{encoded}", mime_for(&path))))
}

/// Chat-completion request body. Sampled requests carry `temperature` and
/// `top_p`; the deterministic request carries neither, only the endpoint's
/// greedy parameters.
pub fn build_body(
    prompt: &str,
    image: Option<&str>,
    kind: RequestKind,
    sampling: &SamplingConfig,
    endpoint: &EndpointConfig,
) -> Value {
    let content = match image {
        Some(url) => json!([
            {"type": "image_url", "image_url": {"url": url}},
            {"type": "text", "text": prompt},
        ]),
        None => Value::String(prompt.to_string()),
    };
    let mut body = Map::new();
    body.insert("model".into(), Value::String(endpoint.model_name.clone()));
    body.insert("messages".into(), json!([{"role": "user", "content": content}]));
    body.insert("max_tokens".into(), Value::from(sampling.max_output_tokens));
    body.insert("n".into(), Value::from(1));
    body.insert("stream".into(), Value::Bool(false));
    match kind {
        RequestKind::Deterministic => {
            for (k, v) in &endpoint.greedy_params {
                body.insert(k.clone(), v.clone());
            }
        }
        RequestKind::Sampled(_) => {
            body.insert("temperature".into(), Value::from(sampling.temperature));
            body.insert("top_p".into(), Value::from(sampling.top_p));
        }
    }
    Value::Object(body)
}

/// `choices[0].message.content` of a chat-completion response.
pub fn response_content(body: &Value) -> Option<&str> {
    body.get("choices")?.get(0)?.get("message")?.get("content")?.as_str()
}
