use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use url::Url;

use crate::error::GenError;

pub const DEFAULT_API_KEY_ENV: &str = "DIMT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub num_samples: usize,
    pub deterministic_pass: bool,
    pub max_output_tokens: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 0.7,
            top_p: 0.95,
            num_samples: 10,
            deterministic_pass: true,
            max_output_tokens: 8192,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        if !(self.temperature > 0.0 && self.temperature <= 2.0) {
            return Err(GenError::Config(format!("temperature must be in (0, 2], got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GenError::Config(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.requests_per_segment() == 0 {
            return Err(GenError::Config("nothing to collect: no samples and no deterministic pass".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GenError::Config("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn requests_per_segment(&self) -> usize {
        self.num_samples + usize::from(self.deterministic_pass)
    }
}

fn default_greedy_params() -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("top_k".into(), Value::from(1));
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// API root, e.g. `http://localhost:8000/v1`; requests go to
    /// `{base_url}/chat/completions`.
    pub base_url: Url,
    pub model_name: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_concurrent_requests: usize,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
    /// Extra fields merged into the deterministic request body. Never
    /// `temperature` or `top_p`.
    pub greedy_params: Map<String, Value>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: Url::parse("http://127.0.0.1:8000/v1").expect("static url"),
            model_name: "default".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 120.0,
            max_retries: 3,
            max_concurrent_requests: 8,
            backoff_base_ms: 1_000,
            backoff_cap_ms: 30_000,
            greedy_params: default_greedy_params(),
        }
    }
}

impl EndpointConfig {
    pub fn new(base_url: Url, model_name: impl Into<String>) -> Self {
        EndpointConfig { base_url, model_name: model_name.into(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if !matches!(self.base_url.scheme(), "http" | "https") || self.base_url.cannot_be_a_base() {
            return Err(GenError::Config(format!("base_url must be an http(s) URL, got {}", self.base_url)));
        }
        if self.max_concurrent_requests == 0 {
            return Err(GenError::Config("max_concurrent_requests must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(GenError::Config("timeout_secs must be positive".into()));
        }
        if self.backoff_cap_ms < self.backoff_base_ms {
            return Err(GenError::Config("backoff_cap_ms must be >= backoff_base_ms".into()));
        }
        for key in ["temperature", "top_p"] {
            if self.greedy_params.contains_key(key) {
                return Err(GenError::Config(format!("greedy_params must not set `{key}`")));
            }
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn completions_url(&self) -> Url {
        let mut url = self.base_url.clone();
        url.path_segments_mut()
            .expect("validated base url")
            .pop_if_empty()
            .extend(["chat", "completions"]);
        url
    }

    /// Upper bound of the backoff before retry `retry` (0-based): the
    /// exponential delay capped at `backoff_cap_ms`. The actual sleep is
    /// drawn uniformly from the upper half of this bound.
    pub fn backoff_ceiling(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_cap_ms))
    }

    pub fn auth_token(&self) -> Option<String> {
        std::env::var(&self.api_key_env).ok().filter(|t| !t.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        assert!(SamplingConfig::default().validate().is_ok());
        assert!(EndpointConfig::default().validate().is_ok());
        assert_eq!(SamplingConfig::default().requests_per_segment(), 11);
    }

    #[test]
    fn sampling_bounds() {
        let s = SamplingConfig::default();
        assert!(SamplingConfig { temperature: 0.0, ..s.clone() }.validate().is_err());
        assert!(SamplingConfig { temperature: 2.5, ..s.clone() }.validate().is_err());
        assert!(SamplingConfig { top_p: 1.5, ..s.clone() }.validate().is_err());
        assert!(SamplingConfig { num_samples: 0, deterministic_pass: false, ..s.clone() }.validate().is_err());
        assert!(SamplingConfig { num_samples: 0, ..s }.validate().is_ok());
    }

    #[test]
    fn completions_url_joins_path() {
        let e = EndpointConfig::new(Url::parse("http://h:1/v1").unwrap(), "m");
        assert_eq!(e.completions_url().as_str(), "http://h:1/v1/chat/completions");
        let e = EndpointConfig::new(Url::parse("http://h:1/v1/").unwrap(), "m");
        assert_eq!(e.completions_url().as_str(), "http://h:1/v1/chat/completions");
    }

    #[test]
    fn backoff_doubles_then_caps() {
        let e = EndpointConfig::default();
        let ms: Vec<u128> = (0..7).map(|r| e.backoff_ceiling(r).as_millis()).collect();
        assert_eq!(ms, [1000, 2000, 4000, 8000, 16000, 30000, 30000]);
        assert_eq!(e.backoff_ceiling(80).as_millis(), 30000);
    }

    #[test]
    fn greedy_params_cannot_sample() {
        let mut e = EndpointConfig::default();
        e.greedy_params.insert("temperature".into(), Value::from(0));
        assert!(e.validate().is_err());
    }
}
