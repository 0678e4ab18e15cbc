//! Model endpoint access and batch parameter generation.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::prompt::{build_prompt, Prompt};
use super::{fallback_params, validate_params, AnonymizationParams, Provenance};
use crate::binning::ClusterKey;
use crate::clusterstats::{ClusterStats, MIN_MODEL_CLUSTER_SIZE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EndpointError {
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("request timed out")]
    Timeout,
}

#[derive(Debug, Error)]
pub enum ParamGenError {
    #[error("policy `{0:?}` needs a model endpoint")]
    NoEndpoint(ParamPolicy),
    #[error("model parameters required but {} cluster(s) failed; first: {}", .0.len(), .0[0])]
    EndpointExhausted(Vec<ClusterFailure>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ParamPolicy {
    /// Ask the model; clusters whose request or validation fails use the fallback.
    #[value(name = "model")]
    ModelWithFallback,
    /// Ask the model; any failure aborts the run.
    ModelRequired,
    FallbackOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelEndpointConfig {
    /// OpenAI-style base URL, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_retries: u32,
    pub timeout_secs: f64,
    /// First backoff delay; doubled on every retry.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    /// Environment variable holding the API key, sent as a bearer token.
    pub api_key_env: String,
    pub audit_dir: Option<PathBuf>,
}

impl Default for ModelEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model_name: "qwen3-14b".into(),
            temperature: 0.0,
            top_p: 0.0,
            max_retries: 3,
            timeout_secs: 120.0,
            backoff_ms: 500,
            max_in_flight: 4,
            api_key_env: "JIT_ANON_API_KEY".into(),
            audit_dir: None,
        }
    }
}

/// A source of raw model completions. One call is one attempt; retries and
/// JSON extraction happen in [`request_params`].
pub trait ModelClient: Sync {
    fn model_name(&self) -> &str;

    fn complete(&self, label: &str, attempt: u32, prompt: &Prompt) -> Result<String, EndpointError>;

    fn max_retries(&self) -> u32 {
        3
    }

    fn backoff(&self) -> Duration {
        Duration::from_millis(500)
    }

    fn max_in_flight(&self) -> usize {
        1
    }
}

pub struct HttpModelClient {
    config: ModelEndpointConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpModelClient {
    pub fn new(config: ModelEndpointConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs_f64(config.timeout_secs.max(0.001))).build();
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self { config, agent, api_key }
    }

    pub fn config(&self) -> &ModelEndpointConfig {
        &self.config
    }

    fn audit(&self, label: &str, attempt: u32, request: &Value, outcome: &Result<String, EndpointError>) {
        let Some(dir) = &self.config.audit_dir else { return };
        let record = json!({
            "cluster_id": label,
            "attempt": attempt,
            "request": request,
            "response": outcome.as_ref().ok(),
            "error": outcome.as_ref().err().map(|e| e.to_string()),
        });
        let name = format!("{}.{}.attempt{}.json", sanitize(label), sanitize(&self.config.model_name), attempt);
        let written = std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(dir.join(name), serde_json::to_vec_pretty(&record).unwrap_or_default()));
        if let Err(e) = written {
            log::warn!("cannot write audit transcript to {}: {e}", dir.display());
        }
    }
}

pub(crate) fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

impl ModelClient for HttpModelClient {
    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn complete(&self, label: &str, attempt: u32, prompt: &Prompt) -> Result<String, EndpointError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "stream": false,
        });
        let mut req = self.agent.post(&url).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let outcome = match req.send_string(&body.to_string()) {
            Ok(resp) => resp
                .into_string()
                .map_err(|e| EndpointError::MalformedResponse(format!("unreadable body: {e}")))
                .and_then(|text| chat_content(&text)),
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                Err(EndpointError::EndpointUnreachable(format!("HTTP {code}: {}", truncate(&text, 200))))
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.contains("timed out") {
                    Err(EndpointError::Timeout)
                } else {
                    Err(EndpointError::EndpointUnreachable(msg))
                }
            }
        };
        self.audit(label, attempt, &body, &outcome);
        outcome
    }

    fn max_retries(&self) -> u32 {
        self.config.max_retries
    }

    fn backoff(&self) -> Duration {
        Duration::from_millis(self.config.backoff_ms)
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight.max(1)
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Pulls `choices[0].message.content` out of a chat-completions response.
fn chat_content(text: &str) -> Result<String, EndpointError> {
    let v: Value = serde_json::from_str(text).map_err(|e| EndpointError::MalformedResponse(format!("response is not JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| EndpointError::MalformedResponse("no choices[0].message.content".into()))
}

/// First balanced `{...}` span in `text` that parses as a JSON object.
/// Braces inside JSON strings are skipped.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(offset) = text[start..].find('{') {
        let open = start + offset;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        let mut close = None;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_string {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(close) = close {
            let candidate = &text[open..=close];
            if serde_json::from_str::<Value>(candidate).map(|v| v.is_object()).unwrap_or(false) {
                return Some(candidate);
            }
        }
        start = open + 1;
    }
    None
}

/// Sends one prompt, retrying transport failures and JSON-free replies with
/// exponential backoff. Returns the extracted JSON object text.
pub fn request_params(client: &dyn ModelClient, label: &str, prompt: &Prompt) -> Result<String, EndpointError> {
    let attempts = client.max_retries() + 1;
    let mut last = EndpointError::EndpointUnreachable("no attempt made".into());
    for attempt in 0..attempts {
        if attempt > 0 {
            let delay = client.backoff().saturating_mul(1 << (attempt - 1).min(16));
            std::thread::sleep(delay);
        }
        match client.complete(label, attempt, prompt) {
            Ok(text) => match extract_json_object(&text) {
                Some(obj) => return Ok(obj.to_string()),
                None => last = EndpointError::MalformedResponse(format!("no JSON object in: {}", truncate(&text, 120))),
            },
            Err(e) => last = e,
        }
        log::debug!("{label}: attempt {} of {attempts} failed: {last}", attempt + 1);
    }
    Err(last)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFailure {
    pub cluster_id: ClusterKey,
    pub error: String,
}

impl std::fmt::Display for ClusterFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.cluster_id, self.error)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamsOutcome {
    pub params: BTreeMap<ClusterKey, AnonymizationParams>,
    /// Clusters that asked the model and ended on the fallback.
    pub failures: Vec<ClusterFailure>,
}

impl ParamsOutcome {
    pub fn count(&self, provenance: Provenance) -> usize {
        self.params.values().filter(|p| p.provenance == provenance).count()
    }
}

fn model_params(client: &dyn ModelClient, stats: &ClusterStats) -> Result<AnonymizationParams, String> {
    let label = stats.cluster_id.to_string();
    let raw = request_params(client, &label, &build_prompt(stats)).map_err(|e| e.to_string())?;
    validate_params(&raw, &stats.cluster_id).map_err(|e| e.to_string())
}

/// Parameters for every cluster. The result does not depend on the order in
/// which concurrent requests complete.
pub fn generate_all_params(
    stats: &BTreeMap<ClusterKey, ClusterStats>,
    client: Option<&dyn ModelClient>,
    policy: ParamPolicy,
) -> Result<ParamsOutcome, ParamGenError> {
    let client = match (policy, client) {
        (ParamPolicy::FallbackOnly, _) => None,
        (_, None) => return Err(ParamGenError::NoEndpoint(policy)),
        (_, Some(c)) => Some(c),
    };
    let entries: Vec<&ClusterStats> = stats.values().collect();
    let mut results: Vec<Option<Result<AnonymizationParams, String>>> = vec![None; entries.len()];

    if let Some(client) = client {
        let wanted: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].count >= MIN_MODEL_CLUSTER_SIZE).collect();
        let next = AtomicUsize::new(0);
        let slots = Mutex::new(&mut results);
        let workers = client.max_in_flight().max(1).min(wanted.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&i) = wanted.get(k) else { break };
                    let outcome = model_params(client, entries[i]);
                    slots.lock().expect("result lock")[i] = Some(outcome);
                });
            }
        });
    }

    let mut params = BTreeMap::new();
    let mut failures = Vec::new();
    for (stats, result) in entries.iter().zip(results) {
        let p = match result {
            Some(Ok(p)) => p,
            Some(Err(error)) => {
                log::warn!("cluster {}: model parameters rejected, using fallback: {error}", stats.cluster_id);
                failures.push(ClusterFailure { cluster_id: stats.cluster_id, error });
                fallback_params(stats)
            }
            None => fallback_params(stats),
        };
        params.insert(stats.cluster_id, p);
    }
    if policy == ParamPolicy::ModelRequired && !failures.is_empty() {
        return Err(ParamGenError::EndpointExhausted(failures));
    }
    Ok(ParamsOutcome { params, failures })
}
