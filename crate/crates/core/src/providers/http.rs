//! Providers backed by a JSON-over-HTTP endpoint.
//!
//! Requests are built from a JSON template. A string value that is exactly a
//! placeholder (`"{n}"`) is replaced by the typed value; placeholders inside
//! longer strings are substituted textually. Responses are read with JSON
//! pointers, so most hosted or self-hosted inference servers fit without code.
//!
//! Generator placeholders: `{image}`, `{prompt}`, `{temperature}`, `{n}`,
//! `{view}`, `{object_id}`. Embedder placeholder: `{input}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    check_dim, CandidateGenerator, CloudEmbedder, CloudRequest, GenerateRequest, ImageRequest,
    ImageTextEmbedder, PromptTemplates, ProviderError, RawCandidate, TextEmbedder,
};
use crate::model::EmbeddingVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff_ms: 1000,
        }
    }
}

impl RetryPolicy {
    /// Runs `f` until it succeeds, fails with a non-retryable error, or the
    /// attempts are used up. Backoff doubles after each failure.
    pub fn run<T>(&self, mut f: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let mut delay = Duration::from_millis(self.initial_backoff_ms);
        let mut attempt = 1;
        loop {
            match f() {
                Err(e) if e.is_retryable() && attempt < self.attempts.max(1) => {
                    log::warn!("attempt {attempt} failed ({e}), retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    pub model_id: String,
    /// Environment variable holding the API key; no auth header when unset.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    #[serde(default = "default_auth_prefix")]
    pub auth_prefix: String,
    pub request_template: Value,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_auth_header() -> String {
    "Authorization".into()
}

fn default_auth_prefix() -> String {
    "Bearer ".into()
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorEndpoint {
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
    /// Pointer to the array of candidates in the response.
    pub candidates_pointer: String,
    /// Pointer, relative to one candidate, to its text.
    pub text_pointer: String,
    /// Pointer, relative to one candidate, to its token log-probabilities:
    /// an array of numbers or of objects with a `logprob` field.
    #[serde(default)]
    pub logprobs_pointer: Option<String>,
    #[serde(default)]
    pub prompts: PromptTemplates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderEndpoint {
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
    pub vector_pointer: String,
    pub dim: usize,
}

struct Client {
    cfg: EndpointConfig,
    http: reqwest::blocking::Client,
}

impl Client {
    fn new(cfg: EndpointConfig) -> Result<Self, ProviderError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self { cfg, http })
    }

    fn post(&self, vars: &[(&str, Value)]) -> Result<Value, ProviderError> {
        let body = fill_template(&self.cfg.request_template, vars);
        let key = match &self.cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ProviderError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        self.cfg.retry.run(|| {
            let mut req = self.http.post(&self.cfg.url).json(&body);
            if let Some(k) = &key {
                req = req.header(self.cfg.auth_header.as_str(), format!("{}{k}", self.cfg.auth_prefix));
            }
            let resp = req
                .send()
                .map_err(|e| ProviderError::ProviderUnavailable(e.to_string()))?;
            let status = resp.status();
            let text = resp
                .text()
                .map_err(|e| ProviderError::ProviderUnavailable(e.to_string()))?;
            if !status.is_success() {
                return Err(ProviderError::Http {
                    status: status.as_u16(),
                    body: text,
                });
            }
            serde_json::from_str(&text).map_err(|e| ProviderError::MalformedProviderResponse(e.to_string()))
        })
    }
}

/// Substitutes `{name}` placeholders in every string of `template`.
pub fn fill_template(template: &Value, vars: &[(&str, Value)]) -> Value {
    match template {
        Value::String(s) => {
            for (name, v) in vars {
                if s == &format!("{{{name}}}") {
                    return v.clone();
                }
            }
            let mut out = s.clone();
            for (name, v) in vars {
                let text = match v {
                    Value::String(t) => t.clone(),
                    other => other.to_string(),
                };
                out = out.replace(&format!("{{{name}}}"), &text);
            }
            Value::String(out)
        }
        Value::Array(a) => Value::Array(a.iter().map(|x| fill_template(x, vars)).collect()),
        Value::Object(o) => Value::Object(
            o.iter()
                .map(|(k, x)| (k.clone(), fill_template(x, vars)))
                .collect(),
        ),
        other => other.clone(),
    }
}

fn at<'v>(v: &'v Value, pointer: &str) -> Result<&'v Value, ProviderError> {
    v.pointer(pointer)
        .ok_or_else(|| ProviderError::MalformedProviderResponse(format!("nothing at {pointer:?}")))
}

fn parse_vector(v: &Value) -> Result<Vec<f64>, ProviderError> {
    let arr = v
        .as_array()
        .ok_or_else(|| ProviderError::MalformedProviderResponse("vector is not an array".into()))?;
    arr.iter()
        .map(|x| {
            x.as_f64()
                .or_else(|| x.get("logprob").and_then(Value::as_f64))
                .ok_or_else(|| ProviderError::MalformedProviderResponse(format!("not a number: {x}")))
        })
        .collect()
}

pub struct HttpGenerator {
    client: Client,
    cfg: GeneratorEndpoint,
}

impl HttpGenerator {
    pub fn new(cfg: GeneratorEndpoint) -> Result<Self, ProviderError> {
        Ok(Self {
            client: Client::new(cfg.endpoint.clone())?,
            cfg,
        })
    }

    fn parse(&self, resp: &Value, expected: usize) -> Result<Vec<RawCandidate>, ProviderError> {
        let list = at(resp, &self.cfg.candidates_pointer)?
            .as_array()
            .ok_or_else(|| ProviderError::MalformedProviderResponse("candidates are not an array".into()))?;
        if list.len() != expected {
            return Err(ProviderError::MalformedProviderResponse(format!(
                "expected {expected} candidates, got {}",
                list.len()
            )));
        }
        list.iter()
            .map(|c| {
                let text = at(c, &self.cfg.text_pointer)?
                    .as_str()
                    .ok_or_else(|| ProviderError::MalformedProviderResponse("text is not a string".into()))?
                    .to_string();
                let token_logprobs = match &self.cfg.logprobs_pointer {
                    Some(p) => match c.pointer(p) {
                        None | Some(Value::Null) => None,
                        Some(v) => Some(parse_vector(v)?),
                    },
                    None => None,
                };
                Ok(RawCandidate { text, token_logprobs })
            })
            .collect()
    }
}

impl CandidateGenerator for HttpGenerator {
    fn model_id(&self) -> &str {
        &self.cfg.endpoint.model_id
    }

    fn generate(&self, req: &GenerateRequest<'_>) -> Result<Vec<RawCandidate>, ProviderError> {
        let prompt = self
            .cfg
            .prompts
            .dialogue(req.view, req.cfg.prompt_phase)
            .join("\n");
        let resp = self.client.post(&[
            ("image", Value::from(req.image)),
            ("prompt", Value::from(prompt)),
            ("temperature", Value::from(req.cfg.temperature)),
            ("n", Value::from(req.cfg.num_candidates)),
            ("view", Value::from(req.view.as_str())),
            ("object_id", Value::from(req.object_id)),
        ])?;
        self.parse(&resp, req.cfg.num_candidates)
    }
}

pub struct HttpEmbedder {
    client: Client,
    cfg: EmbedderEndpoint,
}

impl HttpEmbedder {
    pub fn new(cfg: EmbedderEndpoint) -> Result<Self, ProviderError> {
        Ok(Self {
            client: Client::new(cfg.endpoint.clone())?,
            cfg,
        })
    }

    fn embed(&self, input: Value) -> Result<EmbeddingVector, ProviderError> {
        let resp = self.client.post(&[("input", input)])?;
        let v = parse_vector(at(&resp, &self.cfg.vector_pointer)?)?;
        let v = EmbeddingVector::new(v).map_err(|e| ProviderError::MalformedProviderResponse(e.to_string()))?;
        check_dim(self.cfg.dim, v)
    }
}

impl TextEmbedder for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.cfg.endpoint.model_id
    }

    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        self.embed(Value::from(text))
    }
}

/// Joint image/text embedder made of two endpoints sharing one vector space.
pub struct HttpJointEmbedder {
    pub image: HttpEmbedder,
    pub text: HttpEmbedder,
}

impl ImageTextEmbedder for HttpJointEmbedder {
    fn model_id(&self) -> &str {
        &self.image.cfg.endpoint.model_id
    }

    fn dim(&self) -> usize {
        self.image.cfg.dim
    }

    fn embed_image(&self, req: &ImageRequest<'_>) -> Result<EmbeddingVector, ProviderError> {
        self.image.embed(Value::from(req.image))
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        TextEmbedder::embed_text(&self.text, text)
    }
}

impl CloudEmbedder for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.cfg.endpoint.model_id
    }

    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn embed_cloud(&self, req: &CloudRequest<'_>) -> Result<EmbeddingVector, ProviderError> {
        if req.cloud.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        self.embed(serde_json::to_value(req.cloud).expect("cloud serializes"))
    }
}
