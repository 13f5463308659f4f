//! External model interfaces.
//!
//! Four roles feed the pipeline:
//!
//! | trait | role |
//! |-------|------|
//! | [`CandidateGenerator`] | vision-language model producing `M` captions per view |
//! | [`TextEmbedder`] | sentence embedder used for near-duplicate clustering |
//! | [`ImageTextEmbedder`] | joint image/text space used for relevance and gating text |
//! | [`CloudEmbedder`] | point-cloud encoder aligned with the joint text space |
//!
//! [`mock`] implements all four deterministically, [`cache`] wraps any of
//! them with an on-disk JSON cache and [`http`] talks to a templated JSON
//! endpoint.

pub mod cache;
#[cfg(feature = "http")]
pub mod http;
pub mod mock;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::{fill_missing_confidence, ConfidenceError};
use crate::model::{CandidateDescription, EmbeddingVector, PointCloud, Viewpoint};
use crate::seed::stable_hex;

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_NUM_CANDIDATES: usize = 5;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("malformed provider response: {0}")]
    MalformedProviderResponse(String),
    #[error("provider returned no token log-probabilities")]
    MissingLogprobs,
    #[error("embedding has dimension {got}, provider contract says {expected}")]
    DimensionContractViolation { expected: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("cache directory {0} is not writable")]
    CacheDirUnwritable(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::ProviderUnavailable(_))
    }
}

/// Stage of the multi-turn prompting dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptPhase {
    Identification,
    AttributeElicitation,
    Integration,
}

impl PromptPhase {
    pub const ALL: [PromptPhase; 3] = [
        PromptPhase::Identification,
        PromptPhase::AttributeElicitation,
        PromptPhase::Integration,
    ];
}

/// Editable prompt text for each phase; `{view}` is replaced by the view name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptTemplates {
    pub identification: String,
    pub attribute_elicitation: String,
    pub integration: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            identification: "You are looking at the {view} view of a 3D object. Name the object as specifically as you can.".into(),
            attribute_elicitation: "List its visible colors, materials, surface finish and structural parts as seen from the {view}.".into(),
            integration: "Combine your answers into a short, coherent description of the object as seen from the {view}, starting with one sentence that identifies it.".into(),
        }
    }
}

impl PromptTemplates {
    pub fn get(&self, phase: PromptPhase) -> &str {
        match phase {
            PromptPhase::Identification => &self.identification,
            PromptPhase::AttributeElicitation => &self.attribute_elicitation,
            PromptPhase::Integration => &self.integration,
        }
    }

    /// Prompts for every phase up to and including `last`, rendered for `view`.
    pub fn dialogue(&self, view: Viewpoint, last: PromptPhase) -> Vec<String> {
        PromptPhase::ALL
            .iter()
            .take_while(|p| **p != last)
            .chain(std::iter::once(&last))
            .map(|p| self.get(*p).replace("{view}", view.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub num_candidates: usize,
    pub prompt_phase: PromptPhase,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            num_candidates: DEFAULT_NUM_CANDIDATES,
            prompt_phase: PromptPhase::Integration,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GenerateRequest<'a> {
    pub object_id: &'a str,
    pub view: Viewpoint,
    pub image: &'a str,
    pub cfg: &'a GenerationConfig,
}

#[derive(Debug, Clone, Copy)]
pub struct ImageRequest<'a> {
    pub object_id: &'a str,
    pub view: Viewpoint,
    pub image: &'a str,
}

#[derive(Debug, Clone, Copy)]
pub struct CloudRequest<'a> {
    pub object_id: &'a str,
    pub cloud: &'a PointCloud,
}

/// Provider output before confidence resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCandidate {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

pub trait CandidateGenerator: Send + Sync {
    fn model_id(&self) -> &str;
    fn generate(&self, req: &GenerateRequest<'_>) -> Result<Vec<RawCandidate>, ProviderError>;
}

pub trait TextEmbedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
}

pub trait ImageTextEmbedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_image(&self, req: &ImageRequest<'_>) -> Result<EmbeddingVector, ProviderError>;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
}

pub trait CloudEmbedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_cloud(&self, req: &CloudRequest<'_>) -> Result<EmbeddingVector, ProviderError>;
}

impl<T: CandidateGenerator + ?Sized> CandidateGenerator for Arc<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn generate(&self, req: &GenerateRequest<'_>) -> Result<Vec<RawCandidate>, ProviderError> {
        (**self).generate(req)
    }
}

impl<T: TextEmbedder + ?Sized> TextEmbedder for Arc<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        (**self).embed_text(text)
    }
}

impl<T: ImageTextEmbedder + ?Sized> ImageTextEmbedder for Arc<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed_image(&self, req: &ImageRequest<'_>) -> Result<EmbeddingVector, ProviderError> {
        (**self).embed_image(req)
    }
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        (**self).embed_text(text)
    }
}

impl<T: CloudEmbedder + ?Sized> CloudEmbedder for Arc<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed_cloud(&self, req: &CloudRequest<'_>) -> Result<EmbeddingVector, ProviderError> {
        (**self).embed_cloud(req)
    }
}

/// The four providers one pipeline run uses.
#[derive(Clone)]
pub struct Providers {
    pub generator: Arc<dyn CandidateGenerator>,
    pub text: Arc<dyn TextEmbedder>,
    pub clip: Arc<dyn ImageTextEmbedder>,
    pub cloud: Arc<dyn CloudEmbedder>,
}

impl Providers {
    /// Wraps every provider with the response cache.
    pub fn with_cache(self, cache: Arc<cache::ResponseCache>) -> Self {
        Providers {
            generator: Arc::new(cache::Cached::new(self.generator, cache.clone())),
            text: Arc::new(cache::Cached::new(self.text, cache.clone())),
            clip: Arc::new(cache::Cached::new(self.clip, cache.clone())),
            cloud: Arc::new(cache::Cached::new(self.cloud, cache)),
        }
    }
}

/// Calls the generator and turns its output into scored candidates, checking
/// the count and applying the missing-logprob fallback.
pub fn generate_candidates(
    generator: &dyn CandidateGenerator,
    req: &GenerateRequest<'_>,
) -> Result<Vec<CandidateDescription>, ProviderError> {
    if req.cfg.num_candidates == 0 {
        return Err(ProviderError::Config("num_candidates must be positive".into()));
    }
    let raw = generator.generate(req)?;
    if raw.len() != req.cfg.num_candidates {
        return Err(ProviderError::MalformedProviderResponse(format!(
            "expected {} candidates, got {}",
            req.cfg.num_candidates,
            raw.len()
        )));
    }
    if let Some(i) = raw.iter().position(|c| c.text.trim().is_empty()) {
        return Err(ProviderError::MalformedProviderResponse(format!(
            "candidate {i} has empty text"
        )));
    }
    let pairs = raw.into_iter().map(|c| (c.text, c.token_logprobs)).collect();
    Ok(fill_missing_confidence(req.view, pairs)?)
}

/// Checks an embedding against the provider's declared dimension.
pub fn check_dim(expected: usize, v: EmbeddingVector) -> Result<EmbeddingVector, ProviderError> {
    if v.dim() != expected {
        return Err(ProviderError::DimensionContractViolation {
            expected,
            got: v.dim(),
        });
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    GenerateCandidates,
    EmbedText,
    EmbedImage,
    EmbedCloud,
}

impl RequestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::GenerateCandidates => "generate_candidates",
            RequestKind::EmbedText => "embed_text",
            RequestKind::EmbedImage => "embed_image",
            RequestKind::EmbedCloud => "embed_cloud",
        }
    }
}

/// A provider call in canonical form; identical logical requests share a
/// cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub kind: RequestKind,
    pub model_id: String,
    pub payload: serde_json::Value,
    pub cache_key: String,
}

impl ProviderRequest {
    pub fn new(kind: RequestKind, model_id: &str, payload: serde_json::Value) -> Self {
        // serde_json::Value objects are key-sorted, so this string is canonical
        let canonical = payload.to_string();
        let cache_key = stable_hex(&[kind.as_str(), model_id, &canonical]);
        Self {
            kind,
            model_id: model_id.to_string(),
            payload,
            cache_key,
        }
    }

    pub fn generate(model_id: &str, req: &GenerateRequest<'_>) -> Self {
        Self::new(
            RequestKind::GenerateCandidates,
            model_id,
            serde_json::json!({
                "object_id": req.object_id,
                "view": req.view,
                "image": req.image,
                "temperature": req.cfg.temperature,
                "num_candidates": req.cfg.num_candidates,
                "prompt_phase": req.cfg.prompt_phase,
            }),
        )
    }

    pub fn text(kind: RequestKind, model_id: &str, text: &str) -> Self {
        Self::new(kind, model_id, serde_json::json!({ "text": text }))
    }

    pub fn image(model_id: &str, req: &ImageRequest<'_>) -> Self {
        Self::new(
            RequestKind::EmbedImage,
            model_id,
            serde_json::json!({ "object_id": req.object_id, "view": req.view, "image": req.image }),
        )
    }

    pub fn cloud(model_id: &str, req: &CloudRequest<'_>) -> Self {
        Self::new(
            RequestKind::EmbedCloud,
            model_id,
            serde_json::json!({
                "object_id": req.object_id,
                "points": req.cloud.count(),
                "digest": cloud_digest(req.cloud),
            }),
        )
    }
}

/// SHA-256 over the little-endian coordinate bytes.
pub fn cloud_digest(cloud: &PointCloud) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in cloud.points() {
        for c in p {
            h.update(c.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<RawCandidate>);

    impl CandidateGenerator for Fixed {
        fn model_id(&self) -> &str {
            "fixed"
        }
        fn generate(&self, _: &GenerateRequest<'_>) -> Result<Vec<RawCandidate>, ProviderError> {
            Ok(self.0.clone())
        }
    }

    fn raw(text: &str, lp: Option<Vec<f64>>) -> RawCandidate {
        RawCandidate {
            text: text.into(),
            token_logprobs: lp,
        }
    }

    fn req(cfg: &GenerationConfig) -> GenerateRequest<'_> {
        GenerateRequest {
            object_id: "o",
            view: Viewpoint::Front,
            image: "front.png",
            cfg,
        }
    }

    #[test]
    fn count_is_validated() {
        let cfg = GenerationConfig::default();
        let g = Fixed(vec![raw("a", Some(vec![-0.1])); 4]);
        assert!(matches!(
            generate_candidates(&g, &req(&cfg)),
            Err(ProviderError::MalformedProviderResponse(_))
        ));
        let g = Fixed(vec![raw("a", Some(vec![-0.1])); 5]);
        assert_eq!(generate_candidates(&g, &req(&cfg)).unwrap().len(), 5);
    }

    #[test]
    fn missing_logprobs_fall_back() {
        let cfg = GenerationConfig {
            num_candidates: 2,
            ..Default::default()
        };
        let g = Fixed(vec![raw("a", Some(vec![-0.4])), raw("b", None)]);
        let c = generate_candidates(&g, &req(&cfg)).unwrap();
        assert_eq!(c[1].raw_confidence, c[0].raw_confidence);
    }

    #[test]
    fn cache_key_sensitivity() {
        let a = GenerationConfig::default();
        let b = GenerationConfig {
            temperature: 0.9,
            ..a
        };
        let ka = ProviderRequest::generate("m", &req(&a)).cache_key;
        assert_eq!(ka, ProviderRequest::generate("m", &req(&a)).cache_key);
        assert_ne!(ka, ProviderRequest::generate("m", &req(&b)).cache_key);
        assert_ne!(ka, ProviderRequest::generate("m2", &req(&a)).cache_key);
    }

    #[test]
    fn dialogue_stops_at_phase() {
        let t = PromptTemplates::default();
        assert_eq!(t.dialogue(Viewpoint::Top, PromptPhase::Identification).len(), 1);
        let d = t.dialogue(Viewpoint::Top, PromptPhase::Integration);
        assert_eq!(d.len(), 3);
        assert!(d[0].contains("top view"));
    }
}
