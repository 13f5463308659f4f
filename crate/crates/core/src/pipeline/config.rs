//! Run configuration, loaded from JSON or TOML.
//!
//! Every field has a default, unknown keys are rejected and numeric fields are
//! range-checked by [`PipelineConfig::validate`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{BanditConfig, UpdateRule};
use crate::clustering::DbscanParams;
use crate::gating::DEFAULT_GATE_THRESHOLD;
use crate::model::DEFAULT_POINT_BUDGET;
use crate::providers::mock::MockQuality;
use crate::providers::GenerationConfig;
use crate::scoring::DEFAULT_BLEND_RATIO;
use crate::synthesis::DEFAULT_FB_WEIGHT;

pub const DEFAULT_BANDIT_ROUNDS: usize = 50;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[cfg(feature = "http")]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpProviderConfig {
    pub generator: crate::providers::http::GeneratorEndpoint,
    pub text: crate::providers::http::EmbedderEndpoint,
    pub image: crate::providers::http::EmbedderEndpoint,
    /// Text side of the joint image/text space.
    pub joint_text: crate::providers::http::EmbedderEndpoint,
    pub cloud: crate::providers::http::EmbedderEndpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSettings {
    Mock {
        #[serde(default)]
        quality: MockQuality,
    },
    #[cfg(feature = "http")]
    Http(Box<HttpProviderConfig>),
}

impl Default for ProviderSettings {
    fn default() -> Self {
        ProviderSettings::Mock {
            quality: MockQuality::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub blend_ratio: f64,
    pub gate_threshold: f64,
    pub dbscan: DbscanParams,
    pub bandit: BanditConfig,
    pub bandit_rounds: usize,
    pub generation: GenerationConfig,
    pub fb_weight: f64,
    pub point_budget: usize,
    /// `0` uses every core, `1` runs sequentially.
    pub workers: usize,
    pub cache_dir: Option<PathBuf>,
    pub providers: ProviderSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            blend_ratio: DEFAULT_BLEND_RATIO,
            gate_threshold: DEFAULT_GATE_THRESHOLD,
            dbscan: DbscanParams::default(),
            bandit: BanditConfig::default(),
            bandit_rounds: DEFAULT_BANDIT_ROUNDS,
            generation: GenerationConfig::default(),
            fb_weight: DEFAULT_FB_WEIGHT,
            point_budget: DEFAULT_POINT_BUDGET,
            workers: 0,
            cache_dir: None,
            providers: ProviderSettings::default(),
        }
    }
}

fn ensure(field: &'static str, ok: bool, message: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid {
            field,
            message: message(),
        })
    }
}

fn unit(field: &'static str, v: f64) -> Result<(), ConfigError> {
    ensure(field, (0.0..=1.0).contains(&v), || format!("{v} is outside [0, 1]"))
}

impl PipelineConfig {
    #[allow(irrefutable_let_patterns)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        unit("blend_ratio", self.blend_ratio)?;
        ensure("gate_threshold", self.gate_threshold > 0.0 && self.gate_threshold < 1.0, || {
            format!("{} is outside (0, 1)", self.gate_threshold)
        })?;
        ensure("dbscan.eps", self.dbscan.eps > 0.0 && self.dbscan.eps <= 2.0, || {
            format!("{} is outside (0, 2]", self.dbscan.eps)
        })?;
        ensure("dbscan.min_pts", self.dbscan.min_pts >= 1, || "must be at least 1".into())?;
        let b = &self.bandit;
        ensure("bandit.exploration_weight", b.exploration_weight.is_finite() && b.exploration_weight >= 0.0, || {
            format!("{} must be finite and >= 0", b.exploration_weight)
        })?;
        unit("bandit.epsilon", b.epsilon)?;
        ensure("bandit.prior_alpha", b.prior_alpha.is_finite() && b.prior_alpha > 0.0, || {
            format!("{} must be > 0", b.prior_alpha)
        })?;
        ensure("bandit.prior_beta", b.prior_beta.is_finite() && b.prior_beta > 0.0, || {
            format!("{} must be > 0", b.prior_beta)
        })?;
        if let UpdateRule::Ema { rate } = b.update_rule {
            ensure("bandit.update_rule.rate", rate > 0.0 && rate <= 1.0, || format!("{rate} is outside (0, 1]"))?;
        }
        ensure("bandit_rounds", self.bandit_rounds >= 1, || "must be at least 1".into())?;
        let g = &self.generation;
        ensure("generation.temperature", g.temperature.is_finite() && g.temperature >= 0.0, || {
            format!("{} must be finite and >= 0", g.temperature)
        })?;
        ensure("generation.num_candidates", g.num_candidates >= 1, || "must be at least 1".into())?;
        ensure("fb_weight", self.fb_weight.is_finite() && self.fb_weight >= 1.0, || {
            format!("{} must be finite and >= 1", self.fb_weight)
        })?;
        ensure("point_budget", self.point_budget >= 1, || "must be at least 1".into())?;
        if let ProviderSettings::Mock { quality } = &self.providers {
            unit("providers.quality.min_error", quality.min_error)?;
            unit("providers.quality.max_error", quality.max_error)?;
            ensure("providers.quality.max_error", quality.min_error <= quality.max_error, || {
                "must be >= min_error".into()
            })?;
            unit("providers.quality.category_error_scale", quality.category_error_scale)?;
            unit("providers.quality.missing_logprob_rate", quality.missing_logprob_rate)?;
        }
        Ok(())
    }

    /// Parses TOML when `toml` is true, JSON otherwise, then validates.
    pub fn parse(text: &str, toml: bool) -> Result<Self, ConfigError> {
        let cfg: Self = if toml {
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?
        } else {
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a `.toml` or JSON file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let toml = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        Self::parse(&text, toml)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.bandit_rounds, 50);
        assert_eq!(c.generation.num_candidates, 5);
        assert_eq!(c.gate_threshold, 0.557);
    }

    #[test]
    fn empty_documents_give_defaults() {
        assert_eq!(PipelineConfig::parse("{}", false).unwrap(), PipelineConfig::default());
        assert_eq!(PipelineConfig::parse("", true).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            PipelineConfig::parse(r#"{"blend": 0.3}"#, false),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            PipelineConfig::parse(r#"{"bandit": {"c": 0.3}}"#, false),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn ranges_checked() {
        for (doc, field) in [
            (r#"{"blend_ratio": 1.5}"#, "blend_ratio"),
            (r#"{"gate_threshold": 1.0}"#, "gate_threshold"),
            (r#"{"dbscan": {"eps": 0.0}}"#, "dbscan.eps"),
            (r#"{"bandit_rounds": 0}"#, "bandit_rounds"),
            (r#"{"generation": {"num_candidates": 0}}"#, "generation.num_candidates"),
            (r#"{"fb_weight": 0.9}"#, "fb_weight"),
            (r#"{"bandit": {"exploration_weight": -1}}"#, "bandit.exploration_weight"),
        ] {
            match PipelineConfig::parse(doc, false) {
                Err(ConfigError::Invalid { field: f, .. }) => assert_eq!(f, field, "{doc}"),
                other => panic!("{doc}: {other:?}"),
            }
        }
    }

    #[test]
    fn toml_and_alternate_threshold() {
        let c = PipelineConfig::parse(
            "seed = 7\ngate_threshold = 0.577\n[bandit]\nstrategy = \"thompson\"\n[providers]\nkind = \"mock\"\n",
            true,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.gate_threshold, 0.577);
        assert_eq!(c.bandit.strategy, crate::bandit::StrategyKind::Thompson);
    }

    #[cfg(feature = "http")]
    const HTTP_TOML: &str = r#"
[providers]
kind = "http"

[providers.generator]
url = "http://localhost:8000/v1/generate"
model_id = "vlm-large"
api_key_env = "VLM_API_KEY"
request_template = { image = "{image}", prompt = "{prompt}", temperature = "{temperature}", n = "{n}" }
candidates_pointer = "/choices"
text_pointer = "/text"
logprobs_pointer = "/logprobs"

[providers.text]
url = "http://localhost:8001/embed"
model_id = "sbert"
request_template = { input = "{input}" }
vector_pointer = "/embedding"
dim = 384

[providers.image]
url = "http://localhost:8002/image"
model_id = "clip"
request_template = { image = "{input}" }
vector_pointer = "/embedding"
dim = 512

[providers.joint_text]
url = "http://localhost:8002/text"
model_id = "clip"
request_template = { text = "{input}" }
vector_pointer = "/embedding"
dim = 512

[providers.cloud]
url = "http://localhost:8003/cloud"
model_id = "uni3d"
request_template = { points = "{input}" }
vector_pointer = "/embedding"
dim = 512
"#;

    #[cfg(feature = "http")]
    #[test]
    fn http_providers_from_toml() {
        let c = PipelineConfig::parse(HTTP_TOML, true).unwrap();
        let ProviderSettings::Http(h) = &c.providers else {
            panic!("{:?}", c.providers)
        };
        assert_eq!(h.generator.endpoint.model_id, "vlm-large");
        assert_eq!(h.generator.endpoint.retry.attempts, 3);
        assert_eq!(h.text.dim, 384);
        assert_eq!(h.cloud.endpoint.auth_header, "Authorization");
    }

    #[cfg(feature = "http")]
    #[test]
    fn http_endpoint_rejects_typos() {
        let bad = HTTP_TOML.replace("dim = 384", "dim = 384\ndimm = 3");
        assert!(PipelineConfig::parse(&bad, true).is_err());
    }
}
