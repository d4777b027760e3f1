//! Runtime configuration: endpoint/transport selection, generation knobs,
//! judge settings, and metric parameters.
//!
//! Configuration is one JSON file with `endpoint`, `generation`, `judge`,
//! `metrics`, and `weights` sections, all optional — absent fields take
//! the defaults below. The `REASONDRIVE_API_KEY` environment variable
//! always wins over the configured key, and the key is never serialized
//! back out, so secrets cannot leak into reports or echoes.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::gateway::{
    Gateway, GatewayConfig, HttpTransport, MockReply, MockTransport, ReplayTransport, Transport,
};
use crate::model::{FinalWeights, MetricConfig, TaskCategory};
use crate::prompts::TemplateSet;

pub const API_KEY_ENV: &str = "REASONDRIVE_API_KEY";

/// Which transport the gateway talks through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportMode {
    /// Real HTTP endpoint.
    Http,
    /// Deterministic in-process mock; no network, no key needed.
    Mock,
    /// Answer only from recorded fixtures in `replay_dir`.
    Replay,
    /// Like `http`, but snapshot every reply into `replay_dir`.
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub mode: TransportMode,
    pub url: String,
    /// Never serialized; prefer the `REASONDRIVE_API_KEY` env var.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub max_retries: u32,
    pub backoff_initial_ms: u64,
    pub rate_limit_per_sec: Option<u32>,
    pub max_total_tokens: Option<u64>,
    pub cache_dir: Option<PathBuf>,
    pub replay_dir: Option<PathBuf>,
    /// Fixed reply for mock mode; when unset the mock synthesizes a
    /// plausible structured reply per request.
    pub mock_reply: Option<String>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            mode: TransportMode::Mock,
            url: "https://api.openai.com/v1/chat/completions".to_string(),
            api_key: None,
            model: "gpt-4o".to_string(),
            max_retries: 3,
            backoff_initial_ms: 500,
            rate_limit_per_sec: None,
            max_total_tokens: None,
            cache_dir: None,
            replay_dir: None,
            mock_reply: None,
        }
    }
}

impl EndpointConfig {
    /// Configured key, overridden by the environment when set.
    pub fn resolved_api_key(&self) -> Option<String> {
        std::env::var(API_KEY_ENV).ok().or_else(|| self.api_key.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Regeneration attempts after the first, for malformed replies.
    pub max_regenerations: u32,
    pub max_in_flight: usize,
    pub template_dir: Option<PathBuf>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 0.7,
            max_tokens: 512,
            max_regenerations: 2,
            max_in_flight: 4,
            template_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Total parse attempts (including the first) before scoring 0.
    pub max_attempts: u32,
    pub max_in_flight: usize,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            model: "gpt-4o-mini".to_string(),
            temperature: 0.0,
            max_tokens: 16,
            max_attempts: 3,
            max_in_flight: 4,
        }
    }
}

/// Top-level configuration for the whole toolkit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, from = "ToolkitConfigWire")]
pub struct ToolkitConfig {
    pub endpoint: EndpointConfig,
    pub generation: GenerationConfig,
    pub judge: JudgeConfig,
    pub metrics: MetricConfig,
}

/// Accepts a separate top-level `weights` section and folds it into
/// `metrics.final_weights`, so weight overrides do not require restating
/// the whole metrics block.
#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ToolkitConfigWire {
    endpoint: EndpointConfig,
    generation: GenerationConfig,
    judge: JudgeConfig,
    metrics: MetricConfig,
    weights: Option<FinalWeights>,
}

impl From<ToolkitConfigWire> for ToolkitConfig {
    fn from(wire: ToolkitConfigWire) -> ToolkitConfig {
        let mut metrics = wire.metrics;
        if let Some(weights) = wire.weights {
            metrics.final_weights = weights;
        }
        ToolkitConfig {
            endpoint: wire.endpoint,
            generation: wire.generation,
            judge: wire.judge,
            metrics,
        }
    }
}

impl ToolkitConfig {
    pub fn load(path: &Path) -> Result<ToolkitConfig> {
        let text = std::fs::read_to_string(path)?;
        let config: ToolkitConfig = serde_json::from_str(&text)
            .map_err(|e| CoreError::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.metrics.validate()?;
        for (name, t) in [
            ("generation.temperature", self.generation.temperature),
            ("judge.temperature", self.judge.temperature),
        ] {
            if !t.is_finite() || !(0.0..=2.0).contains(&t) {
                return Err(CoreError::InvalidConfig(format!(
                    "{name} must lie in [0, 2], got {t}"
                )));
            }
        }
        if self.generation.max_tokens == 0 {
            return Err(CoreError::InvalidConfig(
                "generation.max_tokens must be at least 1".to_string(),
            ));
        }
        if self.generation.max_in_flight == 0 || self.judge.max_in_flight == 0 {
            return Err(CoreError::InvalidConfig(
                "max_in_flight must be at least 1".to_string(),
            ));
        }
        if self.judge.max_attempts == 0 {
            return Err(CoreError::InvalidConfig(
                "judge.max_attempts must be at least 1".to_string(),
            ));
        }
        match self.endpoint.mode {
            TransportMode::Http => {
                if self.endpoint.url.trim().is_empty() {
                    return Err(CoreError::InvalidConfig(
                        "endpoint.url must be set for http mode".to_string(),
                    ));
                }
            }
            TransportMode::Replay | TransportMode::Record => {
                if self.endpoint.replay_dir.is_none() {
                    return Err(CoreError::InvalidConfig(format!(
                        "endpoint.replay_dir must be set for {:?} mode",
                        self.endpoint.mode
                    )));
                }
            }
            TransportMode::Mock => {}
        }
        Ok(())
    }

    /// Build the transport selected by `endpoint.mode`.
    pub fn build_transport(&self) -> Result<Arc<dyn Transport>> {
        let ep = &self.endpoint;
        Ok(match ep.mode {
            TransportMode::Http => Arc::new(HttpTransport::new(
                ep.url.clone(),
                ep.resolved_api_key(),
            )?),
            TransportMode::Mock => match &ep.mock_reply {
                Some(text) => Arc::new(MockTransport::fixed(text.clone())),
                None => Arc::new(MockTransport::with_responder(default_mock_responder)),
            },
            TransportMode::Replay => {
                let dir = ep.replay_dir.clone().expect("validated");
                Arc::new(ReplayTransport::replay(dir))
            }
            TransportMode::Record => {
                let dir = ep.replay_dir.clone().expect("validated");
                let inner = Arc::new(HttpTransport::new(ep.url.clone(), ep.resolved_api_key())?);
                Arc::new(ReplayTransport::recording(dir, inner))
            }
        })
    }

    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            max_retries: self.endpoint.max_retries,
            backoff_initial_ms: self.endpoint.backoff_initial_ms,
            backoff_max_ms: 30_000,
            rate_limit_per_sec: self.endpoint.rate_limit_per_sec,
            max_total_tokens: self.endpoint.max_total_tokens,
            cache_dir: self.endpoint.cache_dir.clone(),
        }
    }

    pub fn build_gateway(&self) -> Result<Gateway> {
        Ok(Gateway::new(self.build_transport()?, self.gateway_config()))
    }

    /// Template set, with overrides from `generation.template_dir` if set.
    pub fn templates(&self) -> Result<TemplateSet> {
        match &self.generation.template_dir {
            Some(dir) => TemplateSet::load_dir(dir),
            None => Ok(TemplateSet::embedded()),
        }
    }
}

/// Default replies for mock mode. Judge-shaped prompts get a plain score;
/// generation prompts get a structured reply whose think block respects
/// the category's sentence budget (the category is visible in the system
/// message).
pub(crate) fn default_mock_responder(request: &crate::gateway::CompletionRequest) -> MockReply {
    let system = request
        .messages
        .first()
        .map(|m| m.text.as_str())
        .unwrap_or("");
    let user = request
        .messages
        .get(1)
        .map(|m| m.text.as_str())
        .unwrap_or("");
    if user.contains("Rate the model answer") || system.contains("grader") {
        return MockReply::Text("85".to_string());
    }
    let category = TaskCategory::ALL
        .into_iter()
        .find(|c| system.contains(&format!("'{c}' category")));
    let sentences = match category {
        Some(c) => crate::prompts::sentence_budget(c).0 as usize,
        None => 1,
    };
    let think = vec!["The six camera views are reviewed and the relevant cues are weighed."; sentences]
        .join(" ");
    MockReply::Text(format!(
        "<think>{think}</think>\n<answer>Understood.</answer>"
    ))
}
