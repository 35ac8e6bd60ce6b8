//! Uniform access to answering models.
//!
//! Remote chat providers and the offline simulated responder both implement
//! [`ModelGateway`]. Every request carries a [`TrialKey`] so that responses can
//! be matched to `(item, trial)` regardless of completion order; the simulated
//! responder also derives its randomness from that key.

mod http;
mod parse;
mod rate_limit;
mod simulated;

pub use http::{HttpGateway, DEFAULT_TIMEOUT};
pub use parse::{parse_choice, ParseRule, ParsedChoice};
pub use rate_limit::TokenBucket;
pub use simulated::{simulated_respond, SimulatedGateway, SimulatedResponderConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("missing credentials for {provider}: set {env_var}")]
    Auth { provider: String, env_var: String },
    #[error("provider rejected credentials (status {status})")]
    Unauthorized { status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("provider error after {attempts} attempts (status {status:?}): {message}")]
    Provider {
        status: Option<u16>,
        attempts: u32,
        message: String,
    },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("dimension mismatch: expected {expected} slots, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    OpenaiLike,
    AnthropicLike,
    GoogleLike,
    GroqLike,
    Simulated,
}

impl Provider {
    /// Environment variable holding the API key.
    pub fn key_env_var(self) -> Option<&'static str> {
        match self {
            Provider::OpenaiLike => Some("OPENAI_API_KEY"),
            Provider::AnthropicLike => Some("ANTHROPIC_API_KEY"),
            Provider::GoogleLike => Some("GOOGLE_API_KEY"),
            Provider::GroqLike => Some("GROQ_API_KEY"),
            Provider::Simulated => None,
        }
    }

    pub fn default_base_url(self) -> Option<&'static str> {
        match self {
            Provider::OpenaiLike => Some("https://api.openai.com/v1"),
            Provider::AnthropicLike => Some("https://api.anthropic.com/v1"),
            Provider::GoogleLike => Some("https://generativelanguage.googleapis.com/v1beta"),
            Provider::GroqLike => Some("https://api.groq.com/openai/v1"),
            Provider::Simulated => None,
        }
    }

    /// Guess the provider family from a model name.
    pub fn infer(model_id: &str) -> Option<Provider> {
        let m = model_id.to_ascii_lowercase();
        if m == "simulated" || m.starts_with("sim") {
            Some(Provider::Simulated)
        } else if m.starts_with("gpt") || m.starts_with("o1") || m.starts_with("o3") {
            Some(Provider::OpenaiLike)
        } else if m.starts_with("claude") {
            Some(Provider::AnthropicLike)
        } else if m.starts_with("gemini") {
            Some(Provider::GoogleLike)
        } else if m.starts_with("llama") || m.contains("groq") {
            Some(Provider::GroqLike)
        } else {
            None
        }
    }
}

/// Decoding parameters, recorded verbatim in run logs. `greedy` is not a
/// provider parameter; it is carried for the record only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub greedy: bool,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            max_tokens: 64,
            greedy: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub provider: Provider,
    pub model_id: String,
    #[serde(default)]
    pub decoding: Decoding,
    /// Requests per second.
    pub rate_limit: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Overrides the provider's default endpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
}

impl ModelSpec {
    pub fn new(provider: Provider, model_id: impl Into<String>) -> Self {
        Self {
            provider,
            model_id: model_id.into(),
            decoding: Decoding::default(),
            rate_limit: 5.0,
            retry: RetryPolicy::default(),
            base_url: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.decoding.temperature.is_nan() || self.decoding.temperature < 0.0 {
            return Err(GatewayError::InvalidSpec("temperature must be >= 0".into()));
        }
        if self.rate_limit.is_nan() || self.rate_limit <= 0.0 {
            return Err(GatewayError::InvalidSpec("rate_limit must be > 0".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(GatewayError::InvalidSpec("retry.max_attempts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Identifies one request within a probe or an evaluation run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrialKey {
    Null {
        n: usize,
        trial: u64,
        attempt: u32,
    },
    Item {
        item_id: String,
        trial_index: u32,
        /// Index of the permutation inside a majority-vote block.
        vote: Option<u32>,
        attempt: u32,
    },
}

/// Ground-truth layout attached to item requests. Remote providers ignore
/// it; the simulated responder needs it to act out its behavioral model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotTruth {
    pub answer_slot: usize,
    pub ssd_slot: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct QueryRequest {
    pub prompt: String,
    /// Option texts in presented (slot) order.
    pub options: Vec<String>,
    pub key: TrialKey,
    pub truth: Option<SlotTruth>,
}

pub trait ModelGateway: Send + Sync {
    fn model_id(&self) -> &str;

    /// Return the raw completion text for one prompt.
    fn query(&self, request: &QueryRequest) -> Result<String, GatewayError>;
}

/// Build the gateway named by `spec`.
pub fn connect(
    spec: &ModelSpec,
    simulated: Option<SimulatedResponderConfig>,
) -> Result<Box<dyn ModelGateway>, GatewayError> {
    spec.validate()?;
    match spec.provider {
        Provider::Simulated => {
            let cfg = simulated.ok_or_else(|| {
                GatewayError::InvalidSpec("simulated provider needs a responder config".into())
            })?;
            Ok(Box::new(SimulatedGateway::new(spec.model_id.clone(), cfg)?))
        }
        _ => Ok(Box::new(HttpGateway::from_env(spec.clone())?)),
    }
}
