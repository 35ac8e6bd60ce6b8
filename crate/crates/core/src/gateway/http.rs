use std::time::Duration;

use rand::Rng;
use reqwest::blocking::{Client, RequestBuilder};
use serde_json::{json, Value};

use super::{GatewayError, ModelGateway, ModelSpec, Provider, QueryRequest, TokenBucket};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

const ANTHROPIC_VERSION: &str = "2023-06-01";

/// Chat-completion client for the remote provider families.
#[derive(Debug)]
pub struct HttpGateway {
    spec: ModelSpec,
    api_key: String,
    base_url: String,
    client: Client,
    bucket: TokenBucket,
}

enum Failure {
    Fatal(GatewayError),
    Retry(GatewayError),
}

impl HttpGateway {
    /// Reads the API key from the provider's environment variable.
    pub fn from_env(spec: ModelSpec) -> Result<Self, GatewayError> {
        let var = spec.provider.key_env_var().ok_or_else(|| {
            GatewayError::InvalidSpec(format!("{:?} is not a remote provider", spec.provider))
        })?;
        match std::env::var(var) {
            Ok(key) if !key.trim().is_empty() => Self::with_api_key(spec, key),
            _ => Err(GatewayError::Auth {
                provider: format!("{:?}", spec.provider),
                env_var: var.to_string(),
            }),
        }
    }

    pub fn with_api_key(spec: ModelSpec, api_key: impl Into<String>) -> Result<Self, GatewayError> {
        Self::with_timeout(spec, api_key, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(
        spec: ModelSpec,
        api_key: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        spec.validate()?;
        let base_url = spec
            .base_url
            .clone()
            .or_else(|| spec.provider.default_base_url().map(str::to_string))
            .ok_or_else(|| GatewayError::InvalidSpec("no endpoint for provider".into()))?;
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::InvalidSpec(format!("http client: {e}")))?;
        Ok(Self {
            bucket: TokenBucket::new(spec.rate_limit),
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            client,
            spec,
        })
    }

    fn build(&self, prompt: &str) -> RequestBuilder {
        let d = &self.spec.decoding;
        let model = &self.spec.model_id;
        match self.spec.provider {
            Provider::AnthropicLike => self
                .client
                .post(format!("{}/messages", self.base_url))
                .header("x-api-key", &self.api_key)
                .header("anthropic-version", ANTHROPIC_VERSION)
                .json(&json!({
                    "model": model,
                    "max_tokens": d.max_tokens,
                    "temperature": d.temperature,
                    "messages": [{"role": "user", "content": prompt}],
                })),
            Provider::GoogleLike => self
                .client
                .post(format!("{}/models/{}:generateContent", self.base_url, model))
                .query(&[("key", &self.api_key)])
                .json(&json!({
                    "contents": [{"role": "user", "parts": [{"text": prompt}]}],
                    "generationConfig": {
                        "temperature": d.temperature,
                        "maxOutputTokens": d.max_tokens,
                    },
                })),
            _ => self
                .client
                .post(format!("{}/chat/completions", self.base_url))
                .bearer_auth(&self.api_key)
                .json(&json!({
                    "model": model,
                    "max_tokens": d.max_tokens,
                    "temperature": d.temperature,
                    "messages": [{"role": "user", "content": prompt}],
                })),
        }
    }

    fn extract(&self, body: &Value) -> Option<String> {
        let text = match self.spec.provider {
            Provider::AnthropicLike => body.pointer("/content/0/text"),
            Provider::GoogleLike => body.pointer("/candidates/0/content/parts/0/text"),
            _ => body.pointer("/choices/0/message/content"),
        };
        text.and_then(Value::as_str).map(str::to_string)
    }

    fn attempt(&self, prompt: &str, attempts: u32) -> Result<String, Failure> {
        self.bucket.acquire();
        let resp = match self.build(prompt).send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Err(Failure::Retry(GatewayError::Timeout { attempts })),
            Err(e) => {
                return Err(Failure::Retry(GatewayError::Provider {
                    status: None,
                    attempts,
                    message: e.to_string(),
                }))
            }
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(Failure::Fatal(GatewayError::Unauthorized { status })),
            429 => return Err(Failure::Retry(GatewayError::RateLimited { attempts })),
            _ => {
                let message = resp.text().unwrap_or_default();
                let err = GatewayError::Provider {
                    status: Some(status),
                    attempts,
                    message,
                };
                return Err(if status >= 500 {
                    Failure::Retry(err)
                } else {
                    Failure::Fatal(err)
                });
            }
        }
        let body: Value = resp.json().map_err(|e| {
            if e.is_timeout() {
                Failure::Retry(GatewayError::Timeout { attempts })
            } else {
                Failure::Fatal(GatewayError::Provider {
                    status: Some(status),
                    attempts,
                    message: format!("malformed response body: {e}"),
                })
            }
        })?;
        self.extract(&body).ok_or_else(|| {
            Failure::Fatal(GatewayError::Provider {
                status: Some(status),
                attempts,
                message: "response has no completion text".into(),
            })
        })
    }
}

impl ModelGateway for HttpGateway {
    fn model_id(&self) -> &str {
        &self.spec.model_id
    }

    fn query(&self, request: &QueryRequest) -> Result<String, GatewayError> {
        let max = self.spec.retry.max_attempts;
        let base = self.spec.retry.backoff_base_ms as f64;
        let mut attempt = 1;
        loop {
            match self.attempt(&request.prompt, attempt) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(e)) if attempt >= max => return Err(e),
                Err(Failure::Retry(e)) => {
                    let jitter: f64 = rand::thread_rng().gen_range(0.0..1.0);
                    let wait = base * 2f64.powi(attempt as i32 - 1) * (1.0 + jitter);
                    tracing::warn!(attempt, error = %e, wait_ms = wait, "retrying request");
                    std::thread::sleep(Duration::from_secs_f64(wait / 1000.0));
                    attempt += 1;
                }
            }
        }
    }
}
