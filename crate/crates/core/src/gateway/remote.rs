use std::time::Duration;

use async_trait::async_trait;
use serde::Serialize;
use serde_json::Value;
use tokio::sync::Semaphore;

use super::{Gateway, GatewayError, GatewayRequest, ResponseFormat};

pub const ENV_LLM_ENDPOINT: &str = "FACTGRAPH_LLM_ENDPOINT";
pub const ENV_LLM_MODEL: &str = "FACTGRAPH_LLM_MODEL";
pub const ENV_LLM_API_KEY: &str = "FACTGRAPH_LLM_API_KEY";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Full chat-completions URL, e.g. `https://host/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    pub base_backoff: Duration,
    pub max_concurrent: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            retries: 2,
            base_backoff: Duration::from_millis(500),
            max_concurrent: 4,
        }
    }

    pub fn from_env() -> Result<Self, GatewayError> {
        let var = |name: &str| {
            std::env::var(name).map_err(|_| GatewayError::Config(format!("{name} is not set")))
        };
        let mut cfg = Self::new(var(ENV_LLM_ENDPOINT)?, var(ENV_LLM_MODEL)?);
        cfg.api_key = std::env::var(ENV_LLM_API_KEY).ok();
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct ChatPayload<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    response_format: Option<JsonMode>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct JsonMode {
    #[serde(rename = "type")]
    kind: &'static str,
}

/// Chat-completions client: one user message, temperature 0.
pub struct RemoteGateway {
    http: reqwest::Client,
    config: RemoteConfig,
    permits: Semaphore,
}

impl RemoteGateway {
    pub fn new(config: RemoteConfig) -> Result<Self, GatewayError> {
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let permits = Semaphore::new(config.max_concurrent.max(1));
        Ok(Self {
            http,
            config,
            permits,
        })
    }

    /// Request body; identical requests always produce identical bytes.
    pub fn payload(&self, request: &GatewayRequest) -> Vec<u8> {
        let response_format = match request.response_format {
            // json_object mode cannot return a bare array, so plans go as free text
            ResponseFormat::JsonObject => Some(JsonMode {
                kind: "json_object",
            }),
            ResponseFormat::JsonArray | ResponseFormat::FreeText => None,
        };
        serde_json::to_vec(&ChatPayload {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: 0.0,
            response_format,
        })
        .expect("payload serializes")
    }

    async fn call_once(&self, body: Vec<u8>) -> Result<String, String> {
        let mut req = self
            .http
            .post(&self.config.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| e.to_string())?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP {status}: {}", truncate(&text, 200)));
        }
        let v: Value =
            serde_json::from_str(&text).map_err(|e| format!("bad response body: {e}"))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| "response has no choices[0].message.content".to_string())
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[async_trait]
impl Gateway for RemoteGateway {
    async fn complete(&self, request: &GatewayRequest) -> Result<String, GatewayError> {
        let _permit = self
            .permits
            .acquire()
            .await
            .expect("semaphore never closed");
        let body = self.payload(request);
        let mut attempt = 0;
        loop {
            match self.call_once(body.clone()).await {
                Ok(text) => return Ok(text),
                Err(message) if attempt >= self.config.retries => {
                    return Err(GatewayError::Transport {
                        attempts: attempt + 1,
                        message,
                    });
                }
                Err(message) => {
                    tracing::warn!(role = %request.role, attempt, %message, "model call failed; retrying");
                    tokio::time::sleep(self.config.base_backoff * 2u32.pow(attempt)).await;
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Role;

    fn gw() -> RemoteGateway {
        let mut cfg = RemoteConfig::new("http://127.0.0.1:9/v1/chat/completions", "test-model");
        cfg.base_backoff = Duration::from_millis(1);
        cfg.timeout = Duration::from_secs(2);
        RemoteGateway::new(cfg).unwrap()
    }

    #[test]
    fn payload_is_byte_stable() {
        let g = gw();
        let req = GatewayRequest::new(Role::Think, "weigh the evidence");
        assert_eq!(g.payload(&req), g.payload(&req.clone()));
        let text = String::from_utf8(g.payload(&req)).unwrap();
        assert_eq!(
            text,
            r#"{"model":"test-model","messages":[{"role":"user","content":"weigh the evidence"}],"temperature":0.0,"response_format":{"type":"json_object"}}"#
        );
        let plan = String::from_utf8(g.payload(&GatewayRequest::new(Role::Planner, "p"))).unwrap();
        assert!(!plan.contains("response_format"));
    }

    #[tokio::test]
    async fn unreachable_backend_exhausts_retries() {
        let err = gw()
            .complete(&GatewayRequest::new(Role::Judge, "x"))
            .await
            .unwrap_err();
        assert!(
            matches!(err, GatewayError::Transport { attempts: 3, .. }),
            "{err:?}"
        );
    }
}
