//! All model traffic goes through a [`Gateway`]. Backends: a remote
//! chat-completions client, a scripted backend answering from a transcript, and
//! a recorder that captures any backend's calls into a replayable transcript.

mod recording;
mod remote;
mod scripted;

use std::fmt;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use recording::{RecordingGateway, Transcript, TranscriptEntry};
pub use remote::{RemoteConfig, RemoteGateway, ENV_LLM_API_KEY, ENV_LLM_ENDPOINT, ENV_LLM_MODEL};
pub use scripted::{FnGateway, ScriptedGateway};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Planner,
    SearchQuery,
    Refine,
    Think,
    Judge,
}

impl Role {
    pub fn response_format(self) -> ResponseFormat {
        match self {
            Role::Planner => ResponseFormat::JsonArray,
            Role::Think | Role::Judge => ResponseFormat::JsonObject,
            Role::SearchQuery | Role::Refine => ResponseFormat::FreeText,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Planner => "PLANNER",
            Role::SearchQuery => "SEARCH_QUERY",
            Role::Refine => "REFINE",
            Role::Think => "THINK",
            Role::Judge => "JUDGE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResponseFormat {
    FreeText,
    JsonObject,
    JsonArray,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayRequest {
    pub role: Role,
    pub prompt: String,
    pub response_format: ResponseFormat,
}

impl GatewayRequest {
    pub fn new(role: Role, prompt: impl Into<String>) -> Self {
        Self {
            role,
            prompt: prompt.into(),
            response_format: role.response_format(),
        }
    }

    pub fn digest(&self) -> String {
        prompt_digest(&self.prompt)
    }
}

/// Hex SHA-256 of the prompt text.
pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("model backend failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("script has no response for role {role} (prompt digest {digest})")]
    ScriptMiss { role: Role, digest: String },
    #[error("prompt digest collision on {digest}")]
    DigestCollision { digest: String },
    #[error("gateway misconfigured: {0}")]
    Config(String),
}

impl GatewayError {
    /// Errors that mean the run itself is broken, as opposed to a flaky backend.
    pub fn is_fatal(&self) -> bool {
        !matches!(self, GatewayError::Transport { .. })
    }
}

#[async_trait]
pub trait Gateway: Send + Sync {
    async fn complete(&self, request: &GatewayRequest) -> Result<String, GatewayError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_fixes_format() {
        assert_eq!(
            GatewayRequest::new(Role::Planner, "p").response_format,
            ResponseFormat::JsonArray
        );
        assert_eq!(
            GatewayRequest::new(Role::Think, "p").response_format,
            ResponseFormat::JsonObject
        );
        assert_eq!(
            GatewayRequest::new(Role::Judge, "p").response_format,
            ResponseFormat::JsonObject
        );
        assert_eq!(
            GatewayRequest::new(Role::SearchQuery, "p").response_format,
            ResponseFormat::FreeText
        );
        assert_eq!(
            GatewayRequest::new(Role::Refine, "p").response_format,
            ResponseFormat::FreeText
        );
    }

    #[test]
    fn role_wire_names() {
        assert_eq!(
            serde_json::to_string(&Role::SearchQuery).unwrap(),
            "\"SEARCH_QUERY\""
        );
        assert_eq!(Role::SearchQuery.to_string(), "SEARCH_QUERY");
    }

    #[test]
    fn digest_is_sha256_hex() {
        assert_eq!(
            prompt_digest(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
