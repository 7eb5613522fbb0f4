//! Remote model access over a JSON wire protocol, plus the judge prompt
//! builder and score parser.

mod judge;
mod wire;

pub use judge::{
    build_judge_prompt, order_swapped, parse_judge_scores, JudgeOutcome, JudgeParseError,
    JudgeRequest, JudgeVerdict, JUDGE_SYSTEM_PROMPT,
};
pub use wire::{RemoteLm, RemoteRm, StubServer};

use thiserror::Error;

/// Connection parameters for a remote provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteEndpoint {
    /// `host:port` of the provider.
    pub addr: String,
    pub timeout_ms: u64,
    pub retries: u32,
    /// Environment variable to read the auth token from, if any.
    pub auth_env: Option<String>,
}

impl RemoteEndpoint {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            timeout_ms: 5_000,
            retries: 2,
            auth_env: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_ms == 0 {
            return Err("timeout_ms must be > 0".into());
        }
        Ok(())
    }

    pub fn auth_token(&self) -> Option<String> {
        self.auth_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok())
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("connect to {addr} failed: {source}")]
    Connect {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("request timed out after {timeout_ms} ms")]
    Timeout { timeout_ms: u64 },
    #[error("transport error: {0}")]
    Io(#[source] std::io::Error),
    #[error("malformed response: {message}")]
    Malformed { message: String },
    #[error("provider reported an error: {message}")]
    ErrorStatus { message: String },
}

impl WireError {
    /// Connection, timeout, and provider-side failures are retried;
    /// malformed payloads are not.
    pub fn is_retryable(&self) -> bool {
        !matches!(self, WireError::Malformed { .. })
    }
}
