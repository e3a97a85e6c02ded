//! Chat-completion backends shared by every agent.
//!
//! Three interchangeable implementations sit behind [`ChatBackend`]: a remote
//! OpenAI-compatible endpoint, a scripted mock, and a record/replay cassette.
//! Requests are keyed by a digest of their ordered `(role, content)` pairs so
//! that prompt-identical calls collapse regardless of token limits or model.

mod cassette;
pub mod heuristic;
mod mock;
mod remote;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::blackboard::Role;

pub use cassette::{CassetteEntry, RecordingBackend, ReplayBackend};
pub use mock::{MockBackend, Responder};
pub use remote::{RemoteBackend, RemoteConfig};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("{agent}: request failed after {attempts} attempt(s): {message}")]
    Transport {
        agent: Role,
        attempts: u32,
        message: String,
    },
    #[error("{agent}: invalid response from backend: {message}")]
    InvalidResponse { agent: Role, message: String },
    #[error("{agent}: no scripted response for request digest {digest}")]
    Unscripted { agent: Role, digest: String },
    #[error("{agent}: cassette has no entry for request digest {digest}")]
    CassetteMiss { agent: Role, digest: String },
    #[error("cassette {path}: {message}")]
    Cassette { path: String, message: String },
    #[error("backend configuration: {0}")]
    Config(String),
}

impl LlmError {
    /// The agent whose call failed, when known.
    pub fn agent(&self) -> Option<Role> {
        match self {
            LlmError::Transport { agent, .. }
            | LlmError::InvalidResponse { agent, .. }
            | LlmError::Unscripted { agent, .. }
            | LlmError::CassetteMiss { agent, .. } => Some(*agent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
}

impl ChatRole {
    fn tag(self) -> u8 {
        match self {
            ChatRole::System => b's',
            ChatRole::User => b'u',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_tag: String,
    /// Which agent issued the call. Not part of the digest.
    pub agent: Role,
}

impl ChatRequest {
    pub fn new(agent: Role, messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            messages,
            temperature: 0.0,
            max_tokens: 256,
            model_tag: String::new(),
            agent,
        }
    }

    pub fn max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn model_tag(mut self, tag: impl Into<String>) -> Self {
        self.model_tag = tag.into();
        self
    }

    pub fn temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn digest(&self) -> String {
        request_digest(&self.messages)
    }

    /// Concatenated message contents.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// SHA-256 over the ordered `(role, content)` pairs, each content
/// length-prefixed, hex encoded.
pub fn request_digest(messages: &[ChatMessage]) -> String {
    let mut hasher = Sha256::new();
    for m in messages {
        hasher.update([m.role.tag()]);
        hasher.update((m.content.len() as u64).to_le_bytes());
        hasher.update(m.content.as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl ChatResponse {
    pub fn new(text: impl Into<String>) -> Self {
        ChatResponse {
            text: text.into(),
            prompt_tokens: 0,
            completion_tokens: 0,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;

    /// Short name used in run manifests.
    fn kind(&self) -> &'static str;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }

    fn kind(&self) -> &'static str {
        (**self).kind()
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }

    fn kind(&self) -> &'static str {
        (**self).kind()
    }
}

/// Rough whitespace token count used by the offline backends.
pub(crate) fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Counts calls passing through to an inner backend.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicU64,
}

impl<B: ChatBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: ChatBackend> ChatBackend for CountingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }

    fn kind(&self) -> &'static str {
        self.inner.kind()
    }
}
