use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use super::{approx_tokens, ChatBackend, ChatRequest, ChatResponse, LlmError};

/// Computes a response for requests that have no scripted entry.
pub type Responder = Arc<dyn Fn(&ChatRequest) -> String + Send + Sync>;

/// Deterministic offline backend. Scripted responses are keyed by request
/// digest; anything else goes to the responder unless the mock is strict.
#[derive(Clone, Default)]
pub struct MockBackend {
    scripts: HashMap<String, String>,
    responder: Option<Responder>,
    strict: bool,
    calls: Arc<Mutex<Vec<ChatRequest>>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Unscripted requests fail instead of reaching the responder.
    pub fn strict() -> Self {
        MockBackend {
            strict: true,
            ..Self::default()
        }
    }

    pub fn with_responder<F>(responder: F) -> Self
    where
        F: Fn(&ChatRequest) -> String + Send + Sync + 'static,
    {
        MockBackend {
            responder: Some(Arc::new(responder)),
            ..Self::default()
        }
    }

    pub fn set_strict(&mut self, strict: bool) {
        self.strict = strict;
    }

    pub fn script(&mut self, digest: impl Into<String>, response: impl Into<String>) {
        self.scripts.insert(digest.into(), response.into());
    }

    pub fn script_request(&mut self, request: &ChatRequest, response: impl Into<String>) {
        self.script(request.digest(), response);
    }

    /// Loads a JSON object mapping digests to response texts.
    pub fn load_script(&mut self, path: impl AsRef<Path>) -> Result<(), LlmError> {
        let path = path.as_ref();
        let err = |message: String| LlmError::Cassette {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let map: HashMap<String, String> =
            serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        self.scripts.extend(map);
        Ok(())
    }

    /// Every request seen so far, in call order.
    pub fn calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().expect("mock lock poisoned").clone()
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.calls
            .lock()
            .expect("mock lock poisoned")
            .push(request.clone());
        let digest = request.digest();
        let text = match (self.scripts.get(&digest), &self.responder) {
            (Some(text), _) => text.clone(),
            (None, Some(responder)) if !self.strict => responder(request),
            _ => {
                return Err(LlmError::Unscripted {
                    agent: request.agent,
                    digest,
                })
            }
        };
        Ok(ChatResponse {
            prompt_tokens: approx_tokens(&request.prompt_text()),
            completion_tokens: approx_tokens(&text),
            text,
        })
    }

    fn kind(&self) -> &'static str {
        "mock"
    }
}
