use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub digest: String,
    pub response_text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl CassetteEntry {
    fn response(&self) -> ChatResponse {
        ChatResponse {
            text: self.response_text.clone(),
            prompt_tokens: self.prompt_tokens,
            completion_tokens: self.completion_tokens,
        }
    }
}

fn cassette_error(path: &Path, message: impl ToString) -> LlmError {
    LlmError::Cassette {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn read_cassette(path: &Path) -> Result<HashMap<String, CassetteEntry>, LlmError> {
    let text = fs::read_to_string(path).map_err(|e| cassette_error(path, e))?;
    let mut entries = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: CassetteEntry = serde_json::from_str(line)
            .map_err(|e| cassette_error(path, format!("line {}: {e}", n + 1)))?;
        entries.entry(entry.digest.clone()).or_insert(entry);
    }
    Ok(entries)
}

struct Tape {
    entries: HashMap<String, CassetteEntry>,
    file: File,
}

/// Wraps a backend and appends every new `(digest, response)` pair to a JSONL
/// cassette. Requests whose digest is already on the tape are answered from it.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    tape: Mutex<Tape>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    /// Opens (or creates) the cassette; existing entries are kept and reused.
    pub fn new(inner: B, path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref().to_owned();
        let entries = if path.exists() {
            read_cassette(&path)?
        } else {
            HashMap::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| cassette_error(&path, e))?;
        Ok(RecordingBackend {
            inner,
            path,
            tape: Mutex::new(Tape { entries, file }),
        })
    }

    pub fn len(&self) -> usize {
        self.tape.lock().expect("cassette lock poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let digest = request.digest();
        if let Some(hit) = self
            .tape
            .lock()
            .expect("cassette lock poisoned")
            .entries
            .get(&digest)
        {
            return Ok(hit.response());
        }
        let response = self.inner.complete(request)?;
        let mut tape = self.tape.lock().expect("cassette lock poisoned");
        if let Some(existing) = tape.entries.get(&digest) {
            // A concurrent identical call got there first; keep the tape single-valued.
            return Ok(existing.response());
        }
        let entry = CassetteEntry {
            digest: digest.clone(),
            response_text: response.text.clone(),
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
        };
        let line = serde_json::to_string(&entry).expect("cassette entry serializes");
        writeln!(tape.file, "{line}").map_err(|e| cassette_error(&self.path, e))?;
        tape.entries.insert(digest, entry);
        Ok(response)
    }

    fn kind(&self) -> &'static str {
        "record"
    }
}

/// Answers requests purely from a recorded cassette.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    entries: HashMap<String, CassetteEntry>,
}

impl ReplayBackend {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        Ok(ReplayBackend {
            entries: read_cassette(path.as_ref())?,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.entries.contains_key(digest)
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let digest = request.digest();
        self.entries
            .get(&digest)
            .map(CassetteEntry::response)
            .ok_or(LlmError::CassetteMiss {
                agent: request.agent,
                digest,
            })
    }

    fn kind(&self) -> &'static str {
        "replay"
    }
}
