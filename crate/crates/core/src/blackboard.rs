//! Shared append-only memory the agents read from and write to.
//!
//! Messages are kept in arrival order internally, but every read returns them
//! in canonical `(stage, role, id)` order so that concurrent writers cannot
//! change what downstream agents observe.

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoardError {
    #[error("message id {0:?} already exists on this board")]
    DuplicateId(String),
    #[error("invalid role {0:?}")]
    InvalidRole(String),
    #[error("malformed trace at byte {offset} (line {line}): {message}")]
    MalformedTrace {
        offset: usize,
        line: usize,
        message: String,
    },
}

/// Agent roles, declared in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    UserUnderstanding,
    Nli,
    ContextSummary,
    ItemRanker,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::UserUnderstanding,
        Role::Nli,
        Role::ContextSummary,
        Role::ItemRanker,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::UserUnderstanding => "user_understanding",
            Role::Nli => "nli",
            Role::ContextSummary => "context_summary",
            Role::ItemRanker => "item_ranker",
        }
    }

    /// Protocol step in which this role writes.
    pub fn stage(self) -> u32 {
        match self {
            Role::UserUnderstanding | Role::Nli => 1,
            Role::ContextSummary => 2,
            Role::ItemRanker => 3,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = BoardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| BoardError::InvalidRole(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    pub role: Role,
    pub content: String,
    pub score: Option<f64>,
    pub timestamp: u64,
    pub stage: u32,
}

impl Message {
    fn canonical_key(&self) -> (u32, Role, &str) {
        (self.stage, self.role, &self.id)
    }
}

/// A message to be posted; the board fills in the id (when absent) and the
/// timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Draft {
    pub id: Option<String>,
    pub role: Role,
    pub content: String,
    pub score: Option<f64>,
    pub stage: u32,
}

impl Draft {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Draft {
            id: None,
            role,
            content: content.into(),
            score: None,
            stage: role.stage(),
        }
    }

    pub fn id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn stage(mut self, stage: u32) -> Self {
        self.stage = stage;
        self
    }
}

/// Source of message timestamps (milliseconds).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    Frozen(u64),
}

impl Clock {
    pub fn now_ms(self) -> u64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            Clock::Frozen(ms) => ms,
        }
    }
}

#[derive(Debug, Default)]
struct Log {
    messages: Vec<Message>,
    next_id: u64,
}

#[derive(Debug, Default)]
pub struct Blackboard {
    clock: Clock,
    log: Mutex<Log>,
}

impl Blackboard {
    pub fn new(clock: Clock) -> Self {
        Blackboard {
            clock,
            log: Mutex::new(Log::default()),
        }
    }

    /// Appends a message and returns its id.
    pub fn post(&self, draft: Draft) -> Result<String, BoardError> {
        let timestamp = self.clock.now_ms();
        let mut log = self.log.lock().expect("blackboard lock poisoned");
        let id = match draft.id {
            Some(id) => {
                if log.messages.iter().any(|m| m.id == id) {
                    return Err(BoardError::DuplicateId(id));
                }
                id
            }
            None => loop {
                let candidate = format!("m{}", log.next_id);
                log.next_id += 1;
                if !log.messages.iter().any(|m| m.id == candidate) {
                    break candidate;
                }
            },
        };
        log.messages.push(Message {
            id: id.clone(),
            role: draft.role,
            content: draft.content,
            score: draft.score,
            timestamp,
            stage: draft.stage,
        });
        Ok(id)
    }

    /// Messages in canonical order, optionally restricted to one role.
    pub fn read(&self, role: Option<Role>) -> Vec<Message> {
        let mut out: Vec<Message> = {
            let log = self.log.lock().expect("blackboard lock poisoned");
            log.messages
                .iter()
                .filter(|m| role.is_none_or(|r| m.role == r))
                .cloned()
                .collect()
        };
        out.sort_by(|a, b| a.canonical_key().cmp(&b.canonical_key()));
        out
    }

    /// Messages in the order they were posted.
    pub fn arrival_order(&self) -> Vec<Message> {
        self.log.lock().expect("blackboard lock poisoned").messages.clone()
    }

    pub fn len(&self) -> usize {
        self.log.lock().expect("blackboard lock poisoned").messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// JSONL trace, one message per line in canonical order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for m in self.read(None) {
            out.push_str(&serde_json::to_string(&m).expect("message serializes"));
            out.push('\n');
        }
        out
    }

    /// Rebuilds a board from a trace produced by [`Blackboard::serialize`].
    pub fn replay(trace: &str) -> Result<Self, BoardError> {
        let mut messages = Vec::new();
        let mut offset = 0;
        for (n, line) in trace.split_inclusive('\n').enumerate() {
            let body = line.trim_end_matches(['\n', '\r']);
            if !body.trim().is_empty() {
                let message = parse_message(body).map_err(|(col, message)| {
                    BoardError::MalformedTrace {
                        offset: offset + col,
                        line: n + 1,
                        message,
                    }
                })?;
                if messages.iter().any(|m: &Message| m.id == message.id) {
                    return Err(BoardError::DuplicateId(message.id));
                }
                messages.push(message);
            }
            offset += line.len();
        }
        Ok(Blackboard {
            clock: Clock::System,
            log: Mutex::new(Log {
                next_id: messages.len() as u64,
                messages,
            }),
        })
    }
}

impl PartialEq for Blackboard {
    fn eq(&self, other: &Self) -> bool {
        self.read(None) == other.read(None)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMessage {
    id: String,
    role: String,
    content: String,
    score: Option<f64>,
    timestamp: u64,
    stage: u32,
}

fn parse_message(line: &str) -> Result<Message, (usize, String)> {
    let raw: RawMessage = serde_json::from_str(line).map_err(|e| {
        let col = line
            .split_inclusive('\n')
            .take(e.line().saturating_sub(1))
            .map(str::len)
            .sum::<usize>()
            + e.column().saturating_sub(1);
        (col, e.to_string())
    })?;
    let role = raw.role.parse::<Role>().map_err(|e| (0, e.to_string()))?;
    Ok(Message {
        id: raw.id,
        role,
        content: raw.content,
        score: raw.score,
        timestamp: raw.timestamp,
        stage: raw.stage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn board() -> Blackboard {
        Blackboard::new(Clock::Frozen(42))
    }

    #[test]
    fn post_assigns_ids() {
        let b = board();
        let id = b.post(Draft::new(Role::UserUnderstanding, "likes totes")).unwrap();
        assert_eq!(id, "m0");
        assert_eq!(b.len(), 1);
        assert_eq!(b.read(None)[0].timestamp, 42);
    }

    #[test]
    fn duplicate_explicit_id_rejected() {
        let b = board();
        b.post(Draft::new(Role::Nli, "x").id("same")).unwrap();
        assert!(matches!(
            b.post(Draft::new(Role::Nli, "y").id("same")),
            Err(BoardError::DuplicateId(_))
        ));
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn auto_ids_skip_explicit_collisions() {
        let b = board();
        b.post(Draft::new(Role::Nli, "x").id("m0")).unwrap();
        assert_eq!(b.post(Draft::new(Role::Nli, "y")).unwrap(), "m1");
    }

    #[test]
    fn read_filters_and_orders() {
        let b = board();
        assert!(b.read(None).is_empty());
        b.post(Draft::new(Role::ItemRanker, "rank").id("r")).unwrap();
        b.post(Draft::new(Role::Nli, "n2").id("nli:b").score(0.2)).unwrap();
        b.post(Draft::new(Role::UserUnderstanding, "u").id("u")).unwrap();
        b.post(Draft::new(Role::Nli, "n1").id("nli:a").score(0.9)).unwrap();
        let ids: Vec<_> = b.read(None).into_iter().map(|m| m.id).collect();
        assert_eq!(ids, ["u", "nli:a", "nli:b", "r"]);
        let nli = b.read(Some(Role::Nli));
        assert_eq!(nli.len(), 2);
        assert!(nli.iter().all(|m| m.role == Role::Nli));
        assert_eq!(b.read(None), b.read(None));
    }

    #[test]
    fn role_parsing() {
        assert_eq!("context_summary".parse::<Role>().unwrap(), Role::ContextSummary);
        assert!(matches!("critic".parse::<Role>(), Err(BoardError::InvalidRole(_))));
    }

    #[test]
    fn empty_trace_round_trip() {
        let b = board();
        assert_eq!(b.serialize(), "");
        assert!(Blackboard::replay("").unwrap().is_empty());
    }

    #[test]
    fn trace_lines_have_exact_fields() {
        let b = board();
        b.post(Draft::new(Role::ContextSummary, "ctx")).unwrap();
        let value: serde_json::Value = serde_json::from_str(b.serialize().trim()).unwrap();
        let mut keys: Vec<_> = value.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["content", "id", "role", "score", "stage", "timestamp"]);
    }

    #[test]
    fn truncated_trace_reports_offset() {
        let b = board();
        b.post(Draft::new(Role::UserUnderstanding, "first")).unwrap();
        b.post(Draft::new(Role::ContextSummary, "second")).unwrap();
        let trace = b.serialize();
        let first_len = trace.find('\n').unwrap() + 1;
        let cut = &trace[..first_len + 20];
        match Blackboard::replay(cut) {
            Err(BoardError::MalformedTrace { offset, line, .. }) => {
                assert_eq!(line, 2);
                assert!(offset >= first_len && offset <= cut.len(), "offset {offset}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_role_in_trace() {
        let line = r#"{"id":"x","role":"critic","content":"","score":null,"timestamp":0,"stage":1}"#;
        assert!(matches!(
            Blackboard::replay(line),
            Err(BoardError::MalformedTrace { .. })
        ));
    }
}
