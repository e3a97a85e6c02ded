//! Run configuration loaded from TOML. Every field has a default, so an empty
//! file is a valid configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::blackboard::Clock;
use crate::corpus::DEFAULT_SESSION_GAP;
use crate::eval::EvalConfig;
use crate::llm::RemoteConfig;
use crate::pipeline::PipelineConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    /// Scripted replies, falling back to the offline overlap agent unless strict.
    #[default]
    Mock,
    Replay,
    Record,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Remote => "remote",
            BackendKind::Mock => "mock",
            BackendKind::Replay => "replay",
            BackendKind::Record => "record",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(BackendKind::Remote),
            "mock" => Ok(BackendKind::Mock),
            "replay" => Ok(BackendKind::Replay),
            "record" => Ok(BackendKind::Record),
            other => Err(format!("unknown backend {other:?} (expected remote, mock, replay or record)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub remote: RemoteConfig,
    /// Cassette file for `record` and `replay`.
    pub cassette: Option<PathBuf>,
    /// JSON map of digest to reply, used by `mock`.
    pub script: Option<PathBuf>,
    /// Fail on unscripted requests instead of answering them offline.
    pub strict: bool,
    /// What `record` wraps: `remote` or `mock`.
    pub record_inner: BackendKind,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            remote: RemoteConfig::default(),
            cassette: None,
            script: None,
            strict: false,
            record_inner: BackendKind::Remote,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub catalog: Option<PathBuf>,
    /// Raw interaction log; contexts are built from it with `session_gap`.
    pub interactions: Option<PathBuf>,
    /// Prebuilt contexts (as written by `ingest`); preferred over `interactions`.
    pub contexts: Option<PathBuf>,
    /// Seconds of inactivity that end a session.
    pub session_gap: u64,
    /// Embedding cache, reused when it matches the catalog.
    pub vector_cache: Option<PathBuf>,
    pub name: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            catalog: None,
            interactions: None,
            contexts: None,
            session_gap: DEFAULT_SESSION_GAP,
            vector_cache: None,
            name: "dataset".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
    pub backend: BackendConfig,
    pub output_dir: PathBuf,
    /// Directory with template overrides, one `<name>.txt` per prompt.
    pub prompts_dir: Option<PathBuf>,
    /// Stamp every blackboard message with this time instead of the wall
    /// clock, making traces byte-reproducible.
    pub frozen_clock_ms: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            pipeline: PipelineConfig::default(),
            eval: EvalConfig::default(),
            backend: BackendConfig::default(),
            output_dir: PathBuf::from("out"),
            prompts_dir: None,
            frozen_clock_ms: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut config = Self::parse(&text, path)?;
        config.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    /// Makes relative paths relative to the config file's directory.
    fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.data.catalog);
        fix(&mut self.data.interactions);
        fix(&mut self.data.contexts);
        fix(&mut self.data.vector_cache);
        fix(&mut self.backend.cassette);
        fix(&mut self.backend.script);
        fix(&mut self.prompts_dir);
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn clock(&self) -> Clock {
        self.frozen_clock_ms.map_or(Clock::System, Clock::Frozen)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        let c = RunConfig::parse("", Path::new("x.toml")).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.backend.kind = BackendKind::Replay;
        c.backend.cassette = Some("tape.jsonl".into());
        c.pipeline.theta = 0.25;
        let back = RunConfig::parse(&c.to_toml(), Path::new("x.toml")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c = RunConfig::parse("[pipeline]\npool_size = 30\n[backend]\nkind = \"remote\"\n", Path::new("x")).unwrap();
        assert_eq!(c.pipeline.pool_size, 30);
        assert_eq!(c.pipeline.theta, 0.5);
        assert_eq!(c.backend.kind, BackendKind::Remote);
    }

    #[test]
    fn unknown_backend_is_rejected() {
        assert!("grpc".parse::<BackendKind>().is_err());
        assert!(RunConfig::parse("[backend]\nkind = \"grpc\"\n", Path::new("x")).is_err());
    }
}
