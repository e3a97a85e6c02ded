//! Agentic retrieval-augmented recommendation.
//!
//! Four LLM agents cooperate over a shared [`blackboard::Blackboard`] to rank
//! a candidate pool for one user: a user-understanding agent summarizes the
//! history, per-item NLI agents score alignment with the current session, a
//! context-summary agent condenses the accepted items and an item ranker
//! orders the pool. [`pipeline::Engine`] runs one user; [`eval::Harness`]
//! runs a benchmark over many.

pub mod agents;
pub mod blackboard;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod llm;
pub mod parse;
pub mod pipeline;
pub mod prompts;
pub mod synthetic;

pub use agents::{filter_aligned, AgentSettings, Agents, RankerRecord};
pub use blackboard::{Blackboard, Clock, Message, Role};
pub use config::{BackendKind, RunConfig};
pub use corpus::{Catalog, EvalInstance, Interaction, Item, UserContext};
pub use embed::{cosine, retrieve_topk, Embedder, EmbeddingVector, HashedBagOfTokens, VectorIndex};
pub use eval::{EvalConfig, Harness, Summary};
pub use llm::{ChatBackend, ChatRequest, ChatResponse, LlmError, MockBackend};
pub use parse::parse_ranking;
pub use pipeline::{Engine, PipelineConfig, PipelineOutput, Variant};
pub use prompts::PromptSet;
