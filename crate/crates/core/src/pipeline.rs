//! Orchestration of the three-step agent protocol, the two baselines and the
//! two ablations.
//!
//! Step 1 runs the user understanding agent and the per-item inference fan-out
//! concurrently; steps 2 and 3 start only once every step-1 message is on the
//! board and read it back in canonical order.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    filter_aligned, AgentError, AgentSettings, Agents, CallUsage, ContextSummary, NliJudgement, Ranking,
    RankerRecord, UserSummary,
};
use crate::blackboard::{Blackboard, BoardError, Clock, Message, Role};
use crate::corpus::{metadata_text, Catalog, Item, UserContext};
use crate::embed::{embed_user, rank_order, retrieve_topk, Embedder, EmbedError, IndexEntry, Scored, VectorIndex};
use crate::llm::ChatBackend;
use crate::prompts::PromptSet;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("user {0:?} has no history to work from")]
    EmptyContext(String),
    #[error("candidate pool contains duplicate item {0:?}")]
    DuplicateCandidate(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl PipelineError {
    /// True when the failure came from the chat backend.
    pub fn is_backend(&self) -> bool {
        matches!(self, PipelineError::Agent(e) if e.is_backend())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Recency,
    VanillaRag,
    AragNoNliNoCsa,
    AragNoNli,
    Arag,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Recency,
        Variant::VanillaRag,
        Variant::AragNoNliNoCsa,
        Variant::AragNoNli,
        Variant::Arag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Arag => "arag",
            Variant::AragNoNli => "arag_no_nli",
            Variant::AragNoNliNoCsa => "arag_no_nli_no_csa",
            Variant::VanillaRag => "vanilla_rag",
            Variant::Recency => "recency",
        }
    }

    /// Row label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Arag => "ARAG",
            Variant::AragNoNli => "ARAG w/o NLI",
            Variant::AragNoNliNoCsa => "ARAG w/o NLI & CSA",
            Variant::VanillaRag => "Vanilla RAG",
            Variant::Recency => "Recency-based Ranking",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Variant::Recency | Variant::VanillaRag)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.as_str()).collect();
                format!("unknown variant {s:?} (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Recall size for embedding retrieval.
    pub k: usize,
    /// NLI acceptance threshold.
    pub theta: f64,
    /// Minimum accepted items when too few pass the threshold.
    pub min_accepted: usize,
    pub pool_size: usize,
    pub variant: Variant,
    pub seed: u64,
    /// Upper bound on concurrent inference calls in step 1.
    pub concurrency_cap: usize,
    pub agents: AgentSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: crate::embed::DEFAULT_K,
            theta: 0.5,
            min_accepted: 3,
            pool_size: 20,
            variant: Variant::Arag,
            seed: 0,
            concurrency_cap: 4,
            agents: AgentSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(PipelineError::Config(format!("theta {} outside [0, 1]", self.theta)));
        }
        if self.pool_size < 1 {
            return Err(PipelineError::Config("pool_size must be at least 1".into()));
        }
        if self.k < 1 {
            return Err(PipelineError::Config("k must be at least 1".into()));
        }
        if self.concurrency_cap < 1 {
            return Err(PipelineError::Config("concurrency_cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub variant: Variant,
    pub ranking: Ranking,
    pub board_trace: String,
    /// Per-call token usage, sorted by (role, label).
    pub usage: Vec<CallUsage>,
    pub wall_time_ms: u64,
}

/// Everything a pipeline run needs apart from the user and the pool.
pub struct Engine<'a> {
    pub catalog: &'a Catalog,
    pub embedder: &'a dyn Embedder,
    pub backend: &'a dyn ChatBackend,
    pub prompts: &'a PromptSet,
    pub config: &'a PipelineConfig,
    pub clock: Clock,
}

impl<'a> Engine<'a> {
    pub fn agents(&self) -> Agents<'a> {
        Agents {
            catalog: self.catalog,
            backend: self.backend,
            prompts: self.prompts,
            settings: &self.config.agents,
        }
    }

    /// Dispatches on `config.variant`.
    pub fn run(&self, context: &UserContext, pool: &[Item]) -> Result<PipelineOutput, PipelineError> {
        self.run_variant(self.config.variant, context, pool)
    }

    pub fn run_variant(
        &self,
        variant: Variant,
        context: &UserContext,
        pool: &[Item],
    ) -> Result<PipelineOutput, PipelineError> {
        match variant {
            Variant::Arag => self.run_arag(context, pool),
            Variant::AragNoNli => self.run_ablation(context, pool, true),
            Variant::AragNoNliNoCsa => self.run_ablation(context, pool, false),
            Variant::VanillaRag => self.run_vanilla_rag(context, pool),
            Variant::Recency => self.run_recency(context, pool),
        }
    }

    fn check_inputs(&self, context: &UserContext, pool: &[Item]) -> Result<(), PipelineError> {
        self.config.validate()?;
        if pool.is_empty() {
            return Err(PipelineError::EmptyPool);
        }
        if context.is_empty() {
            return Err(PipelineError::EmptyContext(context.user_id.clone()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = pool.iter().find(|i| !seen.insert(i.id.as_str())) {
            return Err(PipelineError::DuplicateCandidate(dup.id.clone()));
        }
        Ok(())
    }

    /// Pool ids ordered by cosine similarity to the user embedding (ties by
    /// id). Used to complete partial rankings.
    pub fn retrieval_order(&self, context: &UserContext, pool: &[Item]) -> Result<Vec<String>, PipelineError> {
        let settings = &self.config.agents;
        let query = embed_user(
            self.embedder,
            self.catalog,
            context,
            settings.max_history_items,
            settings.max_reviews,
        )?;
        let mut scored = pool
            .iter()
            .map(|item| {
                let v = self.embedder.embed_text(&metadata_text(item, settings.max_reviews));
                Ok(Scored {
                    id: item.id.clone(),
                    score: crate::embed::cosine(&v, &query)?,
                })
            })
            .collect::<Result<Vec<_>, EmbedError>>()?;
        scored.sort_by(rank_order);
        Ok(scored.into_iter().map(|s| s.id).collect())
    }

    fn output(
        &self,
        variant: Variant,
        ranking: Ranking,
        board: &Blackboard,
        mut usage: Vec<CallUsage>,
        started: Instant,
    ) -> PipelineOutput {
        usage.sort_by(|a, b| (a.role, &a.label).cmp(&(b.role, &b.label)));
        PipelineOutput {
            variant,
            ranking,
            board_trace: board.serialize(),
            usage,
            wall_time_ms: started.elapsed().as_millis() as u64,
        }
    }

    pub fn run_arag(&self, context: &UserContext, pool: &[Item]) -> Result<PipelineOutput, PipelineError> {
        self.check_inputs(context, pool)?;
        let started = Instant::now();
        let agents = self.agents();
        let board = Blackboard::new(self.clock);
        let retrieval_order = self.retrieval_order(context, pool)?;
        let mut usage = Vec::new();

        // Step 1: user understanding in parallel with the inference fan-out.
        let failures: Mutex<Vec<AgentError>> = Mutex::new(Vec::new());
        let nli_usage: Mutex<Vec<CallUsage>> = Mutex::new(Vec::new());
        let next = AtomicUsize::new(0);
        let workers = self.config.concurrency_cap.clamp(1, pool.len());
        let uua = thread::scope(|s| {
            let uua = s.spawn(|| agents.run_uua(context, &board));
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(item) = pool.get(i) else { break };
                    match agents.run_nli(item, context, &board) {
                        Ok((_, u)) => nli_usage.lock().expect("usage lock").extend(u),
                        Err(e) => failures.lock().expect("failure lock").push(e),
                    }
                });
            }
            uua.join().expect("user understanding thread panicked")
        });
        let (_, uua_usage) = uua?;
        if let Some(e) = failures.into_inner().expect("failure lock").into_iter().next() {
            return Err(e.into());
        }
        usage.push(uua_usage);
        usage.extend(nli_usage.into_inner().expect("usage lock"));

        // Steps 2 and 3 work from the canonical board view only.
        let user_summary = read_user_summary(&board)?;
        let judgements = read_judgements(&board)?;
        let accepted_ids = filter_aligned(&judgements, self.config.theta, self.config.min_accepted);
        let accepted: Vec<&Item> = accepted_ids
            .iter()
            .filter_map(|id| pool.iter().find(|i| &i.id == id))
            .collect();
        let (context_summary, csa_usage) = agents.run_csa(&accepted, &user_summary, Some(&judgements), &board)?;
        usage.push(csa_usage);

        let context_summary = read_context_summary(&board)?.unwrap_or(context_summary);
        let candidates: Vec<&Item> = pool.iter().collect();
        let (ranking, ira_usage) =
            agents.run_ira(&user_summary, Some(&context_summary), &candidates, &retrieval_order, &board)?;
        usage.push(ira_usage);
        Ok(self.output(Variant::Arag, ranking, &board, usage, started))
    }

    /// `with_csa`: summarize the whole pool without inference scores.
    /// Otherwise the ranker sees only the user summary and the raw pool.
    fn run_ablation(&self, context: &UserContext, pool: &[Item], with_csa: bool) -> Result<PipelineOutput, PipelineError> {
        self.check_inputs(context, pool)?;
        let started = Instant::now();
        let agents = self.agents();
        let board = Blackboard::new(self.clock);
        let retrieval_order = self.retrieval_order(context, pool)?;
        let candidates: Vec<&Item> = pool.iter().collect();

        let (_, uua_usage) = agents.run_uua(context, &board)?;
        let user_summary = read_user_summary(&board)?;
        let mut usage = vec![uua_usage];
        let context_summary = if with_csa {
            let (summary, u) = agents.run_csa(&candidates, &user_summary, None, &board)?;
            usage.push(u);
            Some(summary)
        } else {
            None
        };
        let (ranking, u) =
            agents.run_ira(&user_summary, context_summary.as_ref(), &candidates, &retrieval_order, &board)?;
        usage.push(u);
        let variant = if with_csa {
            Variant::AragNoNli
        } else {
            Variant::AragNoNliNoCsa
        };
        Ok(self.output(variant, ranking, &board, usage, started))
    }

    /// History items most similar to the candidate pool, distinct, at most
    /// `max_history_items`, best first.
    pub fn similar_history(&self, context: &UserContext, pool: &[Item]) -> Result<Vec<&'a Item>, PipelineError> {
        let settings = &self.config.agents;
        let mut seen = std::collections::HashSet::new();
        let mut entries = Vec::new();
        for interaction in context.newest_first() {
            if seen.insert(interaction.item_id.as_str()) {
                let item = self.catalog.get(&interaction.item_id).ok_or_else(|| {
                    EmbedError::UnknownItems(vec![interaction.item_id.clone()])
                })?;
                entries.push(IndexEntry {
                    id: item.id.clone(),
                    vector: self.embedder.embed_text(&metadata_text(item, settings.max_reviews)),
                });
            }
        }
        let index = VectorIndex::new(entries)?;
        let pool_text = pool
            .iter()
            .map(|i| metadata_text(i, settings.max_reviews))
            .collect::<Vec<_>>()
            .join("\n");
        let query = self.embedder.embed_text(&pool_text);
        Ok(retrieve_topk(&index, &query, settings.max_history_items)?
            .into_iter()
            .filter_map(|s| self.catalog.get(&s.id))
            .collect())
    }

    /// The `max_history_items` most recent interactions, newest first.
    pub fn recent_history(&self, context: &UserContext) -> Result<Vec<&'a Item>, PipelineError> {
        context
            .newest_first()
            .take(self.config.agents.max_history_items)
            .map(|i| {
                self.catalog
                    .get(&i.item_id)
                    .ok_or_else(|| EmbedError::UnknownItems(vec![i.item_id.clone()]).into())
            })
            .collect()
    }

    pub fn run_vanilla_rag(&self, context: &UserContext, pool: &[Item]) -> Result<PipelineOutput, PipelineError> {
        self.check_inputs(context, pool)?;
        let history = self.similar_history(context, pool)?;
        self.run_baseline(Variant::VanillaRag, context, pool, &history)
    }

    pub fn run_recency(&self, context: &UserContext, pool: &[Item]) -> Result<PipelineOutput, PipelineError> {
        self.check_inputs(context, pool)?;
        let history = self.recent_history(context)?;
        self.run_baseline(Variant::Recency, context, pool, &history)
    }

    fn run_baseline(
        &self,
        variant: Variant,
        context: &UserContext,
        pool: &[Item],
        history: &[&Item],
    ) -> Result<PipelineOutput, PipelineError> {
        let started = Instant::now();
        let board = Blackboard::new(self.clock);
        let retrieval_order = self.retrieval_order(context, pool)?;
        let candidates: Vec<&Item> = pool.iter().collect();
        let (ranking, usage) = self
            .agents()
            .run_baseline(history, &candidates, &retrieval_order, &board)?;
        Ok(self.output(variant, ranking, &board, vec![usage], started))
    }
}

fn single(board: &Blackboard, role: Role) -> Option<Message> {
    board.read(Some(role)).into_iter().next()
}

fn corrupt(role: Role, e: impl fmt::Display) -> PipelineError {
    PipelineError::Agent(AgentError::Board(BoardError::MalformedTrace {
        offset: 0,
        line: 0,
        message: format!("{role} message: {e}"),
    }))
}

fn read_user_summary(board: &Blackboard) -> Result<UserSummary, PipelineError> {
    single(board, Role::UserUnderstanding)
        .map(|m| UserSummary { text: m.content })
        .ok_or_else(|| corrupt(Role::UserUnderstanding, "missing"))
}

fn read_judgements(board: &Blackboard) -> Result<Vec<NliJudgement>, PipelineError> {
    board
        .read(Some(Role::Nli))
        .into_iter()
        .map(|m| serde_json::from_str(&m.content).map_err(|e| corrupt(Role::Nli, e)))
        .collect()
}

fn read_context_summary(board: &Blackboard) -> Result<Option<ContextSummary>, PipelineError> {
    single(board, Role::ContextSummary)
        .map(|m| serde_json::from_str(&m.content).map_err(|e| corrupt(Role::ContextSummary, e)))
        .transpose()
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error("trace validation failed: {0}")]
    Invalid(String),
}

/// Checks a trace against the protocol: each role writes in its own stage,
/// at most one message per non-inference role, stages ordered in time, and a
/// ranker message whose stored ranking matches a fresh parse of its raw reply.
pub fn validate_trace(board: &Blackboard) -> Result<RankerRecord, TraceError> {
    let messages = board.read(None);
    if messages.is_empty() {
        return Err(TraceError::Invalid("trace is empty".into()));
    }
    for m in &messages {
        if m.stage != m.role.stage() {
            return Err(TraceError::Invalid(format!(
                "message {:?} from {} has stage {}, expected {}",
                m.id,
                m.role,
                m.stage,
                m.role.stage()
            )));
        }
        if m.role == Role::Nli && m.score.is_none() {
            return Err(TraceError::Invalid(format!("nli message {:?} has no score", m.id)));
        }
    }
    for role in [Role::UserUnderstanding, Role::ContextSummary, Role::ItemRanker] {
        if messages.iter().filter(|m| m.role == role).count() > 1 {
            return Err(TraceError::Invalid(format!("more than one {role} message")));
        }
    }
    for stage in 2..=3 {
        let earlier = messages.iter().filter(|m| m.stage < stage).map(|m| m.timestamp).max();
        let first_here = messages.iter().filter(|m| m.stage == stage).map(|m| m.timestamp).min();
        if let (Some(earlier), Some(here)) = (earlier, first_here) {
            if here < earlier {
                return Err(TraceError::Invalid(format!("stage {stage} message precedes an earlier stage")));
            }
        }
    }
    let ranker = messages
        .iter()
        .find(|m| m.role == Role::ItemRanker)
        .ok_or_else(|| TraceError::Invalid("no item_ranker message".into()))?;
    let record: RankerRecord = serde_json::from_str(&ranker.content)
        .map_err(|e| TraceError::Invalid(format!("item_ranker content: {e}")))?;
    if record.reparse() != record.ranking {
        return Err(TraceError::Invalid("stored ranking does not match its raw reply".into()));
    }
    Ok(record)
}

/// Rebuilds the final ranking from a serialized trace.
pub fn replay_ranking(trace: &str) -> Result<Vec<String>, TraceError> {
    let board = Blackboard::replay(trace)?;
    Ok(validate_trace(&board)?.reparse())
}
