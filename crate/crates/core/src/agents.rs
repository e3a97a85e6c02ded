//! The four LLM agents: user understanding, natural-language inference,
//! context summary and item ranking.
//!
//! Each agent renders its prompt from typed inputs, calls the backend, parses
//! the reply and posts one message to the blackboard.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blackboard::{Blackboard, BoardError, Draft, Role};
use crate::corpus::{metadata_text, Catalog, Item, UserContext};
use crate::llm::{ChatBackend, ChatRequest, LlmError};
use crate::parse::{parse_nli_reply, parse_ranking, ranking_explanation};
use crate::prompts::{PromptError, PromptSet};

pub const PARSE_FAILURE: &str = "parse_failure";
const NONE_BLOCK: &str = "(none)";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{0}: backend returned an empty reply")]
    EmptyReply(Role),
    #[error("{role}: item {id:?} is not in the catalog")]
    UnknownItem { role: Role, id: String },
    #[error("{0}: no candidates to work on")]
    NoCandidates(Role),
}

impl AgentError {
    pub fn is_backend(&self) -> bool {
        matches!(self, AgentError::Llm(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSettings {
    pub model_tag: String,
    pub temperature: f64,
    pub max_tokens_uua: u32,
    pub max_tokens_nli: u32,
    pub max_tokens_csa: u32,
    pub max_tokens_ira: u32,
    /// Interactions shown in history blocks (session first, newest first).
    pub max_history_items: usize,
    pub max_reviews: usize,
    /// Characters of item metadata kept per prompt line.
    pub metadata_chars: usize,
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings {
            model_tag: "gpt-3.5-turbo-0125".into(),
            temperature: 0.0,
            max_tokens_uua: 256,
            max_tokens_nli: 128,
            max_tokens_csa: 512,
            max_tokens_ira: 512,
            max_history_items: 10,
            max_reviews: crate::corpus::DEFAULT_MAX_REVIEWS,
            metadata_chars: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSummary {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliJudgement {
    pub item_id: String,
    pub score: f64,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSummary {
    pub text: String,
    pub source_item_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub item_ids: Vec<String>,
    pub explanation: String,
}

/// Payload of the ranker's blackboard message. Holds everything needed to
/// re-derive the ranking from the raw reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerRecord {
    pub raw: String,
    pub candidates: Vec<String>,
    pub retrieval_order: Vec<String>,
    pub ranking: Vec<String>,
    pub explanation: String,
}

impl RankerRecord {
    /// Re-runs ranking repair over the recorded raw reply.
    pub fn reparse(&self) -> Vec<String> {
        parse_ranking(&self.raw, &self.candidates, &self.retrieval_order)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallUsage {
    pub role: Role,
    pub label: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Accepted set: every item scoring at least `threshold`, or the best
/// `min_accepted` by (score desc, id asc) when fewer qualify. Returned in
/// that same order.
pub fn filter_aligned(judgements: &[NliJudgement], threshold: f64, min_accepted: usize) -> Vec<String> {
    let mut sorted: Vec<&NliJudgement> = judgements.iter().collect();
    sorted.sort_by(|a, b| by_score_desc(a, b));
    let passing = sorted.iter().take_while(|j| j.score >= threshold).count();
    sorted
        .into_iter()
        .take(passing.max(min_accepted))
        .map(|j| j.item_id.clone())
        .collect()
}

fn by_score_desc(a: &NliJudgement, b: &NliJudgement) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.item_id.cmp(&b.item_id))
}

fn truncate_chars(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((at, _)) => &text[..at],
        None => text,
    }
}

/// Runs the agents for one user against one backend.
pub struct Agents<'a> {
    pub catalog: &'a Catalog,
    pub backend: &'a dyn ChatBackend,
    pub prompts: &'a PromptSet,
    pub settings: &'a AgentSettings,
}

impl<'a> Agents<'a> {
    /// One prompt line per item: `- [id] metadata`, newlines folded.
    pub fn item_line(&self, item: &Item, annotation: Option<&str>) -> String {
        let meta = metadata_text(item, self.settings.max_reviews).replace('\n', " | ");
        let meta = truncate_chars(&meta, self.settings.metadata_chars);
        match annotation {
            Some(note) => format!("- [{}] ({note}) {meta}", item.id),
            None => format!("- [{}] {meta}", item.id),
        }
    }

    fn block(&self, lines: Vec<String>) -> String {
        if lines.is_empty() {
            NONE_BLOCK.to_owned()
        } else {
            lines.join("\n")
        }
    }

    fn resolve(&self, role: Role, id: &str) -> Result<&'a Item, AgentError> {
        self.catalog.get(id).ok_or_else(|| AgentError::UnknownItem {
            role,
            id: id.to_owned(),
        })
    }

    /// Session and long-term history blocks, newest first, together capped
    /// at `max_history_items` with the session taking precedence.
    pub fn history_blocks(&self, role: Role, context: &UserContext) -> Result<(String, String), AgentError> {
        let cap = self.settings.max_history_items;
        let session_n = context.session.len().min(cap);
        let long_n = context.long_term.len().min(cap - session_n);
        let render = |it: &mut dyn Iterator<Item = &crate::corpus::Interaction>| {
            it.map(|i| Ok(self.item_line(self.resolve(role, &i.item_id)?, None)))
                .collect::<Result<Vec<_>, AgentError>>()
        };
        let session = render(&mut context.session.iter().rev().take(session_n))?;
        let long_term = render(&mut context.long_term.iter().rev().take(long_n))?;
        Ok((self.block(session), self.block(long_term)))
    }

    fn request(&self, role: Role, messages: Vec<crate::llm::ChatMessage>) -> ChatRequest {
        let max_tokens = match role {
            Role::UserUnderstanding => self.settings.max_tokens_uua,
            Role::Nli => self.settings.max_tokens_nli,
            Role::ContextSummary => self.settings.max_tokens_csa,
            Role::ItemRanker => self.settings.max_tokens_ira,
        };
        ChatRequest::new(role, messages)
            .max_tokens(max_tokens)
            .model_tag(self.settings.model_tag.clone())
            .temperature(self.settings.temperature)
    }

    fn call(&self, request: &ChatRequest, label: &str) -> Result<(String, CallUsage), AgentError> {
        let response = self.backend.complete(request)?;
        let usage = CallUsage {
            role: request.agent,
            label: label.to_owned(),
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
        };
        Ok((response.text, usage))
    }

    pub fn uua_request(&self, context: &UserContext) -> Result<ChatRequest, AgentError> {
        let (session, long_term) = self.history_blocks(Role::UserUnderstanding, context)?;
        let messages = self
            .prompts
            .user_understanding
            .render(&[("session", &session), ("long_term", &long_term)])?;
        Ok(self.request(Role::UserUnderstanding, messages))
    }

    pub fn run_uua(&self, context: &UserContext, board: &Blackboard) -> Result<(UserSummary, CallUsage), AgentError> {
        let request = self.uua_request(context)?;
        let (text, usage) = self.call(&request, "user_understanding")?;
        let text = text.trim().to_owned();
        if text.is_empty() {
            return Err(AgentError::EmptyReply(Role::UserUnderstanding));
        }
        board.post(Draft::new(Role::UserUnderstanding, text.clone()).id("user_understanding"))?;
        Ok((UserSummary { text }, usage))
    }

    pub fn nli_request(&self, item: &Item, context: &UserContext) -> Result<ChatRequest, AgentError> {
        let (session, long_term) = self.history_blocks(Role::Nli, context)?;
        let meta = metadata_text(item, self.settings.max_reviews);
        let meta = truncate_chars(&meta, self.settings.metadata_chars);
        let messages = self.prompts.nli.render(&[
            ("session", &session),
            ("long_term", &long_term),
            ("item_id", &item.id),
            ("item", meta),
        ])?;
        Ok(self.request(Role::Nli, messages))
    }

    /// Scores one item. An unreadable reply is retried once with a repair
    /// prompt; a second failure yields score 0 with rationale `parse_failure`.
    pub fn run_nli(
        &self,
        item: &Item,
        context: &UserContext,
        board: &Blackboard,
    ) -> Result<(NliJudgement, Vec<CallUsage>), AgentError> {
        let request = self.nli_request(item, context)?;
        let label = format!("nli:{}", item.id);
        let (reply, usage) = self.call(&request, &label)?;
        let mut usages = vec![usage];
        let parsed = match parse_nli_reply(&reply) {
            Some(p) => Some(p),
            None => {
                let mut messages = request.messages.clone();
                messages.extend(
                    self.prompts
                        .nli_repair
                        .render(&[("previous_reply", truncate_chars(&reply, 2000))])?,
                );
                let retry = self.request(Role::Nli, messages);
                let (reply, usage) = self.call(&retry, &format!("{label}:repair"))?;
                usages.push(usage);
                parse_nli_reply(&reply)
            }
        };
        let (score, rationale) = parsed.unwrap_or((0.0, PARSE_FAILURE.to_owned()));
        let judgement = NliJudgement {
            item_id: item.id.clone(),
            score,
            rationale,
        };
        board.post(
            Draft::new(Role::Nli, serde_json::to_string(&judgement).expect("judgement serializes"))
                .id(label)
                .score(score),
        )?;
        Ok((judgement, usages))
    }

    /// Without judgements the items are listed as given with no annotations.
    pub fn csa_request(
        &self,
        accepted: &[&Item],
        user_summary: &UserSummary,
        judgements: Option<&[NliJudgement]>,
    ) -> Result<ChatRequest, AgentError> {
        let lines: Vec<String> = match judgements {
            Some(judgements) => {
                let mut scored: Vec<(&Item, &NliJudgement)> = accepted
                    .iter()
                    .filter_map(|item| judgements.iter().find(|j| j.item_id == item.id).map(|j| (*item, j)))
                    .collect();
                scored.sort_by(|a, b| by_score_desc(a.1, b.1));
                scored
                    .into_iter()
                    .map(|(item, j)| self.item_line(item, Some(&format!("alignment {:.2}", j.score))))
                    .collect()
            }
            None => accepted.iter().map(|item| self.item_line(item, None)).collect(),
        };
        let messages = self
            .prompts
            .context_summary
            .render(&[("user_summary", &user_summary.text), ("items", &self.block(lines))])?;
        Ok(self.request(Role::ContextSummary, messages))
    }

    pub fn run_csa(
        &self,
        accepted: &[&Item],
        user_summary: &UserSummary,
        judgements: Option<&[NliJudgement]>,
        board: &Blackboard,
    ) -> Result<(ContextSummary, CallUsage), AgentError> {
        if accepted.is_empty() {
            return Err(AgentError::NoCandidates(Role::ContextSummary));
        }
        let request = self.csa_request(accepted, user_summary, judgements)?;
        let (text, usage) = self.call(&request, "context_summary")?;
        let summary = ContextSummary {
            text: text.trim().to_owned(),
            source_item_ids: accepted.iter().map(|i| i.id.clone()).collect(),
        };
        board.post(
            Draft::new(Role::ContextSummary, serde_json::to_string(&summary).expect("summary serializes"))
                .id("context_summary"),
        )?;
        Ok((summary, usage))
    }

    pub fn candidate_block(&self, candidates: &[&Item]) -> String {
        self.block(candidates.iter().map(|i| self.item_line(i, None)).collect())
    }

    pub fn ira_request(
        &self,
        user_summary: &UserSummary,
        context_summary: Option<&ContextSummary>,
        candidates: &[&Item],
    ) -> Result<ChatRequest, AgentError> {
        let ctx = context_summary.map_or(NONE_BLOCK, |c| c.text.as_str());
        let messages = self.prompts.item_ranker.render(&[
            ("user_summary", &user_summary.text),
            ("context_summary", ctx),
            ("candidates", &self.candidate_block(candidates)),
        ])?;
        Ok(self.request(Role::ItemRanker, messages))
    }

    pub fn run_ira(
        &self,
        user_summary: &UserSummary,
        context_summary: Option<&ContextSummary>,
        candidates: &[&Item],
        retrieval_order: &[String],
        board: &Blackboard,
    ) -> Result<(Ranking, CallUsage), AgentError> {
        if candidates.is_empty() {
            return Err(AgentError::NoCandidates(Role::ItemRanker));
        }
        let request = self.ira_request(user_summary, context_summary, candidates)?;
        self.finish_ranking(&request, candidates, retrieval_order, board)
    }

    /// Prompt shared by the recency and retrieval baselines; only the
    /// history block differs between them.
    pub fn baseline_request(&self, history: &[&Item], candidates: &[&Item]) -> Result<ChatRequest, AgentError> {
        let history = self.block(history.iter().map(|i| self.item_line(i, None)).collect());
        let messages = self
            .prompts
            .baseline_ranker
            .render(&[("history", &history), ("candidates", &self.candidate_block(candidates))])?;
        Ok(self.request(Role::ItemRanker, messages))
    }

    pub fn run_baseline(
        &self,
        history: &[&Item],
        candidates: &[&Item],
        retrieval_order: &[String],
        board: &Blackboard,
    ) -> Result<(Ranking, CallUsage), AgentError> {
        if candidates.is_empty() {
            return Err(AgentError::NoCandidates(Role::ItemRanker));
        }
        let request = self.baseline_request(history, candidates)?;
        self.finish_ranking(&request, candidates, retrieval_order, board)
    }

    fn finish_ranking(
        &self,
        request: &ChatRequest,
        candidates: &[&Item],
        retrieval_order: &[String],
        board: &Blackboard,
    ) -> Result<(Ranking, CallUsage), AgentError> {
        let (raw, usage) = self.call(request, "item_ranker")?;
        let candidate_ids: Vec<String> = candidates.iter().map(|i| i.id.clone()).collect();
        let record = RankerRecord {
            ranking: parse_ranking(&raw, &candidate_ids, retrieval_order),
            explanation: ranking_explanation(&raw),
            candidates: candidate_ids,
            retrieval_order: retrieval_order.to_vec(),
            raw,
        };
        board.post(
            Draft::new(Role::ItemRanker, serde_json::to_string(&record).expect("record serializes")).id("item_ranker"),
        )?;
        Ok((
            Ranking {
                item_ids: record.ranking,
                explanation: record.explanation,
            },
            usage,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j(id: &str, score: f64) -> NliJudgement {
        NliJudgement {
            item_id: id.into(),
            score,
            rationale: String::new(),
        }
    }

    #[test]
    fn threshold_filter() {
        let js = [j("a", 0.9), j("b", 0.4), j("c", 0.5)];
        assert_eq!(filter_aligned(&js, 0.5, 0), ["a", "c"]);
        assert_eq!(filter_aligned(&js, 0.0, 0), ["a", "c", "b"]);
        assert!(filter_aligned(&js, 0.95, 0).is_empty());
    }

    #[test]
    fn fallback_takes_top_m() {
        let js = [j("d", 0.1), j("a", 0.1), j("c", 0.1), j("b", 0.1)];
        assert_eq!(filter_aligned(&js, 0.5, 3), ["a", "b", "c"]);
        assert_eq!(filter_aligned(&js[..2], 0.5, 3), ["a", "d"]);
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        assert_eq!(truncate_chars("héllo", 2), "hé");
        assert_eq!(truncate_chars("hi", 5), "hi");
    }
}
