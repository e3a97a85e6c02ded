//! An offline stand-in for the chat model that follows the built-in prompts
//! literally, using token overlap in place of judgement.
//!
//! It reads the tagged blocks the default templates produce (`<session>`,
//! `<candidates>`, ...) and answers in the format each prompt asks for. Used
//! for desk-scale runs and for wiring checks; it says nothing about how a
//! real model would rank.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;

use super::{ChatRequest, MockBackend};
use crate::blackboard::Role;
use crate::embed::tokenize;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "the", "of", "for", "with", "in", "on", "to", "is", "it", "this", "that", "my", "i", "very",
    "title", "description", "review", "alignment", "none",
];

const SESSION_MARK: &str = "Current session interest:";
const LONG_TERM_MARK: &str = "Long-term interests:";
const SUMMARY_TOKENS: usize = 8;

/// Content tokens of a text: lowercase, without stopwords or numbers.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .filter(|t| !STOPWORDS.contains(&t.as_str()) && !t.chars().all(|c| c.is_ascii_digit() || c == '.'))
        .collect()
}

fn token_set(text: &str) -> BTreeSet<String> {
    content_tokens(text).into_iter().collect()
}

/// Text between `<tag...>` and `</tag>` in the last user message.
fn block<'a>(prompt: &'a str, tag: &str) -> Option<&'a str> {
    let open = prompt.find(&format!("<{tag}"))?;
    let body_start = open + prompt[open..].find('>')? + 1;
    let close = body_start + prompt[body_start..].find(&format!("</{tag}>"))?;
    Some(prompt[body_start..close].trim())
}

/// `(id, annotation score, text)` for each `- [id] (...) text` line.
fn item_lines(block: &str) -> Vec<(String, Option<f64>, String)> {
    block
        .lines()
        .filter_map(|line| {
            let rest = line.trim().strip_prefix("- [")?;
            let close = rest.find(']')?;
            let id = rest[..close].to_owned();
            let mut text = rest[close + 1..].trim();
            let mut score = None;
            if let Some(inner) = text.strip_prefix('(') {
                if let Some(end) = inner.find(')') {
                    score = inner[..end]
                        .split_whitespace()
                        .last()
                        .and_then(|s| s.parse::<f64>().ok());
                    text = inner[end + 1..].trim();
                }
            }
            Some((id, score, text.to_owned()))
        })
        .collect()
}

fn top_tokens(weights: &BTreeMap<String, f64>, n: usize) -> Vec<String> {
    let mut v: Vec<(&String, &f64)> = weights.iter().filter(|(_, w)| **w > 0.0).collect();
    v.sort_by(|a, b| b.1.partial_cmp(a.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(b.0)));
    v.into_iter().take(n).map(|(t, _)| t.clone()).collect()
}

fn frequencies(lines: &[(String, Option<f64>, String)]) -> BTreeMap<String, f64> {
    let mut counts = BTreeMap::new();
    for (_, _, text) in lines {
        for token in token_set(text) {
            *counts.entry(token).or_insert(0.0) += 1.0;
        }
    }
    counts
}

fn overlap(item: &BTreeSet<String>, reference: &BTreeSet<String>) -> usize {
    item.intersection(reference).count()
}

fn user_understanding(prompt: &str) -> String {
    let session = item_lines(block(prompt, "session").unwrap_or_default());
    let long_term = item_lines(block(prompt, "long_term").unwrap_or_default());
    format!(
        "{SESSION_MARK} {}.\n{LONG_TERM_MARK} {}.",
        top_tokens(&frequencies(&session), SUMMARY_TOKENS).join(", "),
        top_tokens(&frequencies(&long_term), SUMMARY_TOKENS).join(", ")
    )
}

/// Mean, over the item's tokens, of the share of session items containing
/// the token. Attributes the whole session shares count fully; a word seen
/// once in a long session counts little.
fn nli(prompt: &str) -> String {
    let session: Vec<BTreeSet<String>> = item_lines(block(prompt, "session").unwrap_or_default())
        .iter()
        .map(|(_, _, t)| token_set(t))
        .collect();
    let item = token_set(block(prompt, "item").unwrap_or_default());
    let share = |t: &String| session.iter().filter(|s| s.contains(t)).count() as f64 / session.len().max(1) as f64;
    let score = if item.is_empty() {
        0.0
    } else {
        item.iter().map(share).sum::<f64>() / item.len() as f64
    };
    let shared: Vec<&str> = item.iter().filter(|t| share(t) > 0.0).map(|t| t.as_str()).collect();
    let rationale = if shared.is_empty() {
        "nothing in common with the session".to_owned()
    } else {
        format!("shares {} with the session", shared.join(", "))
    };
    json!({ "score": (score * 1000.0).round() / 1000.0, "rationale": rationale }).to_string()
}

/// Current-session part of a user summary written by [`user_understanding`],
/// or the whole text for any other summary.
fn session_prior(summary: &str) -> BTreeSet<String> {
    match summary.find(SESSION_MARK) {
        Some(at) => {
            let rest = &summary[at + SESSION_MARK.len()..];
            token_set(rest.split(LONG_TERM_MARK).next().unwrap_or(rest))
        }
        None => token_set(summary),
    }
}

/// Token weights summed over items. Alignment annotations are absolute
/// scores and are used as they are. Without them each item is weighed by its
/// overlap with the summary's current-session prior, relative to the list
/// average, so that tokens common to the whole list cancel out.
fn context_summary(prompt: &str) -> String {
    let prior = session_prior(block(prompt, "user_summary").unwrap_or_default());
    let lines = item_lines(block(prompt, "items").unwrap_or_default());
    let annotated = lines.iter().any(|(_, score, _)| score.is_some());
    let items: Vec<(f64, BTreeSet<String>)> = lines
        .into_iter()
        .map(|(_, score, text)| {
            let tokens = token_set(&text);
            let w = score.unwrap_or_else(|| {
                if tokens.is_empty() {
                    0.0
                } else {
                    overlap(&tokens, &prior) as f64 / tokens.len() as f64
                }
            });
            (w, tokens)
        })
        .collect();
    let baseline = if annotated {
        0.0
    } else {
        items.iter().map(|(w, _)| w).sum::<f64>() / items.len().max(1) as f64
    };
    let mut weights = BTreeMap::new();
    for (w, tokens) in &items {
        for t in tokens {
            *weights.entry(t.clone()).or_insert(0.0) += w - baseline;
        }
    }
    format!("Relevant themes: {}.", top_tokens(&weights, SUMMARY_TOKENS).join(", "))
}

fn rank_by(candidates: Vec<(String, Option<f64>, String)>, score: impl Fn(&BTreeSet<String>) -> usize) -> String {
    let mut scored: Vec<(usize, usize, String)> = candidates
        .into_iter()
        .enumerate()
        .map(|(pos, (id, _, text))| (score(&token_set(&text)), pos, id))
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let best = scored.first().map(|s| s.2.clone()).unwrap_or_default();
    let ranking: Vec<String> = scored.into_iter().map(|s| s.2).collect();
    json!({ "ranking": ranking, "explanation": format!("{best} overlaps most with what the user wants") }).to_string()
}

fn item_ranker(prompt: &str) -> String {
    let candidates = item_lines(block(prompt, "candidates").unwrap_or_default());
    if let Some(history) = block(prompt, "history") {
        let history: BTreeSet<String> = item_lines(history).iter().flat_map(|(_, _, t)| token_set(t)).collect();
        return rank_by(candidates, |c| overlap(c, &history));
    }
    let user = token_set(block(prompt, "user_summary").unwrap_or_default());
    let context = token_set(block(prompt, "context_summary").unwrap_or_default());
    rank_by(candidates, |c| overlap(c, &user) + overlap(c, &context))
}

/// Answers a request produced from the default templates.
pub fn respond(request: &ChatRequest) -> String {
    let prompt = request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == super::ChatRole::User)
        .map(|m| m.content.as_str())
        .unwrap_or_default();
    match request.agent {
        Role::UserUnderstanding => user_understanding(prompt),
        // The repair prompt is appended after the original; answer the original.
        Role::Nli => nli(&request.prompt_text()),
        Role::ContextSummary => context_summary(prompt),
        Role::ItemRanker => item_ranker(prompt),
    }
}

/// A non-strict mock whose unscripted replies come from [`respond`].
pub fn overlap_backend() -> MockBackend {
    MockBackend::with_responder(respond)
}
