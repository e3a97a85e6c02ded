//! Lenient readers for model replies.

use std::collections::HashSet;

use serde_json::{Deserializer, Value};

/// JSON values embedded in `raw` that start at one of `openers`, in order of
/// appearance. Text between values is skipped.
fn embedded_values<'a>(raw: &'a str, opener: char) -> impl Iterator<Item = Value> + 'a {
    raw.match_indices(opener).filter_map(move |(at, _)| {
        Deserializer::from_str(&raw[at..])
            .into_iter::<Value>()
            .next()
            .and_then(Result::ok)
    })
}

/// First JSON array in `raw` whose elements are all strings.
pub fn first_string_array(raw: &str) -> Option<Vec<String>> {
    embedded_values(raw, '[').find_map(|v| match v {
        Value::Array(items) => items
            .into_iter()
            .map(|i| match i {
                Value::String(s) => Some(s),
                _ => None,
            })
            .collect(),
        _ => None,
    })
}

/// Turns a ranker reply into a permutation of `candidate_ids`.
///
/// Ids from the first JSON string array are matched exactly, or else by a
/// unique case-insensitive match; duplicates and foreign ids are dropped and
/// whatever is left unranked is appended in `retrieval_order`.
pub fn parse_ranking(raw: &str, candidate_ids: &[String], retrieval_order: &[String]) -> Vec<String> {
    let known: HashSet<&str> = candidate_ids.iter().map(String::as_str).collect();
    let mut placed: HashSet<&str> = HashSet::with_capacity(candidate_ids.len());
    let mut out: Vec<String> = Vec::with_capacity(candidate_ids.len());

    for wanted in first_string_array(raw).unwrap_or_default() {
        let matched = if known.contains(wanted.as_str()) {
            candidate_ids.iter().find(|c| **c == wanted)
        } else {
            let folded = wanted.trim().to_lowercase();
            let mut hits = candidate_ids.iter().filter(|c| c.to_lowercase() == folded);
            match (hits.next(), hits.next()) {
                (Some(only), None) => Some(only),
                _ => None,
            }
        };
        if let Some(id) = matched {
            if placed.insert(id.as_str()) {
                out.push(id.clone());
            }
        }
    }

    for id in retrieval_order.iter().chain(candidate_ids) {
        if known.contains(id.as_str()) && placed.insert(id.as_str()) {
            out.push(id.clone());
        }
    }
    out
}

/// The `explanation` field of the first JSON object that has one, or the
/// trimmed reply.
pub fn ranking_explanation(raw: &str) -> String {
    embedded_values(raw, '{')
        .find_map(|v| v.get("explanation").and_then(Value::as_str).map(str::to_owned))
        .unwrap_or_else(|| raw.trim().to_owned())
}

/// Reads `{"score": number, "rationale": string}` from an inference reply.
/// The score is clamped to [0, 1]; a numeric string is accepted, a
/// non-finite value is not.
pub fn parse_nli_reply(raw: &str) -> Option<(f64, String)> {
    embedded_values(raw, '{').find_map(|v| {
        let score = match v.get("score")? {
            Value::Number(n) => n.as_f64()?,
            Value::String(s) => s.trim().parse::<f64>().ok()?,
            _ => return None,
        };
        if !score.is_finite() {
            return None;
        }
        let rationale = v
            .get("rationale")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_owned();
        Some((score.clamp(0.0, 1.0), rationale))
    })
}
