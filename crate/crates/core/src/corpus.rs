//! Items, interactions and user contexts.
//!
//! Catalogs and interaction logs are line-delimited JSON. A user's log is
//! split into a long-term part and a current session by looking for the last
//! gap of at least `session_gap` seconds between consecutive interactions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SESSION_GAP: u64 = 3600;
pub const DEFAULT_MAX_REVIEWS: usize = 3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate item id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("interactions reference unknown item ids: {}", .0.join(", "))]
    UnknownItems(Vec<String>),
    #[error("session_gap must be positive")]
    InvalidSessionGap,
    #[error("user {0:?} has an empty session")]
    EmptySession(String),
}

/// A recommendable unit together with its textual metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub reviews: Vec<String>,
    #[serde(default)]
    pub category: String,
}

impl Item {
    pub fn new(id: impl Into<String>, title: impl Into<String>) -> Self {
        Item {
            id: id.into(),
            title: title.into(),
            description: String::new(),
            reviews: Vec::new(),
            category: String::new(),
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn with_reviews<I, S>(mut self, reviews: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.reviews = reviews.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = category.into();
        self
    }
}

/// Labeled concatenation of an item's title, description and its first
/// `max_reviews` reviews.
pub fn metadata_text(item: &Item, max_reviews: usize) -> String {
    let mut out = format!("Title: {}\nDescription: {}", item.title, item.description);
    for (n, review) in item.reviews.iter().take(max_reviews).enumerate() {
        out.push_str(&format!("\nReview {}: {}", n + 1, review));
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    items: Vec<Item>,
    by_id: HashMap<String, usize>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a catalog, rejecting empty/duplicate ids and empty titles.
    /// Errors carry the 1-based position of the offending item.
    pub fn from_items(items: impl IntoIterator<Item = Item>) -> Result<Self, CorpusError> {
        let mut catalog = Catalog::new();
        for (n, item) in items.into_iter().enumerate() {
            catalog.insert(item, n + 1)?;
        }
        Ok(catalog)
    }

    fn insert(&mut self, item: Item, line: usize) -> Result<(), CorpusError> {
        if item.id.is_empty() {
            return Err(CorpusError::Malformed {
                line,
                message: "item id must be non-empty".into(),
            });
        }
        if item.title.is_empty() {
            return Err(CorpusError::Malformed {
                line,
                message: format!("item {:?} has an empty title", item.id),
            });
        }
        if self.by_id.contains_key(&item.id) {
            return Err(CorpusError::DuplicateId { line, id: item.id });
        }
        self.by_id.insert(item.id.clone(), self.items.len());
        self.items.push(item);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items in file order.
    pub fn items(&self) -> &[Item] {
        &self.items
    }
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, CorpusError> {
    let path = path.as_ref();
    let text = read(path)?;
    parse_catalog(&text)
}

pub fn parse_catalog(text: &str) -> Result<Catalog, CorpusError> {
    let mut catalog = Catalog::new();
    for (line, item) in parse_jsonl::<Item>(text)? {
        catalog.insert(item, line)?;
    }
    Ok(catalog)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_text: Option<String>,
}

impl Interaction {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: u64) -> Self {
        Interaction {
            user_id: user_id.into(),
            item_id: item_id.into(),
            timestamp,
            rating: None,
            review_text: None,
        }
    }
}

pub fn load_interactions(path: impl AsRef<Path>) -> Result<Vec<Interaction>, CorpusError> {
    let path = path.as_ref();
    let text = read(path)?;
    parse_interactions(&text)
}

pub fn parse_interactions(text: &str) -> Result<Vec<Interaction>, CorpusError> {
    let mut out = Vec::new();
    for (line, interaction) in parse_jsonl::<Interaction>(text)? {
        if let Some(r) = interaction.rating {
            if !(1.0..=5.0).contains(&r) {
                return Err(CorpusError::Malformed {
                    line,
                    message: format!("rating {r} outside [1, 5]"),
                });
            }
        }
        out.push(interaction);
    }
    Ok(out)
}

/// A user's history split into long-term context and current session, both
/// in chronological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserContext {
    pub user_id: String,
    pub long_term: Vec<Interaction>,
    pub session: Vec<Interaction>,
}

impl UserContext {
    /// All interactions, newest first: session before long-term.
    pub fn newest_first(&self) -> impl Iterator<Item = &Interaction> {
        self.session.iter().rev().chain(self.long_term.iter().rev())
    }

    pub fn len(&self) -> usize {
        self.long_term.len() + self.session.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn item_ids(&self) -> BTreeSet<&str> {
        self.newest_first().map(|i| i.item_id.as_str()).collect()
    }

    /// Ids of items this context references that are missing from `catalog`.
    pub fn unknown_items(&self, catalog: &Catalog) -> Vec<String> {
        let missing: BTreeSet<&str> = self
            .newest_first()
            .map(|i| i.item_id.as_str())
            .filter(|id| !catalog.contains(id))
            .collect();
        missing.into_iter().map(str::to_owned).collect()
    }
}

/// Groups the log per user (output sorted by user id), orders each user's
/// interactions by `(timestamp, item_id)` and takes the maximal suffix whose
/// consecutive gaps are all below `session_gap` as the session.
pub fn build_contexts(
    log: &[Interaction],
    catalog: &Catalog,
    session_gap: u64,
) -> Result<Vec<UserContext>, CorpusError> {
    if session_gap == 0 {
        return Err(CorpusError::InvalidSessionGap);
    }
    let unknown: BTreeSet<&str> = log
        .iter()
        .map(|i| i.item_id.as_str())
        .filter(|id| !catalog.contains(id))
        .collect();
    if !unknown.is_empty() {
        return Err(CorpusError::UnknownItems(
            unknown.into_iter().map(str::to_owned).collect(),
        ));
    }

    let mut per_user: BTreeMap<&str, Vec<Interaction>> = BTreeMap::new();
    for interaction in log {
        per_user
            .entry(interaction.user_id.as_str())
            .or_default()
            .push(interaction.clone());
    }

    Ok(per_user
        .into_iter()
        .map(|(user, mut history)| {
            history.sort_by(|a, b| {
                a.timestamp
                    .cmp(&b.timestamp)
                    .then_with(|| a.item_id.cmp(&b.item_id))
            });
            let mut start = history.len().saturating_sub(1);
            while start > 0 && history[start].timestamp - history[start - 1].timestamp < session_gap
            {
                start -= 1;
            }
            let session = history.split_off(start);
            UserContext {
                user_id: user.to_owned(),
                long_term: history,
                session,
            }
        })
        .collect())
}

/// A context with its final session interaction held out as ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub context: UserContext,
    pub ground_truth: String,
}

/// Leave-last-out split. Earlier interactions with the held-out item are
/// dropped as well so the ground truth never appears in the remaining history.
pub fn holdout_split(context: &UserContext) -> Result<EvalInstance, CorpusError> {
    let mut context = context.clone();
    let last = context
        .session
        .pop()
        .ok_or_else(|| CorpusError::EmptySession(context.user_id.clone()))?;
    context.session.retain(|i| i.item_id != last.item_id);
    context.long_term.retain(|i| i.item_id != last.item_id);
    Ok(EvalInstance {
        context,
        ground_truth: last.item_id,
    })
}

/// Holds out the last interaction of every context that still has some
/// history left afterwards.
pub fn eval_instances(contexts: &[UserContext]) -> Vec<EvalInstance> {
    contexts
        .iter()
        .filter_map(|c| holdout_split(c).ok())
        .filter(|i| !i.context.is_empty())
        .collect()
}

pub fn load_contexts(path: impl AsRef<Path>) -> Result<Vec<UserContext>, CorpusError> {
    let text = read(path.as_ref())?;
    Ok(parse_jsonl::<UserContext>(&text)?
        .into_iter()
        .map(|(_, c)| c)
        .collect())
}

pub fn contexts_to_jsonl(contexts: &[UserContext]) -> String {
    let mut out = String::new();
    for c in contexts {
        out.push_str(&serde_json::to_string(c).expect("context serializes"));
        out.push('\n');
    }
    out
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(
    text: &str,
) -> Result<Vec<(usize, T)>, CorpusError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push((n + 1, value));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog_of(ids: &[&str]) -> Catalog {
        Catalog::from_items(ids.iter().map(|id| Item::new(*id, format!("title {id}")))).unwrap()
    }

    fn item_line(id: &str) -> String {
        format!(r#"{{"id":"{id}","title":"T {id}","description":"d","reviews":[],"category":"c"}}"#)
    }

    #[test]
    fn loads_three_items() {
        let text = ["a", "b", "c"].map(item_line).join("\n");
        assert_eq!(parse_catalog(&text).unwrap().len(), 3);
    }

    #[test]
    fn duplicate_id_names_later_line() {
        let ids = ["a1", "b001", "c", "d", "e", "f", "b001"];
        let text = ids.map(item_line).join("\n");
        match parse_catalog(&text) {
            Err(CorpusError::DuplicateId { line, id }) => {
                assert_eq!(line, 7);
                assert_eq!(id, "b001");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_catalog() {
        assert!(parse_catalog("").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\nnot json", item_line("a"));
        assert!(matches!(
            parse_catalog(&text),
            Err(CorpusError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_catalog("/nonexistent/catalog.jsonl"),
            Err(CorpusError::Io { .. })
        ));
    }

    #[test]
    fn gap_rule_splits_session() {
        let catalog = catalog_of(&["a", "b", "c", "d"]);
        let log = vec![
            Interaction::new("u", "c", 100000),
            Interaction::new("u", "a", 10),
            Interaction::new("u", "d", 100010),
            Interaction::new("u", "b", 20),
        ];
        let ctx = &build_contexts(&log, &catalog, 3600).unwrap()[0];
        let ts = |v: &[Interaction]| v.iter().map(|i| i.timestamp).collect::<Vec<_>>();
        assert_eq!(ts(&ctx.long_term), vec![10, 20]);
        assert_eq!(ts(&ctx.session), vec![100000, 100010]);
    }

    #[test]
    fn single_interaction_is_session() {
        let catalog = catalog_of(&["a"]);
        let ctx = &build_contexts(&[Interaction::new("u", "a", 5)], &catalog, 3600).unwrap()[0];
        assert!(ctx.long_term.is_empty());
        assert_eq!(ctx.session.len(), 1);
    }

    #[test]
    fn timestamp_ties_break_by_item_id() {
        let catalog = catalog_of(&["a", "b"]);
        let log = vec![Interaction::new("u", "b", 5), Interaction::new("u", "a", 5)];
        let ctx = &build_contexts(&log, &catalog, 3600).unwrap()[0];
        assert_eq!(ctx.session[0].item_id, "a");
    }

    #[test]
    fn unknown_items_are_listed() {
        let catalog = catalog_of(&["a"]);
        let log = vec![
            Interaction::new("u", "zz", 1),
            Interaction::new("u", "a", 2),
            Interaction::new("v", "yy", 3),
        ];
        match build_contexts(&log, &catalog, 3600) {
            Err(CorpusError::UnknownItems(ids)) => assert_eq!(ids, vec!["yy", "zz"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_gap_rejected() {
        assert!(matches!(
            build_contexts(&[], &Catalog::new(), 0),
            Err(CorpusError::InvalidSessionGap)
        ));
    }

    fn ctx_with_session(ids: &[&str]) -> UserContext {
        UserContext {
            user_id: "u".into(),
            long_term: vec![],
            session: ids
                .iter()
                .enumerate()
                .map(|(t, id)| Interaction::new("u", *id, t as u64))
                .collect(),
        }
    }

    #[test]
    fn holdout_removes_last() {
        let inst = holdout_split(&ctx_with_session(&["a", "b", "c"])).unwrap();
        assert_eq!(inst.ground_truth, "c");
        let ids: Vec<_> = inst.context.session.iter().map(|i| &i.item_id).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn holdout_of_single_leaves_empty_session() {
        let inst = holdout_split(&ctx_with_session(&["a"])).unwrap();
        assert_eq!(inst.ground_truth, "a");
        assert!(inst.context.session.is_empty());
    }

    #[test]
    fn holdout_twice() {
        let first = holdout_split(&ctx_with_session(&["a", "b"])).unwrap();
        let second = holdout_split(&first.context).unwrap();
        assert_eq!((first.ground_truth.as_str(), second.ground_truth.as_str()), ("b", "a"));
        assert!(matches!(
            holdout_split(&second.context),
            Err(CorpusError::EmptySession(_))
        ));
    }

    #[test]
    fn holdout_drops_repeats_of_ground_truth() {
        let inst = holdout_split(&ctx_with_session(&["a", "b", "a"])).unwrap();
        assert_eq!(inst.ground_truth, "a");
        assert!(!inst.context.item_ids().contains("a"));
    }

    #[test]
    fn metadata_text_rules() {
        let bare = Item::new("x", "Tote").with_description("A bag");
        assert_eq!(metadata_text(&bare, 3), "Title: Tote\nDescription: A bag");

        let reviewed = bare.clone().with_reviews(["r1", "r2", "r3", "r4", "r5"]);
        let text = metadata_text(&reviewed, 2);
        assert_eq!(text.matches("\nReview ").count(), 2);
        assert!(text.ends_with("Review 2: r2"));
        assert_eq!(text, metadata_text(&reviewed, 2));
    }
}
