//! Embeddings, cosine similarity and exact top-k recall.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{metadata_text, Catalog, UserContext};

pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_K: usize = 50;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("context references items missing from the catalog: {}", .0.join(", "))]
    UnknownItems(Vec<String>),
    #[error("duplicate id {0:?} in vector index")]
    DuplicateId(String),
    #[error("vector cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Maps text into a fixed-dimension vector space.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> EmbeddingVector;
}

/// Hashed bag-of-tokens: lowercase, split on non-alphanumerics, FNV-1a hash
/// each token into one of `dim` buckets, L2-normalize the counts.
#[derive(Debug, Clone)]
pub struct HashedBagOfTokens {
    dim: usize,
}

impl HashedBagOfTokens {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashedBagOfTokens { dim }
    }
}

impl Default for HashedBagOfTokens {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl Embedder for HashedBagOfTokens {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut counts = vec![0.0; self.dim];
        for token in tokenize(text) {
            counts[(fnv1a(token.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            counts.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector(counts)
    }
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Embeds the metadata of the `max_items` most recent interactions
/// (session first, then long-term, newest first).
pub fn embed_user(
    embedder: &dyn Embedder,
    catalog: &Catalog,
    context: &UserContext,
    max_items: usize,
    max_reviews: usize,
) -> Result<EmbeddingVector, EmbedError> {
    let missing = context.unknown_items(catalog);
    if !missing.is_empty() {
        return Err(EmbedError::UnknownItems(missing));
    }
    let text = context
        .newest_first()
        .take(max_items)
        .filter_map(|i| catalog.get(&i.item_id))
        .map(|item| metadata_text(item, max_reviews))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(embedder.embed_text(&text))
}

/// `dot(a, b) / (|a| |b|)`, or 0 when either norm is 0.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub vector: EmbeddingVector,
}

/// Immutable id/vector table scanned exhaustively at query time.
#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
}

impl VectorIndex {
    pub fn new(entries: Vec<IndexEntry>) -> Result<Self, EmbedError> {
        let dim = entries.first().map_or(0, |e| e.vector.dim());
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if e.vector.dim() != dim {
                return Err(EmbedError::DimensionMismatch {
                    left: dim,
                    right: e.vector.dim(),
                });
            }
            if !seen.insert(e.id.as_str()) {
                return Err(EmbedError::DuplicateId(e.id.clone()));
            }
        }
        Ok(VectorIndex { dim, entries })
    }

    pub fn build(
        embedder: &dyn Embedder,
        catalog: &Catalog,
        max_reviews: usize,
    ) -> Result<Self, EmbedError> {
        Self::new(
            catalog
                .items()
                .iter()
                .map(|item| IndexEntry {
                    id: item.id.clone(),
                    vector: embedder.embed_text(&metadata_text(item, max_reviews)),
                })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Writes the index as JSONL of `{id, vector}`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).map_err(|e| EmbedError::Cache(e.to_string()))?);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| EmbedError::Cache(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let text = fs::read_to_string(path).map_err(|e| EmbedError::Cache(e.to_string()))?;
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                serde_json::from_str(l)
                    .map_err(|e| EmbedError::Cache(format!("line {}: {e}", n + 1)))
            })
            .collect::<Result<Vec<IndexEntry>, _>>()?;
        Self::new(entries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: String,
    pub score: f64,
}

/// Descending by score, ties by id ascending.
pub fn rank_order(a: &Scored, b: &Scored) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.id.cmp(&b.id))
}

/// Exact top-k by cosine similarity. Returns fewer than `k` entries when the
/// index is smaller, and nothing for an empty index.
pub fn retrieve_topk(
    index: &VectorIndex,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<Scored>, EmbedError> {
    if index.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let mut scored = index
        .entries
        .iter()
        .map(|e| {
            Ok(Scored {
                id: e.id.clone(),
                score: cosine(&e.vector, query)?,
            })
        })
        .collect::<Result<Vec<_>, EmbedError>>()?;
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Interaction, Item};

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector(values.to_vec())
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let e = HashedBagOfTokens::default();
        assert_eq!(e.embed_text(""), EmbeddingVector::zeros(DEFAULT_DIM));
        assert_eq!(e.embed_text("  --  "), EmbeddingVector::zeros(DEFAULT_DIM));
    }

    #[test]
    fn embedding_is_deterministic_and_order_free() {
        let e = HashedBagOfTokens::default();
        assert_eq!(e.embed_text("red shoe"), e.embed_text("red shoe"));
        assert_eq!(e.embed_text("red shoe"), e.embed_text("shoe red"));
        assert_eq!(e.embed_text("Red SHOE"), e.embed_text("red, shoe!"));
        assert!((e.embed_text("red shoe").norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_conventions() {
        let a = v(&[0.3, -0.2, 0.9]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert!(matches!(
            cosine(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }

    fn index_from(scores: &[(&str, [f64; 2])]) -> VectorIndex {
        VectorIndex::new(
            scores
                .iter()
                .map(|(id, vals)| IndexEntry {
                    id: (*id).into(),
                    vector: v(vals),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn ties_break_by_id() {
        // a and c have cosine 0.9 to the query, b has 0.5.
        let s09 = (1.0f64 - 0.81).sqrt();
        let s05 = (1.0f64 - 0.25).sqrt();
        let index = index_from(&[("c", [0.9, s09]), ("b", [0.5, s05]), ("a", [0.9, s09])]);
        let got = retrieve_topk(&index, &v(&[1.0, 0.0]), 2).unwrap();
        let ids: Vec<_> = got.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert!((got[0].score - 0.9).abs() < 1e-12);

        let all = retrieve_topk(&index, &v(&[1.0, 0.0]), 10).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all[2].id, "b");
        assert_eq!(retrieve_topk(&index, &v(&[1.0, 0.0]), 1).unwrap()[0].id, "a");
    }

    #[test]
    fn empty_index_gives_empty_recall() {
        let got = retrieve_topk(&VectorIndex::default(), &v(&[1.0]), 5).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn index_rejects_duplicates_and_ragged_dims() {
        let dup = vec![
            IndexEntry { id: "a".into(), vector: v(&[1.0]) },
            IndexEntry { id: "a".into(), vector: v(&[1.0]) },
        ];
        assert!(matches!(VectorIndex::new(dup), Err(EmbedError::DuplicateId(_))));
        let ragged = vec![
            IndexEntry { id: "a".into(), vector: v(&[1.0]) },
            IndexEntry { id: "b".into(), vector: v(&[1.0, 0.0]) },
        ];
        assert!(VectorIndex::new(ragged).is_err());
    }

    fn catalog() -> Catalog {
        Catalog::from_items(vec![
            Item::new("a", "vegan leather tote"),
            Item::new("b", "checkered shoulder bag"),
            Item::new("c", "usb cable"),
        ])
        .unwrap()
    }

    fn ctx(session: &[&str], long_term: &[&str]) -> UserContext {
        let mk = |ids: &[&str], base: u64| {
            ids.iter()
                .enumerate()
                .map(|(n, id)| Interaction::new("u", *id, base + n as u64))
                .collect()
        };
        UserContext {
            user_id: "u".into(),
            long_term: mk(long_term, 0),
            session: mk(session, 100),
        }
    }

    #[test]
    fn user_embedding_rules() {
        let e = HashedBagOfTokens::default();
        let cat = catalog();
        let single = embed_user(&e, &cat, &ctx(&["a"], &[]), 10, 3).unwrap();
        assert_eq!(single, e.embed_text(&metadata_text(cat.get("a").unwrap(), 3)));

        // Only the two newest (session "b", then long-term "c") count.
        let capped = embed_user(&e, &cat, &ctx(&["b"], &["a", "c"]), 2, 3).unwrap();
        let expected = e.embed_text(&format!(
            "{}\n{}",
            metadata_text(cat.get("b").unwrap(), 3),
            metadata_text(cat.get("c").unwrap(), 3)
        ));
        assert_eq!(capped, expected);

        let twice = embed_user(&e, &cat, &ctx(&["a", "a"], &[]), 10, 3).unwrap();
        assert!((cosine(&twice, &single).unwrap() - 1.0).abs() < 1e-12);

        assert!(matches!(
            embed_user(&e, &cat, &ctx(&["zzz"], &[]), 10, 3),
            Err(EmbedError::UnknownItems(_))
        ));
    }

    #[test]
    fn cache_round_trip() {
        let e = HashedBagOfTokens::new(16);
        let index = VectorIndex::build(&e, &catalog(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.jsonl");
        index.save(&path).unwrap();
        let loaded = VectorIndex::load(&path).unwrap();
        assert_eq!(loaded.entries(), index.entries());
    }
}
