//! Single-relevant ranking metrics.

/// 1-based position of `ground_truth` in `ranking`.
pub fn rank_of(ranking: &[String], ground_truth: &str) -> Option<usize> {
    ranking.iter().position(|id| id == ground_truth).map(|p| p + 1)
}

/// Binary NDCG with one relevant item: `1 / log2(rank + 1)` when the ground
/// truth sits within the top `k`, else 0. The ideal DCG is 1.
pub fn ndcg_at_k(ranking: &[String], ground_truth: &str, k: usize) -> f64 {
    match rank_of(ranking, ground_truth) {
        Some(rank) if rank <= k => 1.0 / ((rank + 1) as f64).log2(),
        _ => 0.0,
    }
}

pub fn hit_at_k(ranking: &[String], ground_truth: &str, k: usize) -> u8 {
    match rank_of(ranking, ground_truth) {
        Some(rank) if rank <= k => 1,
        _ => 0,
    }
}
