//! Candidate pools for closed-pool evaluation.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::EvalError;
use crate::corpus::{Catalog, EvalInstance, Item};
use crate::embed::{embed_user, retrieve_topk, Embedder, VectorIndex};

/// Stable per-user seed derived from the master seed.
pub fn user_seed(master: u64, user_id: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(master.to_le_bytes())
        .chain_update(user_id.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Hex digest of an ordered list of item ids.
pub fn pool_digest(pool: &[Item]) -> String {
    let mut hasher = Sha256::new();
    for item in pool {
        hasher.update((item.id.len() as u64).to_le_bytes());
        hasher.update(item.id.as_bytes());
    }
    hex::encode(hasher.finalize())
}

pub struct PoolBuilder<'a> {
    pub catalog: &'a Catalog,
    pub index: &'a VectorIndex,
    pub embedder: &'a dyn Embedder,
    /// Recall size used to find hard negatives.
    pub k: usize,
    pub max_history_items: usize,
    pub max_reviews: usize,
}

impl PoolBuilder<'_> {
    /// Ground truth plus `pool_size - 1` negatives: the best-recalled items
    /// for the user that are neither the ground truth nor in the history,
    /// padded by seeded uniform sampling, then shuffled with the same seed.
    pub fn closed_pool(&self, instance: &EvalInstance, pool_size: usize, seed: u64) -> Result<Vec<Item>, EvalError> {
        if pool_size < 2 {
            return Err(EvalError::Config("pool_size must be at least 2".into()));
        }
        if self.catalog.len() < pool_size {
            return Err(EvalError::CatalogTooSmall {
                catalog: self.catalog.len(),
                pool_size,
            });
        }
        let truth = self
            .catalog
            .get(&instance.ground_truth)
            .ok_or_else(|| EvalError::UnknownGroundTruth(instance.ground_truth.clone()))?;
        let history = instance.context.item_ids();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let need = pool_size - 1;

        let query = embed_user(
            self.embedder,
            self.catalog,
            &instance.context,
            self.max_history_items,
            self.max_reviews,
        )?;
        let mut negatives: Vec<&str> = retrieve_topk(self.index, &query, self.k)?
            .into_iter()
            .filter_map(|s| self.catalog.get(&s.id))
            .map(|i| i.id.as_str())
            .filter(|id| *id != truth.id && !history.contains(id))
            .take(need)
            .collect();

        if negatives.len() < need {
            let taken: HashSet<&str> = negatives.iter().copied().collect();
            let unused = |in_history: bool| -> Vec<&str> {
                self.catalog
                    .items()
                    .iter()
                    .map(|i| i.id.as_str())
                    .filter(|id| *id != truth.id && !taken.contains(id) && history.contains(id) == in_history)
                    .collect()
            };
            // History items are used only when the rest of the catalog runs out.
            for bucket in [unused(false), unused(true)] {
                let want = (need - negatives.len()).min(bucket.len());
                let mut picks: Vec<usize> = index::sample(&mut rng, bucket.len(), want).into_vec();
                picks.sort_unstable();
                negatives.extend(picks.into_iter().map(|p| bucket[p]));
            }
        }

        let mut pool: Vec<Item> = std::iter::once(truth)
            .chain(negatives.into_iter().filter_map(|id| self.catalog.get(id)))
            .cloned()
            .collect();
        pool.shuffle(&mut rng);
        Ok(pool)
    }

    /// The user's recall set minus history items; the ground truth is in the
    /// pool only if retrieval finds it.
    pub fn open_pool(&self, instance: &EvalInstance) -> Result<Vec<Item>, EvalError> {
        let history = instance.context.item_ids();
        let query = embed_user(
            self.embedder,
            self.catalog,
            &instance.context,
            self.max_history_items,
            self.max_reviews,
        )?;
        Ok(retrieve_topk(self.index, &query, self.k + history.len())?
            .into_iter()
            .filter(|s| !history.contains(s.id.as_str()))
            .take(self.k)
            .filter_map(|s| self.catalog.get(&s.id).cloned())
            .collect())
    }
}
