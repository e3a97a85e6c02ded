//! Evaluation: metrics, candidate pools, the experiment runner and reports.

pub mod metrics;
pub mod pool;
pub mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blackboard::Clock;
use crate::corpus::{Catalog, EvalInstance, Item};
use crate::embed::{EmbedError, Embedder, VectorIndex};
use crate::llm::ChatBackend;
use crate::pipeline::{Engine, PipelineConfig, PipelineOutput, Variant};
use crate::prompts::PromptSet;

pub use metrics::{hit_at_k, ndcg_at_k, rank_of};
pub use pool::{pool_digest, user_seed, PoolBuilder};
pub use report::{
    format_pct, format_report, improvement_over_best_baseline, relative_improvement, DatasetColumn, MetricPair,
    Report,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("catalog has {catalog} items, fewer than pool_size {pool_size}")]
    CatalogTooSmall { catalog: usize, pool_size: usize },
    #[error("ground truth {0:?} is not in the catalog")]
    UnknownGroundTruth(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub variants: Vec<Variant>,
    /// Cutoff for NDCG@k / Hit@k.
    pub metric_k: usize,
    /// Rank the user's recall set instead of a closed pool.
    pub open_catalog: bool,
    /// Largest tolerated share of failed (user, variant) runs.
    pub max_failure_fraction: f64,
    /// Users evaluated concurrently.
    pub user_parallelism: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            variants: Variant::ALL.to_vec(),
            metric_k: 5,
            open_catalog: false,
            max_failure_fraction: 0.05,
            user_parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub variant: Variant,
    pub rank: Option<usize>,
    pub ndcg: f64,
    pub hit: u8,
    pub error: Option<String>,
}

impl UserRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub variant: Variant,
    pub mean_ndcg: f64,
    pub mean_hit: f64,
    pub users: usize,
    pub failures: usize,
    /// Successful runs whose ranking did not contain the ground truth.
    pub ground_truth_missing: usize,
}

/// Means over successful users, folded in the order given.
pub fn aggregate(records: &[UserRecord], variants: &[Variant]) -> Vec<Aggregate> {
    variants
        .iter()
        .map(|&variant| {
            let (mut ndcg, mut hit, mut users, mut failures, mut missing) = (0.0, 0.0, 0, 0, 0);
            for r in records.iter().filter(|r| r.variant == variant) {
                if r.succeeded() {
                    ndcg += r.ndcg;
                    hit += f64::from(r.hit);
                    users += 1;
                    missing += usize::from(r.rank.is_none());
                } else {
                    failures += 1;
                }
            }
            let n = users.max(1) as f64;
            Aggregate {
                variant,
                mean_ndcg: ndcg / n,
                mean_hit: hit / n,
                users,
                failures,
                ground_truth_missing: missing,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metric_k: usize,
    pub instances: usize,
    pub aggregates: Vec<Aggregate>,
    /// ARAG over the best baseline, formatted to two decimals.
    pub improvement: Option<ImprovementRow>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub ndcg: String,
    pub hit: String,
}

impl Summary {
    pub fn failure_fraction(&self) -> f64 {
        let failures: usize = self.aggregates.iter().map(|a| a.failures).sum();
        let total: usize = self.aggregates.iter().map(|a| a.failures + a.users).sum();
        if total == 0 {
            0.0
        } else {
            failures as f64 / total as f64
        }
    }

    pub fn column(&self, name: &str) -> DatasetColumn {
        DatasetColumn {
            name: name.to_owned(),
            rows: self
                .aggregates
                .iter()
                .filter(|a| a.users > 0)
                .map(|a| {
                    (
                        a.variant,
                        MetricPair {
                            ndcg: a.mean_ndcg,
                            hit: a.mean_hit,
                        },
                    )
                })
                .collect(),
            published_improvement: None,
        }
    }

    pub fn get(&self, variant: Variant) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.variant == variant)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

pub fn summarize(records: &[UserRecord], variants: &[Variant], metric_k: usize, instances: usize) -> Summary {
    let aggregates = aggregate(records, variants);
    let mut summary = Summary {
        metric_k,
        instances,
        aggregates,
        improvement: None,
        warnings: Vec::new(),
    };
    summary.improvement = summary.column("run").improvement().map(|m| ImprovementRow {
        ndcg: format_pct(m.ndcg),
        hit: format_pct(m.hit),
    });
    let missing: usize = summary.aggregates.iter().map(|a| a.ground_truth_missing).sum();
    if missing > 0 {
        summary
            .warnings
            .push(format!("{missing} ranking(s) did not contain the ground truth and scored 0"));
    }
    summary
}

/// Outcome of one variant for one user.
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub variant: Variant,
    pub output: Result<PipelineOutput, String>,
}

#[derive(Debug, Clone)]
pub struct UserRun {
    pub user_id: String,
    pub ground_truth: String,
    pub pool: Vec<String>,
    pub pool_digest: String,
    pub runs: Vec<VariantRun>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub users: Vec<UserRun>,
    pub records: Vec<UserRecord>,
    pub summary: Summary,
}

/// Shared inputs for an experiment.
pub struct Harness<'a> {
    pub catalog: &'a Catalog,
    pub index: &'a VectorIndex,
    pub embedder: &'a dyn Embedder,
    pub backend: &'a dyn ChatBackend,
    pub prompts: &'a PromptSet,
    pub pipeline: &'a PipelineConfig,
    pub eval: &'a EvalConfig,
    pub clock: Clock,
}

impl Harness<'_> {
    fn pool_builder(&self) -> PoolBuilder<'_> {
        PoolBuilder {
            catalog: self.catalog,
            index: self.index,
            embedder: self.embedder,
            k: self.pipeline.k,
            max_history_items: self.pipeline.agents.max_history_items,
            max_reviews: self.pipeline.agents.max_reviews,
        }
    }

    /// The pool for one instance, identical for every variant.
    pub fn pool_for(&self, instance: &EvalInstance) -> Result<Vec<Item>, EvalError> {
        let builder = self.pool_builder();
        if self.eval.open_catalog {
            builder.open_pool(instance)
        } else {
            let seed = user_seed(self.pipeline.seed, &instance.context.user_id);
            builder.closed_pool(instance, self.pipeline.pool_size, seed)
        }
    }

    fn engine(&self) -> Engine<'_> {
        Engine {
            catalog: self.catalog,
            embedder: self.embedder,
            backend: self.backend,
            prompts: self.prompts,
            config: self.pipeline,
            clock: self.clock,
        }
    }

    pub fn evaluate_instance(&self, instance: &EvalInstance) -> Result<UserRun, EvalError> {
        let pool = self.pool_for(instance)?;
        let engine = self.engine();
        let runs = self
            .eval
            .variants
            .iter()
            .map(|&variant| {
                let output = engine.run_variant(variant, &instance.context, &pool).map_err(|e| {
                    log::warn!("user {} variant {variant}: {e}", instance.context.user_id);
                    e.to_string()
                });
                VariantRun { variant, output }
            })
            .collect();
        Ok(UserRun {
            user_id: instance.context.user_id.clone(),
            ground_truth: instance.ground_truth.clone(),
            pool_digest: pool_digest(&pool),
            pool: pool.into_iter().map(|i| i.id).collect(),
            runs,
        })
    }

    /// Runs every instance through every configured variant. Per-user
    /// failures are recorded, not raised; only setup problems (an unknown
    /// ground truth, a catalog too small for the pool) abort the run.
    pub fn run_experiment(&self, instances: &[EvalInstance]) -> Result<Experiment, EvalError> {
        if self.eval.metric_k < 1 {
            return Err(EvalError::Config("metric_k must be at least 1".into()));
        }
        let threads = self.eval.user_parallelism.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| EvalError::Config(e.to_string()))?;
        let mut users: Vec<UserRun> = pool.install(|| {
            instances
                .par_iter()
                .map(|i| self.evaluate_instance(i))
                .collect::<Result<Vec<_>, _>>()
        })?;
        users.sort_by(|a, b| a.user_id.cmp(&b.user_id));

        let k = self.eval.metric_k;
        let records: Vec<UserRecord> = users
            .iter()
            .flat_map(|u| {
                u.runs.iter().map(move |run| match &run.output {
                    Ok(out) => UserRecord {
                        user_id: u.user_id.clone(),
                        variant: run.variant,
                        rank: rank_of(&out.ranking.item_ids, &u.ground_truth),
                        ndcg: ndcg_at_k(&out.ranking.item_ids, &u.ground_truth, k),
                        hit: hit_at_k(&out.ranking.item_ids, &u.ground_truth, k),
                        error: None,
                    },
                    Err(e) => UserRecord {
                        user_id: u.user_id.clone(),
                        variant: run.variant,
                        rank: None,
                        ndcg: 0.0,
                        hit: 0,
                        error: Some(e.clone()),
                    },
                })
            })
            .collect();
        let summary = summarize(&records, &self.eval.variants, k, instances.len());
        Ok(Experiment {
            users,
            records,
            summary,
        })
    }
}

/// Per-user ranking file written under `rankings/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRankings {
    pub user_id: String,
    pub ground_truth: String,
    pub pool: Vec<String>,
    pub pool_digest: String,
    pub results: Vec<VariantResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub record: UserRecord,
    pub ranking: Option<Vec<String>>,
}

/// File-name-safe form of an id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn write(path: &Path, contents: &str) -> Result<(), EvalError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| EvalError::Output {
            path: parent.to_owned(),
            message: e.to_string(),
        })?;
    }
    fs::write(path, contents).map_err(|e| EvalError::Output {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

impl Experiment {
    /// Writes `traces/<variant>/<user>.jsonl`, `rankings/<user>.json`,
    /// `summary.json` and `report.md`.
    pub fn write_to(&self, dir: &Path, dataset_name: &str) -> Result<Report, EvalError> {
        let by_user: BTreeMap<&str, Vec<&UserRecord>> =
            self.records.iter().fold(BTreeMap::new(), |mut acc, r| {
                acc.entry(r.user_id.as_str()).or_default().push(r);
                acc
            });
        for user in &self.users {
            let stem = file_stem(&user.user_id);
            let records = by_user.get(user.user_id.as_str()).cloned().unwrap_or_default();
            let mut results = Vec::new();
            for (run, record) in user.runs.iter().zip(records) {
                if let Ok(out) = &run.output {
                    write(
                        &dir.join("traces").join(run.variant.as_str()).join(format!("{stem}.jsonl")),
                        &out.board_trace,
                    )?;
                }
                results.push(VariantResult {
                    record: record.clone(),
                    ranking: run.output.as_ref().ok().map(|o| o.ranking.item_ids.clone()),
                });
            }
            let rankings = UserRankings {
                user_id: user.user_id.clone(),
                ground_truth: user.ground_truth.clone(),
                pool: user.pool.clone(),
                pool_digest: user.pool_digest.clone(),
                results,
            };
            write(
                &dir.join("rankings").join(format!("{stem}.json")),
                &(serde_json::to_string_pretty(&rankings).expect("rankings serialize") + "\n"),
            )?;
        }
        write(&dir.join("summary.json"), &self.summary.to_json())?;
        let report = format_report(&[self.summary.column(dataset_name)], self.summary.metric_k);
        write(&dir.join("report.md"), &report.markdown)?;
        Ok(report)
    }
}

/// Recomputes the summary from the per-user ranking files in `dir`.
pub fn reaggregate_dir(dir: &Path, variants: &[Variant], metric_k: usize) -> Result<Summary, EvalError> {
    let rankings_dir = dir.join("rankings");
    let err = |path: &Path, e: &dyn std::fmt::Display| EvalError::Output {
        path: path.to_owned(),
        message: e.to_string(),
    };
    let mut files: Vec<PathBuf> = fs::read_dir(&rankings_dir)
        .map_err(|e| err(&rankings_dir, &e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut users: Vec<UserRankings> = Vec::with_capacity(files.len());
    for path in &files {
        let text = fs::read_to_string(path).map_err(|e| err(path, &e))?;
        users.push(serde_json::from_str(&text).map_err(|e| err(path, &e))?);
    }
    users.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    let records: Vec<UserRecord> = users
        .iter()
        .flat_map(|u| u.results.iter().map(|r| r.record.clone()))
        .collect();
    Ok(summarize(&records, variants, metric_k, users.len()))
}
