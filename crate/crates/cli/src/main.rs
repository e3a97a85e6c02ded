use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use arag_core::config::{file_sha256, BackendKind, RunConfig};
use arag_core::corpus::{
    build_contexts, contexts_to_jsonl, eval_instances, load_catalog, load_contexts, load_interactions, Catalog,
    EvalInstance,
};
use arag_core::embed::{HashedBagOfTokens, VectorIndex};
use arag_core::eval::{file_stem, Harness};
use arag_core::llm::heuristic::overlap_backend;
use arag_core::llm::{ChatBackend, RecordingBackend, RemoteBackend, ReplayBackend};
use arag_core::pipeline::{replay_ranking, Engine, Variant};
use arag_core::prompts::PromptSet;
use arag_core::synthetic::{catalog_jsonl, generate, interactions_jsonl, SyntheticConfig};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "arag", version, about = "Agentic retrieval-augmented recommendation benchmark")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// remote, mock, replay or record.
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    #[arg(long, global = true)]
    variant: Option<Variant>,
    #[arg(long, global = true)]
    pool_size: Option<usize>,
    /// Recall size for embedding retrieval.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Alignment threshold.
    #[arg(long, global = true)]
    theta: Option<f64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Cassette file for record and replay.
    #[arg(long, global = true)]
    cassette: Option<PathBuf>,
    /// JSON map of request digest to reply for the mock backend.
    #[arg(long, global = true)]
    script: Option<PathBuf>,
    /// Fail on requests the mock has no script for.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build per-user contexts from a catalog and an interaction log.
    Ingest {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        interactions: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Seconds of inactivity that end a session.
        #[arg(long)]
        session_gap: Option<u64>,
    },
    /// Rank the evaluation pool of one user.
    Run {
        #[arg(long)]
        user: String,
    },
    /// Run every configured variant over every user and write the report.
    Eval,
    /// Print the final ranking stored in a trace.
    Replay { trace: PathBuf },
    /// Write a seeded synthetic catalog, interaction log and config.
    Synth {
        #[arg(long, default_value_t = 100)]
        users: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Usage = 1,
    Data = 2,
    Backend = 3,
    FailureFraction = 4,
}

struct Failure {
    exit: Exit,
    error: anyhow::Error,
}

impl fmt::Debug for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

trait Classify<T> {
    fn or_exit(self, exit: Exit) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_exit(self, exit: Exit) -> Result<T, Failure> {
        self.map_err(|e| Failure { exit, error: e.into() })
    }
}

fn fail(exit: Exit, error: anyhow::Error) -> Failure {
    Failure { exit, error }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(Exit::Usage as u8) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.exit as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest { catalog, interactions, out_dir, session_gap } => {
            let mut config = load_config(&cli.common)?;
            if let Some(gap) = session_gap {
                config.data.session_gap = gap;
            }
            ingest(&catalog, &interactions, &out_dir, config.data.session_gap)
        }
        Command::Run { user } => run(&load_config(&cli.common)?, &user),
        Command::Eval => eval(&load_config(&cli.common)?),
        Command::Replay { trace } => replay(&trace),
        Command::Synth { users, out_dir } => synth(users, cli.common.seed.unwrap_or(7), &out_dir),
    }
}

/// Config file (or defaults) with command-line overrides applied.
fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path).or_exit(Exit::Usage)?,
        None => RunConfig::default(),
    };
    let c = common;
    if let Some(v) = c.seed {
        config.pipeline.seed = v;
    }
    if let Some(v) = c.backend {
        config.backend.kind = v;
    }
    if let Some(v) = c.variant {
        config.pipeline.variant = v;
    }
    if let Some(v) = c.pool_size {
        config.pipeline.pool_size = v;
    }
    if let Some(v) = c.k {
        config.pipeline.k = v;
    }
    if let Some(v) = c.theta {
        config.pipeline.theta = v;
    }
    if let Some(v) = &c.output_dir {
        config.output_dir = v.clone();
    }
    if let Some(v) = &c.cassette {
        config.backend.cassette = Some(v.clone());
    }
    if let Some(v) = &c.script {
        config.backend.script = Some(v.clone());
    }
    config.backend.strict |= c.strict;
    config.pipeline.validate().or_exit(Exit::Usage)?;
    Ok(config)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .or_exit(Exit::Data)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display())).or_exit(Exit::Data)
}

fn ingest(catalog_path: &Path, interactions_path: &Path, out_dir: &Path, session_gap: u64) -> Result<(), Failure> {
    let catalog = load_catalog(catalog_path).or_exit(Exit::Data)?;
    let log = load_interactions(interactions_path).or_exit(Exit::Data)?;
    let contexts = build_contexts(&log, &catalog, session_gap).or_exit(Exit::Data)?;
    let store = out_dir.join("contexts.jsonl");
    write(&store, &contexts_to_jsonl(&contexts))?;
    let index = VectorIndex::build(&HashedBagOfTokens::default(), &catalog, arag_core::corpus::DEFAULT_MAX_REVIEWS)
        .or_exit(Exit::Data)?;
    index.save(out_dir.join("vectors.jsonl")).or_exit(Exit::Data)?;
    let digest = file_sha256(&store).or_exit(Exit::Data)?;
    println!(
        "{} items, {} interactions, {} contexts, {} evaluable",
        catalog.len(),
        log.len(),
        contexts.len(),
        eval_instances(&contexts).len()
    );
    println!("contexts: {} (sha256 {digest})", store.display());
    Ok(())
}

struct Loaded {
    catalog: Catalog,
    instances: Vec<EvalInstance>,
    index: VectorIndex,
    embedder: HashedBagOfTokens,
    prompts: PromptSet,
    inputs: Vec<(String, PathBuf)>,
}

fn load_data(config: &RunConfig) -> Result<Loaded, Failure> {
    let data = &config.data;
    let catalog_path = data
        .catalog
        .clone()
        .ok_or_else(|| fail(Exit::Usage, anyhow!("no catalog configured (set data.catalog)")))?;
    let catalog = load_catalog(&catalog_path).or_exit(Exit::Data)?;
    let mut inputs = vec![("catalog".to_owned(), catalog_path)];
    let contexts = match (&data.contexts, &data.interactions) {
        (Some(path), _) => {
            inputs.push(("contexts".into(), path.clone()));
            let contexts = load_contexts(path).or_exit(Exit::Data)?;
            if let Some(c) = contexts.iter().find(|c| !c.unknown_items(&catalog).is_empty()) {
                return Err(fail(
                    Exit::Data,
                    anyhow!("context for {} references unknown items {:?}", c.user_id, c.unknown_items(&catalog)),
                ));
            }
            contexts
        }
        (None, Some(path)) => {
            inputs.push(("interactions".into(), path.clone()));
            let log = load_interactions(path).or_exit(Exit::Data)?;
            build_contexts(&log, &catalog, data.session_gap).or_exit(Exit::Data)?
        }
        (None, None) => {
            return Err(fail(Exit::Usage, anyhow!("no user data configured (set data.contexts or data.interactions)")))
        }
    };
    let embedder = HashedBagOfTokens::default();
    let max_reviews = config.pipeline.agents.max_reviews;
    let index = match &data.vector_cache {
        Some(path) if path.exists() => {
            let cached = VectorIndex::load(path).or_exit(Exit::Data)?;
            let ids_match = cached.len() == catalog.len()
                && cached.entries().iter().zip(catalog.items()).all(|(e, i)| e.id == i.id);
            if ids_match {
                cached
            } else {
                log::warn!("vector cache {} does not match the catalog; rebuilding", path.display());
                let index = VectorIndex::build(&embedder, &catalog, max_reviews).or_exit(Exit::Data)?;
                index.save(path).or_exit(Exit::Data)?;
                index
            }
        }
        Some(path) => {
            let index = VectorIndex::build(&embedder, &catalog, max_reviews).or_exit(Exit::Data)?;
            index.save(path).or_exit(Exit::Data)?;
            index
        }
        None => VectorIndex::build(&embedder, &catalog, max_reviews).or_exit(Exit::Data)?,
    };
    let prompts = PromptSet::load(config.prompts_dir.as_deref()).or_exit(Exit::Usage)?;
    Ok(Loaded {
        instances: eval_instances(&contexts),
        catalog,
        index,
        embedder,
        prompts,
        inputs,
    })
}

fn cassette(config: &RunConfig) -> Result<&Path, Failure> {
    config
        .backend
        .cassette
        .as_deref()
        .ok_or_else(|| fail(Exit::Usage, anyhow!("backend {} needs a cassette (--cassette)", config.backend.kind)))
}

fn backend(config: &RunConfig) -> Result<Box<dyn ChatBackend>, Failure> {
    let b = &config.backend;
    let mock = || -> Result<Box<dyn ChatBackend>, Failure> {
        let mut mock = overlap_backend();
        if let Some(script) = &b.script {
            mock.load_script(script).or_exit(Exit::Data)?;
        }
        mock.set_strict(b.strict);
        Ok(Box::new(mock))
    };
    let remote = || -> Result<Box<dyn ChatBackend>, Failure> {
        Ok(Box::new(RemoteBackend::new(b.remote.clone()).or_exit(Exit::Backend)?))
    };
    match b.kind {
        BackendKind::Mock => mock(),
        BackendKind::Remote => remote(),
        BackendKind::Replay => Ok(Box::new(ReplayBackend::open(cassette(config)?).or_exit(Exit::Backend)?)),
        BackendKind::Record => {
            let inner = match b.record_inner {
                BackendKind::Mock => mock()?,
                BackendKind::Remote => remote()?,
                other => return Err(fail(Exit::Usage, anyhow!("record cannot wrap the {other} backend"))),
            };
            Ok(Box::new(RecordingBackend::new(inner, cassette(config)?).or_exit(Exit::Backend)?))
        }
    }
}

fn harness<'a>(config: &'a RunConfig, data: &'a Loaded, backend: &'a dyn ChatBackend) -> Harness<'a> {
    Harness {
        catalog: &data.catalog,
        index: &data.index,
        embedder: &data.embedder,
        backend,
        prompts: &data.prompts,
        pipeline: &config.pipeline,
        eval: &config.eval,
        clock: config.clock(),
    }
}

fn run(config: &RunConfig, user: &str) -> Result<(), Failure> {
    let data = load_data(config)?;
    let instance = data
        .instances
        .iter()
        .find(|i| i.context.user_id == user)
        .ok_or_else(|| fail(Exit::Data, anyhow!("unknown user {user:?} (or no history left after holdout)")))?;
    let backend = backend(config)?;
    let pool = harness(config, &data, backend.as_ref()).pool_for(instance).or_exit(Exit::Data)?;
    let engine = Engine {
        catalog: &data.catalog,
        embedder: &data.embedder,
        backend: backend.as_ref(),
        prompts: &data.prompts,
        config: &config.pipeline,
        clock: config.clock(),
    };
    let out = engine.run(&instance.context, &pool).map_err(|e| {
        let exit = if e.is_backend() { Exit::Backend } else { Exit::Data };
        fail(exit, e.into())
    })?;
    let trace = config
        .output_dir
        .join("traces")
        .join(out.variant.as_str())
        .join(format!("{}.jsonl", file_stem(user)));
    write(&trace, &out.board_trace)?;
    for (n, id) in out.ranking.item_ids.iter().enumerate() {
        let title = data.catalog.get(id).map_or("", |i| i.title.as_str());
        let mark = if *id == instance.ground_truth { "  <- held out" } else { "" };
        println!("{:>3}. {id}  {title}{mark}", n + 1);
    }
    println!("explanation: {}", out.ranking.explanation);
    println!("trace: {}", trace.display());
    Ok(())
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn eval(config: &RunConfig) -> Result<(), Failure> {
    let started = now_ms();
    let data = load_data(config)?;
    if data.instances.is_empty() {
        return Err(fail(Exit::Data, anyhow!("no evaluable users")));
    }
    let backend = backend(config)?;
    let experiment = harness(config, &data, backend.as_ref())
        .run_experiment(&data.instances)
        .or_exit(Exit::Data)?;
    let dir = &config.output_dir;
    let report = experiment.write_to(dir, &config.data.name).or_exit(Exit::Data)?;

    let mut digests = serde_json::Map::new();
    for (name, path) in &data.inputs {
        let digest = file_sha256(path).with_context(|| format!("hashing {}", path.display())).or_exit(Exit::Data)?;
        digests.insert(name.clone(), json!({ "path": path, "sha256": digest }));
    }
    let manifest = json!({
        "config": config,
        "datasets": digests,
        "backend": backend.kind(),
        "version": env!("CARGO_PKG_VERSION"),
        "started_ms": started,
        "finished_ms": now_ms(),
    });
    write(
        &dir.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"),
    )?;

    print!("{}", report.markdown);
    for w in &experiment.summary.warnings {
        eprintln!("warning: {w}");
    }
    println!("results: {}", dir.display());
    let fraction = experiment.summary.failure_fraction();
    if fraction > config.eval.max_failure_fraction {
        let errors: Vec<&str> = experiment.records.iter().filter_map(|r| r.error.as_deref()).take(3).collect();
        return Err(fail(
            Exit::FailureFraction,
            anyhow!(
                "{:.1}% of runs failed, above the {:.1}% limit; first errors: {}",
                100.0 * fraction,
                100.0 * config.eval.max_failure_fraction,
                errors.join(" | ")
            ),
        ));
    }
    Ok(())
}

fn replay(path: &Path) -> Result<(), Failure> {
    let trace = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).or_exit(Exit::Data)?;
    let ranking = replay_ranking(&trace)
        .with_context(|| format!("replaying {}", path.display()))
        .or_exit(Exit::Data)?;
    for (n, id) in ranking.iter().enumerate() {
        println!("{:>3}. {id}", n + 1);
    }
    Ok(())
}

fn synth(users: usize, seed: u64, out_dir: &Path) -> Result<(), Failure> {
    let data = generate(&SyntheticConfig {
        users,
        seed,
        ..SyntheticConfig::default()
    });
    write(&out_dir.join("catalog.jsonl"), &catalog_jsonl(&data.catalog))?;
    write(&out_dir.join("interactions.jsonl"), &interactions_jsonl(&data.interactions))?;
    let mut config = RunConfig::default();
    config.data.catalog = Some("catalog.jsonl".into());
    config.data.interactions = Some("interactions.jsonl".into());
    config.data.name = "synthetic".into();
    config.output_dir = "results".into();
    config.pipeline.seed = seed;
    config.frozen_clock_ms = Some(0);
    write(&out_dir.join("config.toml"), &config.to_toml())?;
    println!(
        "{} items, {} interactions for {users} users in {}",
        data.catalog.len(),
        data.interactions.len(),
        out_dir.display()
    );
    Ok(())
}
