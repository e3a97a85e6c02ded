use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn arag(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arag"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, users: usize) {
    let o = arag(dir, &["synth", "--users", &users.to_string(), "--out-dir", "data"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

/// Ranked ids from `run` or `replay` output.
fn ranking(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| {
            let (n, rest) = l.trim_start().split_once(". ")?;
            n.parse::<usize>().ok()?;
            Some(rest.split_whitespace().next()?.to_owned())
        })
        .collect()
}

#[test]
fn ingest_reports_contexts_and_a_stable_digest() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 3);
    let args = [
        "ingest",
        "--catalog",
        "data/catalog.jsonl",
        "--interactions",
        "data/interactions.jsonl",
        "--out-dir",
        "store",
    ];
    let first = arag(dir.path(), &args);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(stdout(&first).contains("3 contexts"), "{}", stdout(&first));
    assert!(dir.path().join("store/contexts.jsonl").exists());

    let second = arag(dir.path(), &args);
    assert_eq!(stdout(&first), stdout(&second));
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = arag(
        dir.path(),
        &["ingest", "--catalog", "absent.jsonl", "--interactions", "x.jsonl", "--out-dir", "o"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.jsonl"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(arag(dir.path(), &["--no-such-flag"]).status.code(), Some(1));
    assert_eq!(arag(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(arag(dir.path(), &["eval", "--theta", "1.5"]).status.code(), Some(1));
}

#[test]
fn run_prints_a_ranking_and_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 4);
    let o = arag(dir.path(), &["--config", "data/config.toml", "run", "--user", "u0002"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ids = ranking(&stdout(&o));
    assert_eq!(ids.len(), 20);
    let trace = dir.path().join("data/results/traces/arag/u0002.jsonl");
    assert_eq!(fs::read_to_string(trace).unwrap().lines().count(), 23);

    let unknown = arag(dir.path(), &["--config", "data/config.toml", "run", "--user", "nobody"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(stderr(&unknown).contains("nobody"));
}

#[test]
fn variant_flag_drops_nli_messages() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2);
    let o = arag(
        dir.path(),
        &["--config", "data/config.toml", "--variant", "arag_no_nli", "run", "--user", "u0000"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("data/results/traces/arag_no_nli/u0000.jsonl")).unwrap();
    assert!(!trace.contains("\"nli\""));
    assert!(trace.contains("context_summary"));
}

#[test]
fn replay_reproduces_the_ranking() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2);
    let run = arag(dir.path(), &["--config", "data/config.toml", "run", "--user", "u0001"]);
    assert!(run.status.success(), "{}", stderr(&run));
    let replay = arag(dir.path(), &["replay", "data/results/traces/arag/u0001.jsonl"]);
    assert!(replay.status.success(), "{}", stderr(&replay));
    assert_eq!(ranking(&stdout(&run)), ranking(&stdout(&replay)));

    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let empty = arag(dir.path(), &["replay", "empty.jsonl"]);
    assert_eq!(empty.status.code(), Some(2));
    assert!(stderr(&empty).contains("empty"));
}

#[test]
fn record_then_replay_without_the_inner_backend() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2);
    let common = ["--config", "data/config.toml", "--cassette", "tape.jsonl"];
    let mut record = common.to_vec();
    record.extend(["--backend", "record", "run", "--user", "u0000"]);
    // The recorder wraps the remote backend by default; point it at the mock.
    let config = dir.path().join("data/config.toml");
    let text = fs::read_to_string(&config).unwrap();
    fs::write(&config, text.replace("record_inner = \"remote\"", "record_inner = \"mock\"")).unwrap();
    let rec = arag(dir.path(), &record);
    assert!(rec.status.success(), "{}", stderr(&rec));

    let mut replay = common.to_vec();
    replay.extend(["--backend", "replay", "run", "--user", "u0000"]);
    let rep = arag(dir.path(), &replay);
    assert!(rep.status.success(), "{}", stderr(&rep));
    assert_eq!(ranking(&stdout(&rec)), ranking(&stdout(&rep)));
}

#[test]
fn eval_writes_every_variant_and_repeats_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 8);
    let o = arag(dir.path(), &["--config", "data/config.toml", "eval"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for row in ["Recency-based Ranking", "Vanilla RAG", "ARAG w/o NLI & CSA", "ARAG w/o NLI |", "| ARAG |"] {
        assert!(out.contains(row), "missing {row} in\n{out}");
    }
    let results = dir.path().join("data/results");
    for file in ["summary.json", "report.md", "manifest.json"] {
        assert!(results.join(file).exists(), "{file}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(results.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["backend"], "mock");
    assert_eq!(manifest["datasets"]["catalog"]["sha256"].as_str().unwrap().len(), 64);

    let first = fs::read(results.join("summary.json")).unwrap();
    let again = arag(dir.path(), &["--config", "data/config.toml", "eval"]);
    assert!(again.status.success());
    assert_eq!(first, fs::read(results.join("summary.json")).unwrap());
}

#[test]
fn too_many_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 3);
    // Strict mock with no script fails every LLM call.
    let o = arag(dir.path(), &["--config", "data/config.toml", "--strict", "eval"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("no scripted response"), "{}", stderr(&o));
}
