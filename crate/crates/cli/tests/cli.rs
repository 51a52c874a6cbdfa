use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new(n_queries: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let lines: String = (0..n_queries)
            .map(|i| format!("{{\"query_id\": \"q{i}\", \"query\": \"What shapes glaciers number {i}?\"}}\n"))
            .collect();
        fs::write(dir.path().join("queries.jsonl"), lines).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_attrforge"));
        cmd.current_dir(self.dir.path()).args(args).env("RUST_LOG", "error");
        for var in ["ATTRFORGE_CONFIG", "ATTRFORGE_SEED", "ATTRFORGE_PARALLELISM", "ATTRFORGE_KILL_AFTER_WRITES"] {
            cmd.env_remove(var);
        }
        cmd.envs(env.iter().copied());
        cmd.output().unwrap()
    }

    fn mock(&self, ws: &str, args: &[&str]) -> Output {
        let mut all = vec!["--mock", "--seed", "3", "--workspace", ws];
        all.extend_from_slice(args);
        self.run(&all, &[])
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn unreachable_generator_exits_2_without_artifacts() {
    let env = Env::new(3);
    let role = "kind = \"http\"\nurl = \"http://127.0.0.1:1\"\nmax_attempts = 2\ninitial_backoff_ms = 1\n";
    let toml = format!(
        "global_seed = 1\n[paths]\nqueries = \"queries.jsonl\"\nworkspace = \"ws\"\n\
         [backends.generator]\n{role}[backends.policy_scorer]\n{role}[backends.reference_scorer]\n{role}[backends.judge]\n{role}"
    );
    fs::write(env.path("run.toml"), toml).unwrap();
    let out = env.run(&["--config", "run.toml", "synth"], &[]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!env.path("ws/synth").exists());
}

#[test]
fn missing_url_and_unknown_keys_are_validation_errors() {
    let env = Env::new(1);
    fs::write(env.path("a.toml"), "[paths]\nqueries = \"queries.jsonl\"\n").unwrap();
    let out = env.run(&["--config", "a.toml", "--workspace", "ws", "synth"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("url"), "{}", stderr(&out));

    fs::write(env.path("b.toml"), "global_seed = 1\nbogus = 2\n").unwrap();
    let out = env.run(&["--config", "b.toml", "--mock", "--workspace", "ws", "synth"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bogus"), "{}", stderr(&out));
}

#[test]
fn iterate_requires_synth() {
    let env = Env::new(1);
    let out = env.mock("ws", &["iterate", "--iter", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("synth"));
}

#[test]
fn completed_stages_are_skipped_and_force_reproduces_them() {
    let env = Env::new(6);
    let q = env.path("queries.jsonl");
    let q = q.to_str().unwrap();
    assert!(env.mock("ws", &["synth", "--queries", q]).status.success());
    assert!(env.mock("ws", &["iterate", "--iter", "1"]).status.success());
    let manifest = read(&env.path("ws/manifest.json"));
    let cands = read(&env.path("ws/iter1/candidates.jsonl"));

    let again = env.mock("ws", &["synth", "--queries", q]);
    assert!(again.status.success());
    assert!(stdout(&again).contains("up to date"), "{}", stdout(&again));
    let again = env.mock("ws", &["iterate", "--iter", "1"]);
    assert!(stdout(&again).contains("up to date"));
    assert_eq!(read(&env.path("ws/manifest.json")), manifest);

    let forced = env.mock("ws", &["--force", "iterate", "--iter", "1"]);
    assert!(forced.status.success());
    assert!(stdout(&forced).contains("iter1 done"));
    assert_eq!(read(&env.path("ws/iter1/candidates.jsonl")), cands);
    assert_eq!(read(&env.path("ws/manifest.json")), manifest);
}

#[test]
fn a_different_run_refuses_the_workspace() {
    let env = Env::new(2);
    assert!(env.mock("ws", &["synth", "--queries", "queries.jsonl"]).status.success());
    let out = env.run(&["--mock", "--seed", "4", "--workspace", "ws", "synth", "--queries", "queries.jsonl"], &[]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn env_seed_overrides_flag() {
    let env = Env::new(3);
    let base = ["--mock", "--workspace"];
    let a = env.run(&[&base[..], &["a", "--seed", "3", "synth", "--queries", "queries.jsonl"]].concat(), &[]);
    let b = env.run(
        &[&base[..], &["b", "--seed", "99", "synth", "--queries", "queries.jsonl"]].concat(),
        &[("ATTRFORGE_SEED", "3")],
    );
    assert!(a.status.success() && b.status.success());
    assert_eq!(read(&env.path("a/synth/examples.jsonl")), read(&env.path("b/synth/examples.jsonl")));
}

#[test]
fn report_flags_tampered_artifacts() {
    let env = Env::new(2);
    assert!(env.mock("ws", &["synth", "--queries", "queries.jsonl"]).status.success());
    let clean = env.mock("ws", &["report"]);
    assert!(stdout(&clean).contains("synthesis: 2 examples"), "{}", stdout(&clean));
    assert!(!stdout(&clean).contains("warning"));
    fs::write(env.path("ws/synth/examples.jsonl"), "{}\n").unwrap();
    let out = env.mock("ws", &["report"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("warning: stage synth"), "{}", stdout(&out));
}

const DOCS: &str = r#"[{"title": "Album", "text": "The album was released in 1966 by the band."}]"#;

#[test]
fn eval_scores_and_lists_missing_predictions() {
    let env = Env::new(1);
    let gold = format!(
        "{{\"query_id\": \"a\", \"docs\": {DOCS}, \"gold\": {{\"answers\": [\"1966\", \"Dami Im\"]}}}}\n\
         {{\"query_id\": \"b\", \"docs\": {DOCS}, \"gold\": {{\"answers\": [\"1966\"]}}}}\n"
    );
    fs::write(env.path("gold.jsonl"), gold).unwrap();
    fs::write(
        env.path("partial.jsonl"),
        "{\"query_id\": \"a\", \"response\": \"The album was released in 1966 [1].\"}\n",
    )
    .unwrap();
    let out = env.mock("ws", &["eval", "--adapter", "asqa", "--predictions", "partial.jsonl", "--gold", "gold.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing predictions for query ids: b"), "{}", stderr(&out));

    fs::write(
        env.path("preds.jsonl"),
        "{\"query_id\": \"a\", \"response\": \"The album was released in 1966 [1].\"}\n\
         {\"query_id\": \"b\", \"response\": \"It came out in 1966.\"}\n",
    )
    .unwrap();
    let out = env.mock("ws", &["eval", "--adapter", "asqa", "--predictions", "preds.jsonl", "--gold", "gold.jsonl"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&read(&env.path("ws/eval/report.json"))).unwrap();
    assert_eq!(report["n_examples"], 2);
    assert_eq!(report["correctness"], 0.75);
    assert_eq!(report["citation_recall"], 0.5);
    assert_eq!(report["citation_precision"], 0.5);
    assert!(stdout(&out).contains("75.0"), "{}", stdout(&out));
}

#[test]
fn strategyqa_adapter_reads_yes_no_labels() {
    let env = Env::new(1);
    let lines = format!(
        "{{\"query_id\": \"s\", \"response\": \"No. The album was released in 1966 [1].\", \"docs\": {DOCS}, \"gold\": {{\"answer\": \"no\"}}}}\n"
    );
    fs::write(env.path("p.jsonl"), lines).unwrap();
    let out = env.mock("ws", &["eval", "--adapter", "strategyqa", "--predictions", "p.jsonl"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&read(&env.path("ws/eval/report.json"))).unwrap();
    assert_eq!(report["correctness"], 1.0);
}
