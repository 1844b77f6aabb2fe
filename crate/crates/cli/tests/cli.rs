use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn hrnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrnn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = hrnn(args);
    assert!(
        out.status.success(),
        "hrnn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, users: &str, seed: &str) {
    ok(&["synth", "--out", s(dir), "--users", users, "--seed", seed, "--min-sessions", "10", "--max-sessions", "12"]);
}

fn data_args(dir: &Path) -> Vec<String> {
    vec![
        "--log".into(),
        dir.join("log.jsonl").display().to_string(),
        "--docs".into(),
        dir.join("docs.jsonl").display().to_string(),
        "--embeddings".into(),
        dir.join("embeddings.txt").display().to_string(),
    ]
}

fn run_with(base: &[&str], dir: &Path, extra: &[&str]) -> Output {
    let d = data_args(dir);
    let mut args: Vec<&str> = base.to_vec();
    args.extend(d.iter().map(String::as_str));
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn synth_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    synth(&a, "6", "3");
    synth(&b, "6", "3");
    for f in ["log.jsonl", "truth.jsonl", "docs.jsonl", "embeddings.txt", "synth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = t.path().join("c");
    synth(&c, "6", "4");
    assert_ne!(fs::read(a.join("log.jsonl")).unwrap(), fs::read(c.join("log.jsonl")).unwrap());
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    let t = tempfile::tempdir().unwrap();
    let out = hrnn(&["synth", "--out", s(t.path()), "--repeat-prob", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let missing = t.path().join("nope.jsonl");
    let out = hrnn(&["train", "--out", s(t.path()), "--log", s(&missing), "--docs", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}

#[test]
fn output_directories_are_created() {
    let t = tempfile::tempdir().unwrap();
    let nested = t.path().join("x/y/z");
    synth(&nested, "3", "1");
    assert!(nested.join("log.jsonl").is_file());
    let ing = t.path().join("ing/deeper");
    ok(&["ingest", "--out", s(&ing), "--log", s(&nested.join("log.jsonl"))]);
    let stats: serde_json::Value = serde_json::from_slice(&fs::read(ing.join("log_stats.json")).unwrap()).unwrap();
    assert_eq!(stats["users"], 3);
}

#[test]
fn full_pipeline_on_a_small_log() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data, "5", "7");
    let run = t.path().join("run");
    let started = Instant::now();
    run_with(
        &["train", "--out", s(&run)],
        &data,
        &["--model", "hrnn-qa", "--preset", "desk", "--epochs", "3", "--seed", "1"],
    );
    assert!(started.elapsed().as_secs() < 60);
    assert!(run.join("hrnn-qa.ckpt").is_file());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run.join("hrnn-qa.report.json")).unwrap()).unwrap();
    assert_eq!(report["epochs"].as_array().unwrap().len(), 3);

    let resumed = t.path().join("resumed");
    let ckpt = run.join("hrnn-qa.ckpt");
    run_with(
        &["train", "--out", s(&resumed)],
        &data,
        &["--resume", s(&ckpt), "--epochs", "1", "--seed", "1"],
    );
    let report: serde_json::Value = serde_json::from_slice(&fs::read(resumed.join("hrnn-qa.report.json")).unwrap()).unwrap();
    assert_eq!(report["epochs"][0]["epoch"], 4);

    run_with(&["baseline", "--out", s(&run)], &data, &["--topics", "4", "--gibbs-iterations", "20"]);
    let ev = t.path().join("eval");
    run_with(
        &["evaluate", "--out", s(&ev)],
        &data,
        &["--checkpoint", s(&ckpt), "--baselines", s(&run)],
    );
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(ev.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["models"].as_array().unwrap().len(), 4, "{summary}");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(ev.join("report_hrnn-qa.json")).unwrap()).unwrap();
    let queries = report["report"]["queries"].as_u64().unwrap();
    let csv = fs::read_to_string(ev.join("queries_hrnn-qa.csv")).unwrap();
    assert_eq!(csv.lines().count() as u64, queries + 1);

    let users: Vec<String> = fs::read_to_string(data.join("log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["user"].as_str().unwrap().to_string())
        .collect();
    let att = t.path().join("att");
    run_with(&["attention", "--out", s(&att)], &data, &["--checkpoint", s(&ckpt), "--user", &users[0]]);
    let dump: serde_json::Value = serde_json::from_slice(&fs::read(att.join("attention.json")).unwrap()).unwrap();
    let rows = dump["rows"].as_array().unwrap();
    assert!(!rows.is_empty());
    let total: f64 = rows.iter().map(|r| r["weight"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);

    let rr = t.path().join("rr");
    run_with(&["rerank", "--out", s(&rr)], &data, &["--checkpoint", s(&ckpt)]);
    assert!(fs::read_to_string(rr.join("rerank.jsonl")).unwrap().lines().count() > 0);
}

#[test]
fn missing_baselines_are_reported_not_fatal() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data, "4", "2");
    let ev = t.path().join("eval");
    let empty = t.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    run_with(&["evaluate", "--out", s(&ev)], &data, &["--baselines", s(&empty)]);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(ev.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["models"], serde_json::json!(["original"]));
    assert!(summary["errors"].as_object().unwrap().contains_key("p-click"));
}
