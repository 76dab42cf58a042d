use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use orbench::io::{read_predictions, read_qa_file};
use orbench::scorer::ScoreReport;

fn orbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orbench"))
        .args(args)
        .env_remove("ORBENCH_SEED")
        .env_remove("ORBENCH_THREADS")
        .env_remove("ORBENCH_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = orbench(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("config.json");
    fs::write(
        &cfg,
        r#"{"seed": 4, "simulator": {"n_clips": 4, "timepoints_per_clip": 20},
            "sampling": {"train": 3000, "val": 400, "test": 400},
            "scoring": {"n_resamples": 200}}"#,
    )
    .unwrap();
    cfg
}

fn report(path: &Path) -> ScoreReport {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn stagewise_pipeline_and_trivial_predictors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let ann = d.join("ann.jsonl");
    let qa = d.join("qa.jsonl");
    ok(&["--config", s(&cfg), "simulate", "--out", s(&ann)]);
    ok(&["--config", s(&cfg), "generate", "--annotations", s(&ann), "--out", s(&qa)]);
    ok(&["--config", s(&cfg), "sample", "--pairs", s(&qa), "--out-dir", s(d)]);
    let (header, test) = read_qa_file(d.join("test.jsonl")).unwrap();
    let header = header.unwrap();
    assert_eq!(header.split.as_deref(), Some("test"));
    assert!(header.table_digest.is_some());
    assert!(!test.is_empty());

    // echo predictions
    let echo = d.join("echo.jsonl");
    let lines: String = test
        .iter()
        .map(|q| serde_json::json!({"qa_id": q.id, "answer": q.answer}).to_string() + "\n")
        .collect();
    fs::write(&echo, lines).unwrap();
    let score = d.join("echo_score.json");
    ok(&["--config", s(&cfg), "score", "--benchmark", s(&d.join("test.jsonl")), "--predictions", s(&echo), "--out", s(&score)]);
    assert_eq!(report(&score).overall.mean, 1.0);

    // empty predictions
    let empty = d.join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    ok(&["--config", s(&cfg), "score", "--benchmark", s(&d.join("test.jsonl")), "--predictions", s(&empty), "--out", s(&score)]);
    let r = report(&score);
    assert_eq!(r.overall.mean, 0.0);
    assert_eq!(r.n_missing, test.len());

    // baseline output re-validates as predictions for the same benchmark
    let preds = d.join("base.jsonl");
    ok(&["baseline", "--train", s(&d.join("train.jsonl")), "--test", s(&d.join("test.jsonl")), "--out", s(&preds)]);
    assert_eq!(read_predictions(&preds).unwrap().len(), test.len());
    ok(&["--config", s(&cfg), "score", "--benchmark", s(&d.join("test.jsonl")), "--predictions", s(&preds), "--out", s(&score)]);
    let csv = ok(&["report", "--score", s(&score), "--format", "csv"]);
    let csv = String::from_utf8(csv.stdout).unwrap();
    assert!(csv.starts_with("scope,name,mean,ci_low,ci_high,n\n"));
    assert!(csv.lines().any(|l| l.starts_with("overall,overall,")));
}

#[test]
fn errors_are_json_records_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"format_version\":\"1.0.0\",\"dataset\":\"d\"}\n{oops\n").unwrap();
    let out = orbench(&["generate", "--annotations", s(&bad), "--out", s(&dir.path().join("o.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["stage"], "generate");
    assert!(err["error"]["message"].as_str().unwrap().contains("line 2"));

    let out = orbench(&["score", "--benchmark", "/nonexistent", "--predictions", "/nonexistent", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["stage"], "score");

    // usage errors come from the argument parser
    assert_eq!(orbench(&["sample"]).status.code(), Some(2));
}

#[test]
fn seed_flag_and_env_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let a = d.join("a.jsonl");
    let b = d.join("b.jsonl");
    let c = d.join("c.jsonl");
    ok(&["--config", s(&cfg), "--seed", "99", "simulate", "--out", s(&a)]);
    let out = Command::new(env!("CARGO_BIN_EXE_orbench"))
        .args(["--config", s(&cfg), "simulate", "--out", s(&b)])
        .env("ORBENCH_SEED", "99")
        .output()
        .unwrap();
    assert!(out.status.success());
    ok(&["--config", s(&cfg), "simulate", "--out", s(&c)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn memory_context_attached() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let ann = d.join("ann.jsonl");
    let qa = d.join("qa.jsonl");
    ok(&["--config", s(&cfg), "simulate", "--out", s(&ann)]);
    ok(&["generate", "--annotations", s(&ann), "--out", s(&qa), "--memory-k", "3"]);
    let (_, pairs) = read_qa_file(&qa).unwrap();
    for p in pairs.iter().take(500) {
        let m = orbench::memory::parse_memory(p.context.as_deref().unwrap()).unwrap();
        assert!(m.short_term.len() <= 3);
        assert_eq!(m.short_term.last().unwrap().0, p.timepoint_id);
    }
}

#[test]
fn distill_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let t = d.join("t.txt");
    let st = d.join("s.txt");
    fs::write(&t, "2 3\n1 2 3\n0 0 0\n").unwrap();
    fs::write(&st, "2 3\n1 2 3\n0 0 0\n").unwrap();
    let out = ok(&["distill-loss", "--teacher", s(&t), "--student", s(&st), "--temperature", "2", "--grad-out", s(&d.join("g.txt"))]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["loss"], 0.0);

    let w = d.join("w.txt");
    fs::write(&w, "3 4\n0 1 2 3\n10 11 12 13\n20 21 22 23\n").unwrap();
    let c = d.join("c.txt");
    ok(&["crop", "--weights", s(&w), "--rows", "2", "--cols", "2", "--out", s(&c)]);
    let m = orbench::distill::Matrix::read_text(std::io::BufReader::new(fs::File::open(&c).unwrap())).unwrap();
    assert_eq!(m.to_rows(), vec![vec![0.0, 1.0], vec![10.0, 11.0]]);

    let out = orbench(&["crop", "--weights", s(&w), "--rows", "5", "--cols", "2", "--out", s(&c)]);
    assert_eq!(out.status.code(), Some(1));
}
