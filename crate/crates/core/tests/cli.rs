use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use spoiler_core::synth::{generate, SynthConfig};

fn spoiler(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spoiler")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_corpus(dir: &Path, n_sentences: usize) {
    let corpus = generate(&SynthConfig { n_sentences, ..SynthConfig::default() });
    std::fs::write(dir.join("reviews.jsonl"), corpus.reviews_jsonl()).unwrap();
    std::fs::write(dir.join("titles.jsonl"), corpus.titles_jsonl()).unwrap();
}

#[test]
fn stats_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let reviews = dir.path().join("reviews.jsonl");
    std::fs::write(
        &reviews,
        concat!(
            r#"{"book_id":"b1","user_id":"u1","review_id":"r1","rating":4,"has_spoiler":true,"review_sentences":[[0,"Fun read."],[1,"She dies."]],"timestamp":"2017-01-01"}"#,
            "\n",
            "not json\n",
        ),
    )
    .unwrap();
    let out = dir.path().join("stats.json");
    let run = spoiler(&["stats", "--reviews", path(&reviews), "--out", path(&out)]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let stats: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(stats["n_reviews"], 1);
    assert_eq!(stats["n_spoiler_sentences"], 1);
    assert_eq!(stats["spoiler_len_mean"], 9.0);
    assert!(String::from_utf8_lossy(&run.stderr).contains(":2: skipped"));
}

#[test]
fn usage_errors_name_the_flag() {
    let run = spoiler(&["train", "--vocab", "v.json", "--config", "c.json"]);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("--reviews"));
    assert_eq!(spoiler(&["predict", "--unknown"]).status.code(), Some(1));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.json");
    let run = spoiler(&["stats", "--reviews", path(&dir.path().join("nope.jsonl")), "--out", path(&out)]);
    assert_eq!(run.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_corpus(d, 4000);
    let reviews = d.join("reviews.jsonl");
    let titles = d.join("titles.jsonl");
    let vocab = d.join("vocab.json");
    let config = d.join("config.json");
    std::fs::write(
        &config,
        r#"{"epochs":2,"batch_size":32,"network":{"embed_dim":8,"hidden_dim":8,"dropout_rate":0.4}}"#,
    )
    .unwrap();
    let before = std::fs::read(&reviews).unwrap();

    let ok = |args: &[&str]| {
        let run = spoiler(args);
        assert_eq!(run.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&run.stderr));
    };
    let data = ["--reviews", path(&reviews), "--titles", path(&titles)];
    let with_data = |rest: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = rest[..1].iter().map(|s| s.to_string()).collect();
        v.extend(data.iter().map(|s| s.to_string()));
        v.extend(rest[1..].iter().map(|s| s.to_string()));
        v
    };
    let call = |rest: &[&str]| {
        let args = with_data(rest);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    };

    call(&["build-vocab", "--vocab-size", "200", "--max-len", "40", "--out", path(&vocab), "--seed", "3"]);
    let trained = |ckpt: &Path, log: &Path| {
        call(&[
            "train",
            "--vocab",
            path(&vocab),
            "--config",
            path(&config),
            "--out-checkpoint",
            path(ckpt),
            "--log",
            path(log),
            "--seed",
            "3",
            "--deterministic",
        ]);
    };
    let (ckpt, log) = (d.join("model.json"), d.join("log.jsonl"));
    trained(&ckpt, &log);
    let (ckpt2, log2) = (d.join("model2.json"), d.join("log2.jsonl"));
    trained(&ckpt2, &log2);
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(&ckpt2).unwrap());
    assert_eq!(std::fs::read(&log).unwrap(), std::fs::read(&log2).unwrap());
    let log_lines: Vec<Value> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(log_lines.len(), 2);
    assert_eq!(log_lines[1]["epoch"], 2);
    assert_eq!(log_lines[1]["secs"], 0.0);

    let report = d.join("eval.json");
    call(&[
        "evaluate",
        "--checkpoint",
        path(&ckpt),
        "--vocab",
        path(&vocab),
        "--split",
        "test",
        "--report",
        path(&report),
        "--seed",
        "3",
    ]);
    let report: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let auc = report["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert!(report["roc"].as_array().unwrap().len() >= 2);

    let queries = d.join("queries.jsonl");
    std::fs::write(
        &queries,
        concat!(
            r#"{"title":"The Shadow of Arlen","sentence":"Arlen is murdered in the end."}"#,
            "\n",
            r#"{"title":"","sentence":"Loved the prose."}"#,
            "\n",
            r#"{"title":"x","sentence":"!!!"}"#,
            "\n",
        ),
    )
    .unwrap();
    let preds = d.join("preds.jsonl");
    ok(&["predict", "--checkpoint", path(&ckpt), "--vocab", path(&vocab), "--in", path(&queries), "--out", path(&preds)]);
    let preds: Vec<Value> = std::fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(preds.len(), 3);
    for p in &preds {
        let prob = p["p_spoiler"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&prob));
        assert_eq!(p["flag"].as_u64().unwrap(), u64::from(prob >= 0.5));
    }

    let base = d.join("baseline.json");
    call(&["baseline", "--report", path(&base), "--seed", "3"]);
    let base: Value = serde_json::from_slice(&std::fs::read(&base).unwrap()).unwrap();
    assert!(base["test"]["auc"].is_number());
    assert_eq!(base["model"]["weights"].as_array().unwrap().len(), 5);

    assert_eq!(std::fs::read(&reviews).unwrap(), before);
}

#[test]
fn invalid_vocab_size_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_corpus(d, 300);
    let vocab = d.join("vocab.json");
    let reviews = d.join("reviews.jsonl");
    let run = spoiler(&["build-vocab", "--reviews", path(&reviews), "--vocab-size", "2", "--out", path(&vocab), "--seed", "0"]);
    assert_eq!(run.status.code(), Some(1));
}
