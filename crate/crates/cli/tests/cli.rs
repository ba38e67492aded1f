use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::{json, Value};

fn fewshot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fewshot"))
        .args(args)
        .env_remove("FEWSHOT_BACKEND_URL")
        .env_remove("FEWSHOT_BACKEND_TOKEN")
        .env_remove("FEWSHOT_METRIC_TOKEN")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pool_jsonl(n: usize) -> String {
    (0..n)
        .map(|i| {
            let cds = i as f64 / (n - 1) as f64;
            let variety = if i % 2 == 0 { "mainland" } else { "taiwan" };
            format!("{}\n", json!({"source": format!("Satz {i}"), "target": format!("Sentence {i}"), "cds": cds, "variety": variety}))
        })
        .collect()
}

struct Fixture {
    dir: tempfile::TempDir,
    pool: PathBuf,
    table: PathBuf,
    test: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let pool = write(dir.path(), "pool.jsonl", &pool_jsonl(30));
    let table = json!({"rules": [
        {"query": "Danke", "outputs": [{"text": "Thanks", "weight": 3.0}, {"text": "Thank you", "weight": 1.0}]},
        {"query": "Hallo", "outputs": [{"text": "Hello"}]}
    ]});
    let table = write(dir.path(), "table.json", &table.to_string());
    let test = write(
        dir.path(),
        "test.jsonl",
        "{\"source\": \"Danke\", \"reference\": \"Thanks\"}\n{\"source\": \"Hallo\", \"reference\": \"Hello\"}\n",
    );
    Fixture { dir, pool, table, test }
}

#[test]
fn translate_writes_run_directory() {
    let f = fixture();
    let out = f.dir.path().join("run");
    let o = fewshot(&[
        "translate",
        "--pool",
        s(&f.pool),
        "--mock-table",
        s(&f.table),
        "--test",
        s(&f.test),
        "--output-dir",
        s(&out),
        "--num-samples",
        "16",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["manifest.json", "records.jsonl", "report.json", "report.txt"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let records: Vec<Value> = fs::read_to_string(out.join("records.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["selected"], "Thanks");
    assert_eq!(records[1]["selected"], "Hello");
    assert_eq!(records[0]["candidates"].as_array().unwrap().len(), 16);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["rng_seed"], 3);
    assert!(stdout(&o).starts_with("Metric"));
}

#[test]
fn config_file_with_flag_overrides() {
    let f = fixture();
    let cfg = json!({
        "pool": f.pool, "backend": {"kind": "mock", "table": f.table},
        "generation": {"num_samples": 8}, "rng_seed": 1
    });
    let cfg = write(f.dir.path(), "run.json", &cfg.to_string());
    let out = f.dir.path().join("run");
    let o = fewshot(&["translate", "--config", s(&cfg), "--test", s(&f.test), "--output-dir", s(&out), "--beam", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["generation"]["mode"]["type"], "beam");
    assert_eq!(manifest["records"][0]["candidates"].as_array().unwrap().len(), 1);
}

#[test]
fn validation_errors_exit_one() {
    let f = fixture();
    let o = fewshot(&["translate", "--pool", "/nonexistent.jsonl", "--mock-table", s(&f.table), "--test", s(&f.test)]);
    assert_eq!(code(&o), 1);
    let o =
        fewshot(&["translate", "--pool", s(&f.pool), "--mock-table", s(&f.table), "--test", s(&f.test), "--k", "31"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("31"));
    let o = fewshot(&["translate", "--pool", s(&f.pool), "--backend", "http", "--test", s(&f.test)]);
    assert_eq!(code(&o), 1, "missing url is a config problem");
}

#[test]
fn unreachable_backend_exits_two() {
    let f = fixture();
    let o = fewshot(&[
        "translate",
        "--pool",
        s(&f.pool),
        "--backend",
        "http",
        "--backend-url",
        "http://127.0.0.1:9/v1",
        "--test",
        s(&f.test),
        "--max-attempts",
        "1",
    ]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn failures_over_threshold_exit_three() {
    let f = fixture();
    let test = write(f.dir.path(), "t.txt", "Danke\nUnbekannt\n");
    let out = f.dir.path().join("run");
    let args =
        ["translate", "--pool", s(&f.pool), "--mock-table", s(&f.table), "--test", s(&test), "--output-dir", s(&out)];
    assert_eq!(code(&fewshot(&args)), 3);
    let mut relaxed = args.to_vec();
    relaxed.extend(["--max-failure-rate", "0.5"]);
    assert_eq!(code(&fewshot(&relaxed)), 0);
    let records = fs::read_to_string(out.join("records.jsonl")).unwrap();
    assert!(records.lines().nth(1).unwrap().contains("\"status\":\"failed\""));
}

#[test]
fn build_prompts_matches_translate_demos() {
    let f = fixture();
    let o = fewshot(&["build-prompts", "--pool", s(&f.pool), "--test", s(&f.test), "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["ref"], "Thanks");
    assert!(lines[0]["prompt"].as_str().unwrap().ends_with("German: Danke\nEnglish: "));

    let out = f.dir.path().join("run");
    let t = fewshot(&[
        "translate",
        "--pool",
        s(&f.pool),
        "--mock-table",
        s(&f.table),
        "--test",
        s(&f.test),
        "--output-dir",
        s(&out),
        "--seed",
        "3",
        "--num-samples",
        "2",
    ]);
    assert_eq!(code(&t), 0);
    let first: Value =
        serde_json::from_str(fs::read_to_string(out.join("records.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["prompt_hash"], lines[0]["meta"]["prompt_hash"]);
    let demos: Vec<Value> = first["demos"].as_array().unwrap().iter().map(|d| d["pool_index"].clone()).collect();
    assert_eq!(Value::Array(demos), lines[0]["meta"]["demos"]);
}

#[test]
fn mbr_rerank_reads_stdin() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_fewshot"))
        .args(["mbr-rerank", "--metric", "token-f1"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"{\"candidates\": [\"a b\", \"a b c\", \"x y\", \"a b\"]}\n{\"candidates\": [\"solo\"]}\n")
        .unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(code(&o), 0);
    let lines: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["selected"], "a b");
    assert_eq!(lines[0]["index"], 0);
    assert_eq!(lines[0]["expected_utilities"].as_array().unwrap().len(), 4);
    assert_eq!(lines[1], json!({"selected": "solo", "index": 0, "expected_utilities": [1.0]}));
}

#[test]
fn mbr_rerank_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "c.jsonl", "{\"candidates\": []}\n");
    assert_eq!(code(&fewshot(&["mbr-rerank", "--input", s(&input)])), 1);
    let input = write(dir.path(), "d.jsonl", "{\"candidates\": [\"a\"]}\n");
    assert_eq!(code(&fewshot(&["mbr-rerank", "--input", s(&input), "--metric", "bleurt"])), 1);
}

#[test]
fn evaluate_reports_lexical_and_formality() {
    let dir = tempfile::tempdir().unwrap();
    let terms = json!({"entries": [{"en": "pineapple", "forms": {"mainland": ["菠萝"], "taiwan": ["鳳梨"]}}]});
    let terms = write(dir.path(), "terms.json", &terms.to_string());
    let test = write(
        dir.path(),
        "test.jsonl",
        &format!(
            "{}\n{}\n",
            json!({"source": "pineapple", "reference": "我喜欢鳳梨", "term_entry": 0}),
            json!({"source": "pineapple", "reference": "我喜欢鳳梨", "term_entry": 0})
        ),
    );
    let hyps = write(dir.path(), "hyps.txt", "我喜欢鳳梨\n我喜欢菠萝\n");
    let report = dir.path().join("report.json");
    let o = fewshot(&[
        "evaluate",
        "--hyps",
        s(&hyps),
        "--test",
        s(&test),
        "--term-table",
        s(&terms),
        "--variety",
        "taiwan",
        "--output",
        s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["lexical"]["accuracy"], 0.5);
    assert!(stdout(&o).contains("lexical accuracy          50.0"));

    let test = write(
        dir.path(),
        "formality.jsonl",
        &format!(
            "{}\n",
            json!({"source": "Hast du Zeit?", "formal_ref": "Haben [Sie] Zeit?", "informal_ref": "Hast [du] Zeit?"})
        ),
    );
    let hyps = write(dir.path(), "f.txt", "Haben Sie Zeit?\n");
    let o = fewshot(&["evaluate", "--hyps", s(&hyps), "--test", s(&test), "--formality", "informal"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("formality accuracy         0.0"), "{}", stdout(&o));
    let o = fewshot(&["evaluate", "--hyps", s(&hyps), "--test", s(&two_items(dir.path()))]);
    assert_eq!(code(&o), 1);
}

fn two_items(dir: &Path) -> PathBuf {
    write(dir, "two.jsonl", "{\"source\": \"a\"}\n{\"source\": \"b\"}\n")
}

#[test]
fn pool_subcommands() {
    let f = fixture();
    let o = fewshot(&["pool", "stats", "--pool", s(&f.pool)]);
    assert_eq!(code(&o), 0);
    let stats: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(stats["count"], 30);
    assert_eq!(stats["buckets"], json!({"low": 10, "mid": 10, "high": 10}));
    assert_eq!(stats["varieties"]["taiwan"], 15);

    assert_eq!(code(&fewshot(&["pool", "validate", "--pool", s(&f.pool)])), 0);
    let bad = write(
        f.dir.path(),
        "bad.jsonl",
        "{\"source\": \"a\", \"target\": \"b\"}\n{\"source\": \"\", \"target\": \"b\"}\n",
    );
    let o = fewshot(&["pool", "validate", "--pool", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains('2'));

    let base = write(f.dir.path(), "base.txt", &(0..30).map(|i| format!("{}\n", 2.0 + i as f64)).collect::<String>());
    let trusted = write(f.dir.path(), "trusted.txt", &"2.0\n".repeat(30));
    let out = f.dir.path().join("scored.jsonl");
    let o = fewshot(&[
        "pool",
        "bucket",
        "--pool",
        s(&f.pool),
        "--ce-base",
        s(&base),
        "--ce-trusted",
        s(&trusted),
        "--output",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "low 10  mid 10  high 10");
    let first: Value = serde_json::from_str(fs::read_to_string(&out).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["cds"], 0.0);
    let short = write(f.dir.path(), "short.txt", "1.0\n");
    let o = fewshot(&[
        "pool",
        "bucket",
        "--pool",
        s(&f.pool),
        "--ce-base",
        s(&short),
        "--ce-trusted",
        s(&trusted),
        "--output",
        s(&out),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn bucket_sweep_and_style_exp() {
    let f = fixture();
    let out = f.dir.path().join("sweep");
    let o = fewshot(&[
        "bucket-sweep",
        "--pool",
        s(&f.pool),
        "--mock-table",
        s(&f.table),
        "--test",
        s(&f.test),
        "--output-dir",
        s(&out),
        "--num-samples",
        "4",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("CDS bucket"));
    for b in ["low", "mid", "high"] {
        assert!(out.join(b).join("manifest.json").exists());
    }

    let terms = json!({"entries": [{"en": "thanks", "forms": {"mainland": ["Thanks"], "taiwan": ["Thank you"]}}]});
    let terms = write(f.dir.path(), "terms.json", &terms.to_string());
    let out = f.dir.path().join("style");
    let o = fewshot(&[
        "style-exp",
        "--pool",
        s(&f.pool),
        "--mock-table",
        s(&f.table),
        "--test",
        s(&f.test),
        "--output-dir",
        s(&out),
        "--num-samples",
        "4",
        "--axis",
        "variety",
        "--value",
        "taiwan",
        "--term-table",
        s(&terms),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("matched"));
    assert!(out.join("matched/report.json").exists() && out.join("mismatched/report.json").exists());

    let o = fewshot(&[
        "style-exp",
        "--pool",
        s(&f.pool),
        "--mock-table",
        s(&f.table),
        "--test",
        s(&f.test),
        "--axis",
        "formality",
        "--value",
        "formal",
    ]);
    assert_eq!(code(&o), 1, "untagged formality pool");
}

#[test]
fn preprocess_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let words: Vec<String> = (0..400).map(|i| format!("w{}", i % 97)).collect();
    let corpus = write(dir.path(), "corpus.txt", &format!("{}\n\n{}\n", words.join(" "), words[..50].join(" ")));
    let out = dir.path().join("ex.jsonl");
    let stats = dir.path().join("stats.json");
    let args = |fmt: &str, out: &Path| {
        vec![
            "preprocess".to_string(),
            "--input".into(),
            s(&corpus).into(),
            "--output".into(),
            s(out).into(),
            "--format".into(),
            fmt.into(),
            "--max-sequence-length".into(),
            "64".into(),
            "--stats".into(),
            s(&stats).into(),
        ]
    };
    let run = |a: Vec<String>| fewshot(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let o = run(args("jsonl", &out));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let st: Value = serde_json::from_str(&fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(st["documents"], 3);
    assert_eq!(st["empty_documents"], 1);
    let lines = fs::read_to_string(&out).unwrap();
    assert_eq!(lines.lines().count() as u64, st["total"].as_u64().unwrap());
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(first["kind"].is_string() && first["target"].is_array());

    let bin = dir.path().join("ex.bin");
    assert_eq!(code(&run(args("binary", &bin))), 0);
    assert!(fs::metadata(&bin).unwrap().len() > 0);
    let mut bad = args("jsonl", &out);
    bad[8] = "1".into();
    assert_eq!(code(&run(bad)), 1);

    let test = write(dir.path(), "refs.txt", &format!("{}\nsomething unrelated entirely\n", words[10..30].join(" ")));
    let o = fewshot(&["audit-overlap", "--corpus", s(&corpus), "--test", s(&test), "--n", "15", "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["forward"], json!({"total": 2, "matched": 1, "percent": 50.0}));
    let o = fewshot(&[
        "audit-overlap",
        "--corpus",
        s(&corpus),
        "--test",
        s(&test),
        "--backward-test",
        s(&test),
        "--label",
        "de-en",
    ]);
    let table = stdout(&o);
    assert!(table.starts_with("Language Pair"));
    assert!(table.contains("de-en") && table.matches("50.0%").count() == 2, "{table}");
    assert_eq!(code(&fewshot(&["audit-overlap", "--corpus", s(&corpus), "--test", s(&test), "--n", "0"])), 1);
}
