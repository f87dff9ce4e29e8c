use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ngram-shap"));
    c.env_remove("NGRAM_SHAP_THREADS");
    c
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn asset(name: &str) -> PathBuf {
    root().join("assets").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn ok_stdout(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn schema(name: &str) -> Value {
    let text = fs::read_to_string(root().join("docs").join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Checks the subset of JSON Schema used by the documents in docs/.
fn validate(value: &Value, node: &Value, root: &Value, path: &str) -> Vec<String> {
    let mut errors = Vec::new();
    if let Some(r) = node.get("$ref").and_then(Value::as_str) {
        let name = r.strip_prefix("#/$defs/").expect("local refs only");
        return validate(value, &root["$defs"][name], root, path);
    }
    if let Some(t) = node.get("type") {
        let allowed: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => panic!("bad type keyword"),
        };
        let ok = allowed.iter().any(|t| match *t {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "number" => value.is_number(),
            "integer" => value.is_u64() || value.is_i64(),
            "boolean" => value.is_boolean(),
            "null" => value.is_null(),
            other => panic!("unknown type {other}"),
        });
        if !ok {
            errors.push(format!("{path}: expected {allowed:?}, got {value}"));
            return errors;
        }
    }
    if let Some(options) = node.get("enum").and_then(Value::as_array) {
        if !options.contains(value) {
            errors.push(format!("{path}: {value} not in {options:?}"));
        }
    }
    if let Some(x) = value.as_f64() {
        if let Some(lo) = node.get("minimum").and_then(Value::as_f64) {
            if x < lo {
                errors.push(format!("{path}: {x} < {lo}"));
            }
        }
        if let Some(hi) = node.get("maximum").and_then(Value::as_f64) {
            if x > hi {
                errors.push(format!("{path}: {x} > {hi}"));
            }
        }
    }
    if let Some(obj) = value.as_object() {
        for key in node
            .get("required")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
        {
            if !obj.contains_key(key.as_str().unwrap()) {
                errors.push(format!("{path}: missing {key}"));
            }
        }
        let props = node.get("properties").and_then(Value::as_object);
        for (k, v) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => errors.extend(validate(v, sub, root, &format!("{path}.{k}"))),
                None if node.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    errors.push(format!("{path}: unexpected key {k}"))
                }
                None => {}
            }
        }
    }
    if let Some(items) = value.as_array() {
        if let Some(n) = node.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < n {
                errors.push(format!("{path}: fewer than {n} items"));
            }
        }
        if let Some(n) = node.get("maxItems").and_then(Value::as_u64) {
            if (items.len() as u64) > n {
                errors.push(format!("{path}: more than {n} items"));
            }
        }
        if let Some(sub) = node.get("items") {
            for (i, v) in items.iter().enumerate() {
                errors.extend(validate(v, sub, root, &format!("{path}[{i}]")));
            }
        }
    }
    errors
}

fn assert_valid(value: &Value, schema_name: &str) {
    let s = schema(schema_name);
    let errors = validate(value, &s, &s, "$");
    assert!(errors.is_empty(), "{schema_name}: {errors:#?}");
}

/// First `n` corpus lines, for quicker corpus-level runs.
fn small_corpus(dir: &Path, n: usize) -> PathBuf {
    let text = fs::read_to_string(asset("corpus.tsv")).unwrap();
    let head: String = text.lines().take(n).map(|l| format!("{l}\n")).collect();
    let path = dir.join("small.tsv");
    fs::write(&path, head).unwrap();
    path
}

#[test]
fn schema_checker_rejects_bad_documents() {
    let s = schema("explain.schema.json");
    let bad: Value = serde_json::json!({"text": 3, "logit": 0.0});
    assert!(!validate(&bad, &s, &s, "$").is_empty());
}

#[test]
fn explain_json_matches_schema() {
    let model = asset("desk_model.json");
    let corpus = asset("corpus.tsv");
    let out = ok_stdout(&[
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--background-size",
        "300",
        "--text",
        "no problems great unit",
    ]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_valid(&v, "explain.schema.json");
    let attrs = v["attributions"].as_array().unwrap();
    assert_eq!(attrs.len(), 12);
    assert!(!v["deduped"].as_array().unwrap().is_empty());
    assert!(!v["merged"].as_array().unwrap().is_empty());
    let total: f64 = attrs.iter().map(|a| a["shap"].as_f64().unwrap()).sum();
    let base = v["base_value"].as_f64().unwrap();
    assert!((base + total - v["logit"].as_f64().unwrap()).abs() < 1e-8);
    // merged spans never overlap
    let mut spans: Vec<(u64, u64)> = v["merged"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| {
            (
                d["span"][0].as_u64().unwrap(),
                d["span"][1].as_u64().unwrap(),
            )
        })
        .collect();
    spans.sort();
    assert!(spans.windows(2).all(|w| w[0].1 < w[1].0));
}

#[test]
fn explain_table_and_text_file() {
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("review.txt");
    fs::write(&text, "waste of money . i returned it .").unwrap();
    let out = ok_stdout(&[
        "explain",
        "--model",
        asset("desk_model.json").to_str().unwrap(),
        "--corpus",
        small_corpus(dir.path(), 200).to_str().unwrap(),
        "--text-file",
        text.to_str().unwrap(),
        "--format",
        "table",
        "--topk",
        "3",
    ]);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("logit"));
    assert!(
        lines[1].starts_with("Filter") && lines[1].contains("N-gram") && lines[1].contains("SHAP")
    );
    assert_eq!(lines.len(), 5);
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        let table = dir.path().join(format!("table{i}.csv"));
        let capture = dir.path().join(format!("capture{i}.csv"));
        let out = bin()
            .env("NGRAM_SHAP_THREADS", threads)
            .args([
                "simulate",
                "--budgets",
                "100,200,500",
                "--reps",
                "5",
                "--seed",
                "7",
                "--out",
                table.to_str().unwrap(),
                "--capture-out",
                capture.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.push((fs::read(&table).unwrap(), fs::read(&capture).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let table = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert!(table.starts_with("feature,true,ks_100,ks_200,ks_500,ks_1022,err_mean_100"));
    assert_eq!(table.lines().count(), 11);
    let capture = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert!(capture.starts_with("M,K,capture_rate\n"));
}

#[test]
fn simulate_json_matches_schema() {
    let out = ok_stdout(&["simulate", "--reps", "2", "--seed", "1", "--format", "json"]);
    assert_valid(&serde_json::from_str(&out).unwrap(), "simulate.schema.json");
}

#[test]
fn capture_curve_single_row() {
    let out = ok_stdout(&["capture-curve", "--m", "1000", "--k", "1000"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "M,K,capture_rate");
    assert_eq!(lines.len(), 2);
    let rate: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!((rate - 0.066).abs() < 0.002, "{rate}");
}

#[test]
fn weights_curve_is_symmetric() {
    let out = ok_stdout(&["weights-curve", "--m", "100"]);
    let rows: Vec<(usize, f64)> = out
        .lines()
        .skip(1)
        .map(|l| {
            let (s, w) = l.split_once(',').unwrap();
            (s.parse().unwrap(), w.parse().unwrap())
        })
        .collect();
    assert_eq!(out.lines().next(), Some("cardinality,weight"));
    assert_eq!(rows.len(), 99);
    for &(s, w) in &rows {
        let mirror = rows[100 - s - 1].1;
        assert!((w - mirror).abs() <= 1e-15 * w.abs().max(1e-300), "{s}");
    }
}

#[test]
fn global_outputs_and_thread_independence() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 300);
    let model = asset("desk_model.json");
    let args = |format: &str| {
        vec![
            "global".to_string(),
            "--model".into(),
            model.to_str().unwrap().into(),
            "--corpus".into(),
            corpus.to_str().unwrap().into(),
            "--scorer".into(),
            "ura".into(),
            "--budget".into(),
            "200".into(),
            "--format".into(),
            format.into(),
            "--compare-abs-shap".into(),
        ]
    };
    let csv: Vec<Vec<u8>> = ["1", "4"]
        .iter()
        .map(|t| {
            let out = bin()
                .env("NGRAM_SHAP_THREADS", t)
                .args(args("csv"))
                .output()
                .unwrap();
            assert!(
                out.status.success(),
                "{}",
                String::from_utf8_lossy(&out.stderr)
            );
            out.stdout
        })
        .collect();
    assert_eq!(csv[0], csv[1]);
    let text = String::from_utf8(csv[0].clone()).unwrap();
    assert!(text.starts_with("polarity,ngram,score,m,best_rank,abs_shap\n"));
    assert!(text.lines().count() > 2);

    let a = args("json");
    let refs: Vec<&str> = a.iter().map(String::as_str).collect();
    let v: Value = serde_json::from_str(&ok_stdout(&refs)).unwrap();
    assert_valid(&v, "global.schema.json");
    assert_eq!(v["documents"], 300);
}

#[test]
fn filters_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("hist.csv");
    let model = asset("desk_model.json");
    let json = ok_stdout(&[
        "filters",
        "--model",
        model.to_str().unwrap(),
        "--format",
        "json",
        "--histogram-out",
        hist.to_str().unwrap(),
    ]);
    let v: Value = serde_json::from_str(&json).unwrap();
    assert_valid(&v, "filters.schema.json");
    assert_eq!(v["pairs"].as_array().unwrap().len(), 66);
    let h = fs::read_to_string(&hist).unwrap();
    assert_eq!(h.lines().next(), Some("lower,upper,count"));
    assert_eq!(h.lines().count(), 21);

    let csv = ok_stdout(&[
        "filters",
        "--model",
        model.to_str().unwrap(),
        "--segment-len",
        "2",
    ]);
    assert_eq!(
        csv.lines().next(),
        Some("filter_i,filter_j,similarity,degenerate")
    );
    // widths 2 and 3 only: 8 filters, 28 pairs
    assert_eq!(csv.lines().count(), 29);
}

#[test]
fn bundled_model_matches_schema() {
    let v: Value =
        serde_json::from_str(&fs::read_to_string(asset("desk_model.json")).unwrap()).unwrap();
    assert_valid(&v, "model.schema.json");
}

#[test]
fn gen_corpus_reproduces_bundled_assets() {
    let dir = tempfile::tempdir().unwrap();
    ok_stdout(&["gen-corpus", "--out-dir", dir.path().to_str().unwrap()]);
    for name in ["corpus.tsv", "vocab.txt", "embeddings.txt"] {
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            fs::read(asset(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn train_writes_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 100);
    let model = dir.path().join("m.json");
    ok_stdout(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--vocab",
        asset("vocab.txt").to_str().unwrap(),
        "--embeddings",
        asset("embeddings.txt").to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--epochs",
        "2",
        "--pad-len",
        "40",
    ]);
    let v: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_valid(&v, "model.schema.json");
    assert_eq!(v["l"], 40);
    assert!(Path::new(v["vocab_ref"].as_str().unwrap()).is_absolute());
    ok_stdout(&[
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--text",
        "it works great",
    ]);
}

#[test]
fn exit_codes() {
    let code = |args: &[&str]| run(args).status.code().unwrap();
    let model = asset("desk_model.json");
    let model = model.to_str().unwrap();
    assert_eq!(code(&["explain", "--bogus"]), 2);
    assert_eq!(code(&["nonsense"]), 2);
    assert_eq!(
        code(&[
            "explain",
            "--model",
            "/nonexistent/m.json",
            "--corpus",
            "x",
            "--text",
            "a"
        ]),
        3
    );

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"version": 1, "extra": true}"#).unwrap();
    assert_eq!(
        code(&[
            "explain",
            "--model",
            bad.to_str().unwrap(),
            "--corpus",
            "x",
            "--text",
            "a"
        ]),
        4
    );
    let bad_corpus = dir.path().join("bad.tsv");
    fs::write(&bad_corpus, "1\tfine\nbroken line\n").unwrap();
    let out = run(&[
        "explain",
        "--model",
        model,
        "--corpus",
        bad_corpus.to_str().unwrap(),
        "--text",
        "a",
    ]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.contains("line 2"), "{stderr}");

    assert_eq!(code(&["capture-curve", "--m", "1", "--k", "1"]), 5);
    assert_eq!(code(&["simulate", "--format", "table", "--reps", "1"]), 5);
    let threads = bin()
        .env("NGRAM_SHAP_THREADS", "many")
        .args(["weights-curve", "--m", "4"])
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(5));
}
