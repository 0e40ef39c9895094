mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use botwatch::features::extract_features;
use botwatch::{ingest, mlp, normalize};
use sha2::{Digest, Sha256};

use common::{fixture, star_dir};

fn botwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_botwatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = botwatch(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn digest(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

/// Splits the committed benchmark dataset and builds train/test CSVs.
struct Bench {
    dir: tempfile::TempDir,
}

impl Bench {
    fn new() -> Self {
        let bench = Bench {
            dir: tempfile::tempdir().unwrap(),
        };
        let ds = fixture("synth_860.ndjson");
        ok(&[
            "split",
            "--dataset",
            s(&ds),
            "--train-out",
            s(&bench.p("tr.ndjson")),
            "--test-out",
            s(&bench.p("te.ndjson")),
        ]);
        ok(&[
            "build",
            "--dataset",
            s(&bench.p("tr.ndjson")),
            "--csv-out",
            s(&bench.p("tr.csv")),
            "--stats-out",
            s(&bench.p("st.json")),
        ]);
        ok(&[
            "build",
            "--dataset",
            s(&bench.p("te.ndjson")),
            "--csv-out",
            s(&bench.p("te.csv")),
            "--stats-in",
            s(&bench.p("st.json")),
        ]);
        bench
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

#[test]
fn synth_matches_committed_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.ndjson");
    ok(&[
        "--seed",
        "42",
        "synth",
        "--n",
        "860",
        "--bot-fraction",
        "0.5",
        "--out",
        s(&out),
    ]);
    assert_eq!(
        std::fs::read(&out).unwrap(),
        std::fs::read(fixture("synth_860.ndjson")).unwrap()
    );
    let again = dir.path().join("b.ndjson");
    ok(&["synth", "--out", s(&again)]);
    assert_eq!(digest(&out), digest(&again));
}

#[test]
fn crawl_star_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full.ndjson");
    ok(&[
        "crawl",
        "--fixture-dir",
        s(&star_dir()),
        "--seed-account",
        "hub",
        "--out",
        s(&full),
        "--simulated-clock",
    ]);
    assert_eq!(std::fs::read_to_string(&full).unwrap().lines().count(), 6);

    let star = star_dir();
    let tight = ["--max-requests", "8", "--window-secs", "30", "--simulated-clock"];
    for k in 0..=6 {
        let part = dir.path().join(format!("part{k}.ndjson"));
        let steps = k.to_string();
        let mut first = vec![
            "crawl",
            "--fixture-dir",
            s(&star),
            "--seed-account",
            "hub",
            "--out",
            s(&part),
        ];
        first.extend(["--max-steps", &steps]);
        first.extend(tight);
        ok(&first);
        let mut second = vec!["crawl", "--fixture-dir", s(&star), "--resume", "--out", s(&part)];
        second.extend(tight);
        ok(&second);
        assert_eq!(digest(&part), digest(&full), "interrupted after {k} steps");
    }
}

#[test]
fn missing_fixture_dir_fails_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = botwatch(&[
        "crawl",
        "--fixture-dir",
        "/nonexistent/fixtures",
        "--seed-account",
        "a",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/fixtures"));
}

#[test]
fn build_is_deterministic_and_matches_transform() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture("synth_860.ndjson");
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    ok(&["build", "--dataset", s(&ds), "--csv-out", s(&a)]);
    ok(&["build", "--dataset", s(&ds), "--csv-out", s(&b)]);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 861);
    assert_eq!(digest(&a), digest(&b));

    let stats = normalize::load_stats(&normalize::sidecar_path(&a)).unwrap();
    let records = ingest::load_dataset(&ds).unwrap();
    for (line, record) in text.lines().skip(1).zip(records.records()).step_by(37) {
        let features = extract_features(record).to_array();
        for (j, field) in line.split(',').take(9).enumerate() {
            let expected = normalize::transform_value(features[j], stats.column_mins[j]).unwrap();
            assert!(
                (field.parse::<f64>().unwrap() - expected).abs() <= 5e-7,
                "{} column {j}",
                record.account_id
            );
        }
    }
}

#[test]
fn train_eval_predict_pipeline() {
    let bench = Bench::new();
    let model = bench.p("m.json");
    ok(&["train", "--csv", s(&bench.p("tr.csv")), "--model-out", s(&model)]);
    let trace = std::fs::read_to_string(bench.p("m.trace.tsv")).unwrap();
    assert_eq!(trace.lines().count(), 201);

    let again = bench.p("m2.json");
    ok(&["train", "--csv", s(&bench.p("tr.csv")), "--model-out", s(&again)]);
    assert_eq!(digest(&model), digest(&again));

    let one = bench.p("one.json");
    ok(&[
        "train",
        "--csv",
        s(&bench.p("tr.csv")),
        "--model-out",
        s(&one),
        "--passes",
        "1",
    ]);
    assert_eq!(
        std::fs::read_to_string(bench.p("one.trace.tsv"))
            .unwrap()
            .lines()
            .count(),
        2
    );

    let report = bench.p("report.json");
    let table = ok(&[
        "eval",
        "--model",
        s(&model),
        "--csv",
        s(&bench.p("te.csv")),
        "--json-out",
        s(&report),
    ]);
    assert!(table.contains("accuracy"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    for key in ["accuracy", "precision", "recall", "f1"] {
        assert!(json[key].is_f64(), "{key} missing in {json}");
    }

    let accounts = [fixture("account_three_tags.json"), star_dir().join("accounts/hub.json")];
    let output = ok(&[
        "predict",
        "--model",
        s(&model),
        "--stats",
        s(&bench.p("st.json")),
        s(&accounts[0]),
        s(&accounts[1]),
    ]);
    let loaded = mlp::load_model(&model).unwrap();
    let stats = normalize::load_stats(&bench.p("st.json")).unwrap();
    let expected: String = accounts
        .iter()
        .map(|path| {
            let account = ingest::parse_account(&std::fs::read(path).unwrap()).unwrap();
            let row = normalize::transform_row(&extract_features(&account), &stats, Default::default()).unwrap();
            let p = loaded.predict(&row.values).unwrap();
            format!("{}\t{}\t{:.6}\n", account.account_id, p.class, p.score)
        })
        .collect();
    assert_eq!(output, expected);
}

#[test]
fn perfect_model_on_tiny_set() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("tiny.csv");
    let mut text = normalize::csv_header() + "\n";
    for i in 0..10 {
        let (v, label) = if i % 2 == 0 { ("0.05", 0) } else { ("0.95", 1) };
        text += &format!("{}{label}\n", format!("{v},").repeat(9));
    }
    std::fs::write(&csv, text).unwrap();
    let model = dir.path().join("m.json");
    ok(&["train", "--csv", s(&csv), "--model-out", s(&model)]);
    let out = ok(&["eval", "--model", s(&model), "--csv", s(&csv)]);
    let json_start = out.find('{').unwrap();
    let json: serde_json::Value = serde_json::from_str(&out[json_start..]).unwrap();
    assert_eq!(json["accuracy"].as_f64(), Some(1.0));
}

#[test]
fn empty_csv_is_a_data_error() {
    let bench = Bench::new();
    let model = bench.p("m.json");
    ok(&[
        "train",
        "--csv",
        s(&bench.p("tr.csv")),
        "--model-out",
        s(&model),
        "--passes",
        "1",
    ]);
    let empty = bench.p("empty.csv");
    std::fs::write(&empty, normalize::csv_header() + "\n").unwrap();
    let out = botwatch(&["eval", "--model", s(&model), "--csv", s(&empty)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("EmptyInput"));
    let out = botwatch(&["train", "--csv", s(&empty), "--model-out", s(&bench.p("x.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_table_is_complete_and_deterministic() {
    let bench = Bench::new();
    let (a, b) = (bench.p("a.tsv"), bench.p("b.tsv"));
    for out in [&a, &b] {
        ok(&[
            "sweep",
            "--train-csv",
            s(&bench.p("tr.csv")),
            "--eval-csv",
            s(&bench.p("te.csv")),
            "--rates",
            "0.02,0.1,0.02",
            "--passes",
            "20",
            "--tsv-out",
            s(out),
        ]);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1], lines[3]);
    assert_eq!(digest(&a), digest(&b));
}

#[test]
fn exit_codes() {
    assert_eq!(botwatch(&["--help"]).status.code(), Some(0));
    assert_eq!(botwatch(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(botwatch(&["train", "--csv"]).status.code(), Some(1));
    assert_eq!(
        botwatch(&["train", "--csv", "x", "--model-out", "y", "--batch-size", "none"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        botwatch(&["eval", "--model", "/no/model.json", "--csv", "/no/x.csv"])
            .status
            .code(),
        Some(2)
    );

    let bench = Bench::new();
    let out = botwatch(&[
        "train",
        "--csv",
        s(&bench.p("tr.csv")),
        "--model-out",
        s(&bench.p("m.json")),
        "--learning-rate",
        "1e306",
        "--passes",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_file_is_applied_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 7\n[synth]\nbot_fraction = 1.0\n").unwrap();
    let out = dir.path().join("d.ndjson");
    ok(&["--config", s(&cfg), "synth", "--n", "5", "--out", s(&out)]);
    let ds = ingest::load_dataset(&out).unwrap();
    assert!(ds.records().iter().all(|r| r.label == Some(botwatch::Class::Bot)));

    std::fs::write(&cfg, "sed = 7\n").unwrap();
    assert_eq!(
        botwatch(&["--config", s(&cfg), "synth", "--out", s(&out)])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn flag_lists_high_ratio_accounts() {
    let out = ok(&["flag", "--dataset", s(&fixture("synth_860.ndjson")), "--threshold", "5"]);
    let ds = ingest::load_dataset(&fixture("synth_860.ndjson")).unwrap();
    let expected = ingest::flag_by_tff(&ds, 5.0).unwrap();
    let got: Vec<_> = out.lines().map(|l| l.split('\t').next().unwrap().to_string()).collect();
    assert_eq!(got, expected);
}

#[test]
fn closed_stdout_is_not_a_crash() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("big.ndjson");
    ok(&["synth", "--n", "20000", "--out", s(&data)]);
    let mut child = Command::new(env!("CARGO_BIN_EXE_botwatch"))
        .args(["flag", "--dataset", s(&data), "--threshold", "0.001"])
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    drop(child.stdout.take());
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stderr.is_empty());
}
