//! Command contracts: exit codes, ablation flags and output shapes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "generator": {
    "class_counts": {"TA": 5, "TVA": 5, "TSA": 5, "HP": 5, "SSL": 5, "IP": 5, "LP": 5},
    "dim": 8,
    "bag_size": [150, 200]
  },
  "mixed": {"count": 12},
  "train": {"epochs": 3, "attention_width": 4, "remix": {"remix_probability": 1.0}}
}"#;

fn hiermil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiermil")).args(args).output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Fixture {
    dir: tempfile::TempDir,
    config: PathBuf,
    manifest: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("small.json");
        std::fs::write(&config, SMALL).unwrap();
        let data = dir.path().join("data");
        ok(hiermil(&["gen-data", "--config", s(&config), "--seed", "1", "--out", s(&data)]));
        Fixture {
            manifest: data.join("manifest.jsonl"),
            dir,
            config,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(out);
        let mut args = vec!["train", "--config", s(&self.config), "--data", s(&self.manifest), "--seed", "3"];
        args.extend(["--out", s(&out)]);
        args.extend(extra);
        ok(hiermil(&args));
        out
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn history(dir: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(dir.join("history.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn gen_data_writes_every_bag_and_is_reproducible() {
    let fx = Fixture::new();
    let manifest = std::fs::read_to_string(&fx.manifest).unwrap();
    assert_eq!(manifest.lines().count(), 7 * 5 + 12);

    let again = fx.path("again");
    ok(hiermil(&["gen-data", "--config", s(&fx.config), "--seed", "1", "--out", s(&again)]));
    assert_eq!(std::fs::read(again.join("manifest.jsonl")).unwrap(), manifest.as_bytes());
}

#[test]
fn config_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"generator": {"alpha": 0.0}}"#).unwrap();
    let out = hiermil(&["gen-data", "--config", s(&bad), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&bad, r#"{"no_such_key": 1}"#).unwrap();
    assert_eq!(hiermil(&["gen-data", "--config", s(&bad)]).status.code(), Some(2));
    assert_eq!(hiermil(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(hiermil(&["remix-prob", "--n", "100", "--alpha", ""]).status.code(), Some(2));
}

#[test]
fn ablation_flags_reach_the_history() {
    let fx = Fixture::new();

    let full = history(&fx.train("full", &[]));
    assert_eq!(full.len(), 3);
    for e in &full {
        let l = &e["train_loss"];
        let sum = l["ce"].as_f64().unwrap() + l["iha"].as_f64().unwrap() + l["uhd"].as_f64().unwrap();
        assert!((l["total"].as_f64().unwrap() - sum).abs() <= 1e-12 * sum.abs().max(1.0));
    }
    assert!(full.iter().any(|e| e["provenance"]["remixed"].as_u64().unwrap() > 0));

    for e in history(&fx.train("no-remix", &["--no-remix"])) {
        assert_eq!(e["provenance"]["remixed"], 0);
        assert!(e["provenance"]["pure"].as_u64().unwrap() > 0);
    }
    for e in history(&fx.train("no-iha", &["--no-iha"])) {
        assert_eq!(e["train_loss"]["iha"], 0.0);
    }
}

#[test]
fn eval_reports_one_row_per_mixed_bag() {
    let fx = Fixture::new();
    let run = fx.train("run", &[]);
    let out_dir = fx.path("eval");
    ok(hiermil(&[
        "eval",
        "--checkpoint",
        s(&run.join("checkpoint.hmp")),
        "--data",
        s(&fx.manifest),
        "--split",
        "test-mixed",
        "--out",
        s(&out_dir),
    ]));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("eval-test-mixed.json")).unwrap()).unwrap();
    assert_eq!(report["priority"]["rows"].as_array().unwrap().len(), 12);
    let csv = std::fs::read_to_string(out_dir.join("priority-rows.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12);

    let stdout = ok(hiermil(&[
        "eval",
        "--checkpoint",
        s(&run.join("checkpoint.hmp")),
        "--data",
        s(&fx.manifest),
        "--split",
        "val",
    ]))
    .stdout;
    let report: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    assert!(report["metrics"]["fine"]["accuracy"].is_number());
    assert!(report.get("priority").is_none_or(|p| p.is_null()));
}

#[test]
fn eval_rejects_a_checkpoint_of_another_width() {
    let fx = Fixture::new();
    let run = fx.train("run", &[]);
    let wide = fx.path("wide.json");
    std::fs::write(&wide, SMALL.replace(r#""dim": 8"#, r#""dim": 12"#)).unwrap();
    let data = fx.path("wide-data");
    ok(hiermil(&["gen-data", "--config", s(&wide), "--out", s(&data)]));
    let out = hiermil(&[
        "eval",
        "--checkpoint",
        s(&run.join("checkpoint.hmp")),
        "--data",
        s(&data.join("manifest.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn remix_prob_single_cell() {
    let out = ok(hiermil(&["remix-prob", "--n", "100", "--alpha", "0.05", "--beta", "0.4"])).stdout;
    let text = String::from_utf8(out).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 2);
    let p: f64 = rows[1].split(',').nth(3).unwrap().parse().unwrap();
    assert!((p - 0.92745793725).abs() < 1e-10);
}
