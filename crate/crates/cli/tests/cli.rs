use std::path::Path;
use std::process::{Command, Output};

fn prulab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prulab")).args(args).output().expect("binary runs")
}

fn rows(stdout: &[u8]) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(stdout).lines().map(|l| serde_json::from_str(l).expect("json line")).collect()
}

#[test]
fn suite_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for path in [&a, &b] {
        let out = prulab(&["suite", "quick", "--seed", "0x2a", "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(!x.is_empty());
    assert_eq!(x, y);
    let text = String::from_utf8(x).unwrap();
    assert!(text.contains("\"seed\":42"));
    assert!(text.lines().last().unwrap().contains("\"all_pass\":true"));
}

#[test]
fn suite_requires_seed() {
    let out = prulab(&["suite", "quick"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_check_and_suite_exit_2() {
    assert_eq!(prulab(&["verify", "nonsense"]).status.code(), Some(2));
    assert_eq!(prulab(&["suite", "nonsense", "--seed", "1"]).status.code(), Some(2));
}

#[test]
fn verify_bintype_writes_one_row_and_summary() {
    let out = prulab(&["verify", "bintype", "--n", "2", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = rows(&out.stdout);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["check"], "bintype_collapse");
    assert_eq!(rows[0]["status"], "pass");
    assert!(rows[0]["runtime_ms"].is_u64());
    assert_eq!(rows[1]["summary"]["passed"], 1);
}

#[test]
fn caps_turn_oversized_checks_into_skips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[caps]\ndense_dim = 8\ntuple_budget = 500000000\npi_enumeration = 40320\n").unwrap();
    let out = prulab(&["--config", cfg.to_str().unwrap(), "verify", "closeness", "--n", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = rows(&out.stdout);
    assert_eq!(rows[0]["status"], "skipped");
    assert_eq!(rows[0]["details"]["cap"], "dense_dim");
}

#[test]
fn config_values_apply_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "s = 3\nt = 1\nseed = 5\n").unwrap();
    let out = prulab(&["--config", cfg.to_str().unwrap(), "classes"]);
    let rows = rows(&out.stdout);
    assert_eq!(rows[0]["params"]["s"], 3);
    let out = prulab(&["--config", cfg.to_str().unwrap(), "classes", "--s", "2"]);
    assert_eq!(rows_first_param(&out, "s"), 2);

    std::fs::write(&cfg, "bogus = 1\n").unwrap();
    assert_eq!(prulab(&["--config", cfg.to_str().unwrap(), "classes"]).status.code(), Some(2));
}

fn rows_first_param(out: &Output, key: &str) -> u64 {
    rows(&out.stdout)[0]["params"][key].as_u64().unwrap()
}

#[test]
fn classes_with_nu_column() {
    let out = prulab(&["classes", "--s", "2", "--t", "2", "--n", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(&out.stdout);
    assert_eq!(rows[0]["measured"], 3);
    assert_eq!(rows[0]["details"]["total_size"], 24);
    let table = rows[0]["details"]["rows"].as_array().unwrap();
    assert!(table.iter().all(|r| r["nu_re"].is_f64() && r["pass"] == true));
}

#[test]
fn flatness_and_csv_projection() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("rows.csv");
    let out = prulab(&[
        "flatness",
        "--n",
        "8",
        "--s",
        "4",
        "--trials",
        "5",
        "--seed",
        "3",
        "--csv",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let mut reader = csv::Reader::from_path(Path::new(&csv_path)).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["check", "status", "pass", "measured", "bound", "regime", "seed", "runtime_ms", "params"]
    );
    let records: Vec<_> = reader.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 1);
    assert_eq!(&records[0][0], "flatness");
    assert_eq!(&records[0][1], "pass");
}

#[test]
fn distinguish_small_run() {
    let out = prulab(&["distinguish", "--n", "4", "--shots", "2000", "--resamples", "20", "--seed", "9"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let rows = rows(&out.stdout);
    assert_eq!(rows[0]["check"], "distinguisher.keyed_vs_random");
    assert_eq!(rows[1]["check"], "distinguisher.haar_baseline");
    assert_eq!(prulab(&["distinguish", "--backing", "quantum"]).status.code(), Some(2));
}
