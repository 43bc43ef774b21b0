use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const KEY: &str = "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f";

fn fairhub(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairhub"))
        .current_dir(dir)
        .env("FAIRHUB_DEID_KEY", KEY)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// A two-study corpus written by `fairhub synth`, with one ssn injected.
fn corpus(dir: &Path) {
    let spec = r#"{"seed": 9, "n_studies": 2, "rows_per_bundle": 30, "extra_variables": 7,
                   "injections": {"ssn": 1}}"#;
    fs::write(dir.join("spec.json"), spec).unwrap();
    let o = fairhub(dir, &["synth", "--spec", "spec.json", "--out", "corpus"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn studies(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir.join("corpus/studies"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn validators_report_and_exit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    let acc = &studies(d)[0];
    let b = format!("corpus/studies/{acc}/bundles/file01");
    let (data, dict, meta) = (format!("{b}/data.csv"), format!("{b}/dict.csv"), format!("{b}/meta.json"));

    assert_eq!(code(&fairhub(d, &["dict", "validate", &dict])), 0);
    assert_eq!(code(&fairhub(d, &["bundle", "validate", "--data", &data, "--dict", &dict])), 0);
    assert_eq!(code(&fairhub(d, &["metadata", "validate", &format!("corpus/studies/{acc}/study.json")])), 0);
    assert_eq!(code(&fairhub(d, &["metadata", "validate", &meta, "--kind", "file"])), 0);

    let o = fairhub(d, &["--format", "json", "scan", &data]);
    assert_eq!(code(&o), 1);
    let findings: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let detectors: Vec<&str> = findings.as_array().unwrap().iter().map(|f| f["detector"].as_str().unwrap()).collect();
    assert!(detectors.contains(&"ssn"), "{detectors:?}");

    let broken = d.join("broken.csv");
    let text = fs::read_to_string(d.join(&dict)).unwrap().replacen("participant_id,", "participant id,", 1);
    fs::write(&broken, text).unwrap();
    let o = fairhub(d, &["--format", "json", "dict", "validate", "broken.csv"]);
    assert_eq!(code(&o), 1);
    let issues: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(issues.as_array().unwrap().iter().any(|i| i["severity"] == "error"));
}

#[test]
fn deid_reads_key_from_env_only() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    let b = format!("corpus/studies/{}/bundles/file01", studies(d)[0]);
    let cfg = r#"{"id_column":"participant_id","direct_identifier_columns":["participant_name","var_003"],
                  "zip_columns":["zip_code"],"date_columns":["enroll_date","visit_date"],"age_columns":["age"]}"#;
    fs::write(d.join("deid.json"), cfg).unwrap();
    let args = [
        "deid", "--data", &format!("{b}/data.csv"), "--dict", &format!("{b}/dict.csv"), "--meta",
        &format!("{b}/meta.json"), "--config", "deid.json", "--out", "out",
    ];
    let o = fairhub(d, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("\"zips_generalized\""));
    let data = fs::read_to_string(d.join("out/data.csv")).unwrap();
    assert!(data.lines().skip(1).all(|l| l.contains("[REDACTED]")));
    assert!(!data.contains("-45-"), "ssn survived");
    let first = data.lines().nth(1).unwrap();
    let zip = first.split(',').nth(2).unwrap();
    assert_eq!(zip.len(), 3);
    let meta: Value = serde_json::from_str(&fs::read_to_string(d.join("out/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["deid_applied"], true);

    let o = Command::new(env!("CARGO_BIN_EXE_fairhub"))
        .current_dir(d)
        .env_remove("FAIRHUB_DEID_KEY")
        .args(args)
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIRHUB_DEID_KEY"));
    let o = fairhub(d, &["deid", "--key", KEY]);
    assert_eq!(code(&o), 2);
}

#[test]
fn pipeline_store_and_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    let clean = r#"{"seed": 100, "rows_per_bundle": 30, "extra_variables": 7}"#;
    fs::write(d.join("clean.json"), clean).unwrap();
    assert_eq!(code(&fairhub(d, &["synth", "--spec", "clean.json", "--out", "clean"])), 0);
    let acc = fs::read_dir(d.join("clean/studies")).unwrap().next().unwrap().unwrap().path();
    let c = d.join("corpus");
    fs::rename(&acc, c.join("studies").join(acc.file_name().unwrap())).unwrap();
    let mut accepted = 0;
    for acc in studies(d) {
        let o = fairhub(&c, &["pipeline", "run", &format!("studies/{acc}"), "--config", "pipeline.json", "--report", "r.json"]);
        assert!(matches!(code(&o), 0 | 1), "{}", String::from_utf8_lossy(&o.stderr));
        let report: Value = serde_json::from_str(&fs::read_to_string(c.join("r.json")).unwrap()).unwrap();
        let ok = code(&o) == 0;
        assert_eq!(report["verdict"] == "accepted", ok, "{report}");
        accepted += usize::from(ok);
    }
    // every injected study carries an ssn; only the clean one is stored
    assert_eq!(accepted, 1);

    assert_eq!(code(&fairhub(&c, &["catalog", "index", "--store", "store"])), 0);
    let o = fairhub(&c, &["--format", "json", "catalog", "search", "--store", "store"]);
    assert_eq!(code(&o), 0);
    let body: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(body["total"], 1);

    let o = fairhub(&c, &["catalog", "facets", "--store", "store", "--field", "program", "--csv"]);
    assert!(stdout(&o).starts_with("program,total\n"));
    assert_eq!(code(&fairhub(&c, &["catalog", "facets", "--store", "store", "--field", "colour"])), 2);
    assert_eq!(code(&fairhub(&c, &["catalog", "search", "--store", "nowhere"])), 3);
}

#[test]
fn harmonize_writes_cde_columns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    let b = format!("corpus/studies/{}/bundles/file01", studies(d)[1]);
    let o = fairhub(
        d,
        &[
            "harmonize", "--data", &format!("{b}/data.csv"), "--dict", &format!("{b}/dict.csv"), "--meta",
            &format!("{b}/meta.json"), "--mapping", "corpus/resources/mapping.json", "--codebook",
            "corpus/resources/codebook.json", "--out", "h",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let header = fs::read_to_string(d.join("h/data.csv")).unwrap().lines().next().unwrap().to_string();
    for col in ["nih_zip_code", "nih_age", "nih_education", "nih_sex"] {
        assert!(header.split(',').any(|h| h == col), "{header}");
    }
    let meta: Value = serde_json::from_str(&fs::read_to_string(d.join("h/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["harmonized"], true);
}
