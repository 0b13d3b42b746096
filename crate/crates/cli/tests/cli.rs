use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[fixture]
communities_per_city = 30
pois_per_city = 40

[run]
attempts_per_template = 20
parallelism = 2
"#;

fn geoqa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoqa"))
        .arg("--config")
        .arg(dir.join("geoqa.toml"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = geoqa(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("geoqa.toml"), CONFIG).unwrap();
    dir
}

/// Fixture through split; returns the workspace.
fn build(dir: &Path) {
    ok(dir, &["fixture"]);
    ok(dir, &["ingest"]);
    ok(dir, &["pairs"]);
    ok(dir, &["generate"]);
    ok(dir, &["validate"]);
    ok(dir, &["split"]);
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn full_pipeline_with_oracle_backend() {
    let w = workspace();
    let dir = w.path();
    build(dir);
    for split in ["train", "val", "test"] {
        assert!(dir.join("data/splits").join(format!("{split}.jsonl")).exists());
    }

    let table = ok(dir, &["run", "--name", "oracle", "--oracle"]);
    assert!(table.contains("All Acc"));
    let r = report(&dir.join("runs/oracle/report.json"));
    assert!(r["episodes"].as_u64().unwrap() > 0);
    assert_eq!(r["overall"]["accuracy"].as_f64(), Some(1.0));
    assert_eq!(r["trace"]["planning"]["value"].as_f64(), Some(1.0));

    // Re-scoring the persisted transcripts reproduces the report.
    let eval = ok(dir, &["eval", "--run-dir", dir.join("runs/oracle").to_str().unwrap()]);
    assert!(eval.contains("\"accuracy\": 1.0"));

    ok(dir, &["ablate", "--name", "ladder", "--oracle"]);
    let reports = report(&dir.join("runs/ladder/ablation.json"));
    let reports = reports.as_array().unwrap();
    let labels: Vec<&str> = reports.iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["none", "slu", "slu+sql", "slu+sql+api"]);
    for r in reports {
        assert_eq!(r["overall"]["accuracy"].as_f64(), Some(1.0), "{}", r["label"]);
    }
    for rung in &labels {
        assert!(dir.join("runs/ladder").join(rung).join("transcripts.jsonl").exists());
    }
}

#[test]
fn missing_backend_is_a_configuration_error() {
    let w = workspace();
    // Nothing has been built: the backend check must come first.
    let out = geoqa(w.path(), &["run", "--name", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--oracle"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let w = workspace();
    std::fs::write(w.path().join("geoqa.toml"), "[backend]\napi_key = \"sk-secret\"\n").unwrap();
    let out = geoqa(w.path(), &["templates", "--out", "t"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_directory_is_not_overwritten_silently() {
    let w = workspace();
    let dir = w.path();
    build(dir);
    ok(dir, &["run", "--name", "r", "--oracle", "--inject", "slu,sql"]);
    let out = geoqa(dir, &["run", "--name", "r", "--oracle"]);
    assert_eq!(out.status.code(), Some(2));
    let r = report(&dir.join("runs/r/report.json"));
    assert_eq!(r["label"].as_str(), Some("slu+sql"));
    ok(dir, &["run", "--name", "r", "--oracle", "--overwrite"]);
    assert_eq!(report(&dir.join("runs/r/report.json"))["label"].as_str(), Some("none"));
}

#[test]
fn tampered_dataset_fails_validation() {
    let w = workspace();
    let dir = w.path();
    build(dir);
    let path = dir.join("data/dataset.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut first: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    first["id"] = serde_json::json!("tampered");
    first["sql_trace"][0]["statement"] = serde_json::json!("SELECT 1");
    lines[0] = first.to_string();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = geoqa(dir, &["validate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tampered"));
}

#[test]
fn building_twice_is_byte_identical() {
    let a = workspace();
    let b = workspace();
    build(a.path());
    build(b.path());
    for f in [
        "data/dataset.jsonl",
        "data/dataset.report.json",
        "data/cache.jsonl",
        "data/splits/train.jsonl",
        "data/splits/test.jsonl",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between builds");
    }
}

#[test]
fn cache_populate_fills_a_fresh_cache() {
    let w = workspace();
    let dir = w.path();
    build(dir);
    std::fs::remove_file(dir.join("data/cache.jsonl")).unwrap();
    let out = ok(dir, &["cache-populate"]);
    assert!(out.contains("0 failed"), "{out}");
    ok(dir, &["validate"]);
}

#[test]
fn unreachable_backend_exits_with_backend_failure() {
    let w = workspace();
    let dir = w.path();
    build(dir);
    let config = format!(
        "{CONFIG}\n[backend]\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\nmodel = \"none\"\ntimeout_secs = 2\n"
    );
    std::fs::write(dir.join("geoqa.toml"), config).unwrap();
    let out = geoqa(dir, &["run", "--name", "down"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&dir.join("runs/down/report.json"));
    assert_eq!(r["unanswerable"], r["episodes"]);
    assert!(r["backend_errors"].as_u64().unwrap() > 0);
}
