use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_novelwords"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn corpus(dir: &Path) {
    let out = run(dir, &["generate", "--out", "c.txt", "--m", "3000", "--seed", "5", "--model-out", "m.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_writes_corpus_sidecar_and_model() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let side: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("c.txt.json")).unwrap()).unwrap();
    assert_eq!(side["M"], 3000);
    assert_eq!(side["config"]["seed"], 5);
    assert_eq!(side["config"]["n"], 200);
    let model: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(model["W"], 30);
    assert!(model["config"].is_object());
}

#[test]
fn detect_recovers_planted_words_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let args = ["detect", "--corpus", "c.txt", "--k", "3", "--p", "300", "--seed", "11"];
    let a = json(&run(dir.path(), &args));
    let b = json(&run(dir.path(), &args));
    let mut sel: Vec<u64> = a["selected"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    sel.sort();
    assert_eq!(sel, vec![0, 1, 2]);
    assert_eq!(a["selected"], b["selected"]);
    assert_eq!(a["phat"], b["phat"]);
    assert_eq!(a["config"]["p"], 300);
    assert_eq!(a["seed"], 11);
    for stage in ["split", "cooc", "project", "select", "total"] {
        assert!(a["timing_ms"][stage].is_number(), "{stage}");
    }
}

#[test]
fn distributed_detect_matches_single_node() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let base = ["detect", "--corpus", "c.txt", "--k", "3", "--p", "200"];
    let single = json(&run(dir.path(), &base));
    let sharded = json(&run(dir.path(), &[&base[..], &["--shards", "4"]].concat()));
    assert_eq!(single["selected"], sharded["selected"]);
    assert_eq!(single["phat"], sharded["phat"]);
    assert!(sharded["distributed"]["bytes"]["to_coordinator"].as_u64().unwrap() > 0);
    let light = json(&run(dir.path(), &[&base[..], &["--shards", "4", "--light"]].concat()));
    assert_eq!(light["distributed"]["mode"], "light");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    std::fs::write(dir.path().join("cfg.toml"), "[detect]\nk = 3\np = 40\nseed = 2\n").unwrap();
    let out = json(&run(dir.path(), &["--config", "cfg.toml", "detect", "--corpus", "c.txt", "--p", "60"]));
    assert_eq!(out["config"]["p"], 60);
    assert_eq!(out["config"]["seed"], 2);
    assert_eq!(out["config"]["k"], 3);
}

#[test]
fn csv_output_has_one_row_per_word() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let out = run(dir.path(), &["detect", "--corpus", "c.txt", "--k", "3", "--output", "csv", "--out", "r.csv"]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "word,phat,nbd_size,selected_rank");
    assert_eq!(lines.len(), 31);
    assert!(dir.path().join("r.csv.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    std::fs::write(dir.path().join("bad.txt"), "3\n1\n1\n1 1 +2\n").unwrap();
    assert_eq!(run(dir.path(), &["detect", "--corpus", "bad.txt", "--k", "1"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["detect", "--corpus", "c.txt"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["detect", "--corpus", "c.txt", "--k", "29"]).status.code(), Some(4));

    std::fs::write(dir.path().join("cfg.toml"), "[detect]\nbogus = 1\n").unwrap();
    let out = run(dir.path(), &["--config", "cfg.toml", "detect", "--corpus", "c.txt", "--k", "3"]);
    assert_eq!(out.status.code(), Some(2));

    // The figure's own prior has a degenerate normalized correlation.
    assert!(run(dir.path(), &["generate", "--figure1", "beta1", "--m", "10", "--out", "f.txt", "--model-out", "f.json"])
        .status
        .success());
    assert_eq!(run(dir.path(), &["oracle", "--model", "f.json"]).status.code(), Some(3));
}

#[test]
fn check_reports_conditions() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("r.csv"), "1,0.5,0.5\n0.5,1,0.5\n0.5,0.5,1\n").unwrap();
    let out = json(&run(dir.path(), &["check", "--matrix", "r.csv"]));
    assert_eq!(out["simplicial"], true);
    assert_eq!(out["diag_dominant"], true);

    std::fs::write(dir.path().join("s.csv"), "1,0,1\n0,1,1\n0.5,0.5,1\n").unwrap();
    let out = json(&run(dir.path(), &["check", "--matrix", "s.csv"]));
    assert_eq!(out["simplicial"], false);
    assert_eq!(out["violating_row"], 2);

    std::fs::write(dir.path().join("n.csv"), "1,0\n0,1\n1,1\n").unwrap();
    assert_eq!(run(dir.path(), &["check", "--matrix", "n.csv"]).status.code(), Some(2));
}

#[test]
fn adversarial_models_differ_but_match_in_observations() {
    let dir = tempfile::tempdir().unwrap();
    let out = json(&run(dir.path(), &["adversarial", "--k", "3", "--seed", "4", "--out", "adv"]));
    assert!(out["invariant_violations"].as_array().unwrap().is_empty());
    assert!(out["max_observation_difference"].as_f64().unwrap() < 1e-12);
    assert_ne!(out["novel_words_beta1"], out["novel_words_beta2"]);
    assert!(dir.path().join("adv.beta1.json").exists());
    assert!(dir.path().join("adv.beta2.json").exists());
}

#[test]
fn experiment_and_timing_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = json(&run(
        dir.path(),
        &["experiment", "--ladder", "200,2000", "--trials", "3", "--p", "100", "--seed", "1", "--out", "ex"],
    ));
    assert_eq!(out["points"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("ex.csv").exists());
    let full: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("ex.json")).unwrap()).unwrap();
    assert_eq!(full["trials"].as_array().unwrap().len(), 6);
    assert_eq!(full["config"]["ladder"], serde_json::json!([200, 2000]));

    let out = json(&run(
        dir.path(),
        &["timing", "--axis", "p", "--values", "20,40", "--w", "20", "--m", "200", "--repeats", "1", "--out", "t"],
    ));
    assert_eq!(out["rows"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("t.csv").exists());
}
