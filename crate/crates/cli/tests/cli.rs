use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use srm_core::features::hybrid_feature_set;
use srm_core::io::to_json_pretty;
use srm_core::models::ChoiceModel;
use srm_core::synth::{PopulationConfig, TruthSpec};

fn srm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srm")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Writes a truth file and a small population config, returns their paths.
fn inputs(dir: &Path, n_dilemmas: usize) -> (PathBuf, PathBuf) {
    let fs = hybrid_feature_set();
    let w: Vec<f64> = (0..fs.len()).map(|i| (i % 5) as f64 * 0.3 - 0.6).collect();
    let truth = TruthSpec::from_model(&ChoiceModel::new(fs, w).unwrap());
    let cfg = PopulationConfig {
        n_dilemmas,
        ..Default::default()
    };
    let truth_path = dir.join("truth.json");
    let cfg_path = dir.join("population.json");
    std::fs::write(&truth_path, to_json_pretty(&truth).unwrap()).unwrap();
    std::fs::write(&cfg_path, to_json_pretty(&cfg).unwrap()).unwrap();
    (truth_path, cfg_path)
}

fn generate(dir: &Path, name: &str, n_dilemmas: usize) -> PathBuf {
    let (truth, cfg) = inputs(dir, n_dilemmas);
    let out = dir.join(name);
    let o = srm(&["gen", "--config", p(&cfg), "--truth", p(&truth), "--seed", "4", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn chisq_prints_statistic() {
    let o = srm(&["chisq", "--k1", "30", "--n1", "100", "--k2", "50", "--n2", "100"]);
    assert_eq!(o.status.code(), Some(0));
    let line = stdout(&o);
    let chi2: f64 = line.split_whitespace().next().unwrap().trim_start_matches("chi2=").parse().unwrap();
    assert!((chi2 - 25.0 / 3.0).abs() < 1e-9, "{line}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(srm(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(srm(&["chisq", "--k1", "5"]).status.code(), Some(2));
    assert_eq!(srm(&["chisq", "--k1", "5", "--n1", "3", "--k2", "1", "--n2", "3"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_two_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("model.json");
    let o = srm(&["fit", "--model", "hybrid", "--data", "/no/such/file.jsonl", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    assert!(!out.exists());
    assert!(!manifest(&out).exists());
}

#[test]
fn gen_is_deterministic_and_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let a = generate(tmp.path(), "a.jsonl", 200);
    let b = generate(tmp.path(), "b.jsonl", 200);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read_to_string(&a).unwrap().lines().count(), 200);

    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(manifest(&a)).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "gen");
    assert_eq!(m["seeds"]["seed"], 4);
    let digest = m["output_sha256"].as_object().unwrap();
    assert_eq!(digest.len(), 1);
    assert_eq!(digest.values().next().unwrap().as_str().unwrap().len(), 64);
}

#[test]
fn fit_and_residuals_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path(), "data.jsonl", 400);
    let model = tmp.path().join("hybrid.json");
    let o = srm(&["fit", "--model", "hybrid", "--data", p(&data), "--out", p(&model)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("accuracy="));
    assert!(manifest(&model).exists());

    let o = srm(&["residuals", "--kind", "smoothed", "--model", p(&model), "--data", p(&data)]);
    assert_eq!(o.status.code(), Some(2), "smoothed residuals need a reference");

    let csv = tmp.path().join("raw.csv");
    let o = srm(&[
        "residuals", "--kind", "raw", "--model", p(&model), "--data", p(&data), "--min-n", "1", "--top", "3", "--out",
        p(&csv),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4, "header plus three rows");
}

#[test]
fn session_lifecycle() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path(), "data.jsonl", 300);
    let config = tmp.path().join("session.json");
    std::fs::write(&config, r#"{"mlp": {"hidden_layers": [8], "max_epochs": 5}}"#).unwrap();
    let dir = tmp.path().join("session");
    let d = p(&dir);

    let o = srm(&["srm", "init", "--dir", d, "--data", p(&data), "--config", p(&config)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("iteration=0"));
    assert_eq!(
        srm(&["srm", "init", "--dir", d, "--data", p(&data)]).status.code(),
        Some(2),
        "init refuses to overwrite a session"
    );

    let o = srm(&["srm", "iterate", "--dir", d, "--text", "indicator legal_left signal:legal"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("iteration=1 features=23"));

    let o = srm(&["srm", "iterate", "--dir", d, "--text", "indicator broken nonsense:1"]);
    assert_eq!(o.status.code(), Some(2), "parse errors are usage errors");

    let o = srm(&["srm", "status", "--dir", d, "--epsilon", "1"]);
    assert!(o.status.success());
    assert!(stdout(&o).trim_end().ends_with("epsilon=1 stop=true"));

    let o = srm(&["srm", "status", "--dir", d, "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["history"].as_array().unwrap().len(), 2);

    let o = srm(&["srm", "replay", "--dir", d]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "iterations=2 identical=true");

    assert_eq!(srm(&["srm", "status", "--dir", p(tmp.path())]).status.code(), Some(2));
}

#[test]
fn demo_poly_small_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep.csv");
    let summary = tmp.path().join("summary.json");
    let o = srm(&[
        "demo-poly", "--sizes", "60,120", "--sims", "2", "--max-epochs", "5", "--seed", "1", "--out", p(&out),
        "--summary", p(&summary),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 2);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 5);
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(s.as_array().unwrap().len(), 2);
    assert!(manifest(&out).exists());
}
