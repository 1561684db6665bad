use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sumo_core::data::{load_binary_csv, write_binary_csv};

fn sumo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sumo")).args(args).output().unwrap()
}

fn sumo_out(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sumo")).args(args).arg("--out").arg(out).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn invalid_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&sumo_out(&["toy-unbiased", "--trials", "0"], &out)), 2);
    assert_eq!(code(&sumo_out(&["toy-unbiased", "--dist", "fixed(k0=3)"], &out)), 2);
    assert_eq!(code(&sumo_out(&["toy-unbiased", "--dist", "zeta_tail(alpha=0)"], &out)), 2);
    assert_eq!(code(&sumo_out(&["toy-unbiased", "--no-such-flag"], &out)), 2);
    assert_eq!(code(&sumo(&["toy-unbiased", "--trials", "10"])), 2, "missing --out");
    assert!(!out.exists());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.toml");
    fs::write(&cfg, "experiment = \"toy-unbiased\"\ndim = 3\ntrials = 50\nseed = 9\n").unwrap();
    let out = dir.path().join("o");
    let o = sumo_out(&["toy-unbiased", "--config", cfg.to_str().unwrap(), "--seed", "4"], &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = summary(&out);
    assert_eq!(s["config"]["dim"], 3);
    assert_eq!(s["config"]["trials"], 50);
    assert_eq!(s["config"]["seed"], 4);
    assert!(s["config"].get("out").is_none());
    assert_eq!(s["results"]["theta"].as_array().unwrap().len(), 3);

    let echoed = fs::read_to_string(out.join("config.toml")).unwrap();
    let body: String = echoed.lines().skip(1).collect::<Vec<_>>().join("\n");
    let rerun_cfg = dir.path().join("echoed.toml");
    fs::write(&rerun_cfg, body).unwrap();
    let out2 = dir.path().join("o2");
    let o = sumo_out(&["toy-unbiased", "--config", rerun_cfg.to_str().unwrap()], &out2);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(out.join("summary.json")).unwrap(),
        fs::read(out2.join("summary.json")).unwrap(),
        "the echoed config reproduces the run"
    );
}

#[test]
fn bad_config_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let wrong = dir.path().join("wrong.toml");
    fs::write(&wrong, "experiment = \"qpbo\"\n").unwrap();
    assert_eq!(code(&sumo_out(&["toy-unbiased", "--config", wrong.to_str().unwrap()], &out)), 2);
    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, "dimm = 3\n").unwrap();
    assert_eq!(code(&sumo_out(&["toy-unbiased", "--config", unknown.to_str().unwrap()], &out)), 2);
    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&sumo_out(&["toy-unbiased", "--config", missing.to_str().unwrap()], &out)), 4);
}

#[test]
fn outputs_carry_schema_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = sumo_out(&["convergence", "--kmax", "8", "--trials", "20"], &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let moments = fs::read_to_string(out.join("moments.csv")).unwrap();
    let mut lines = moments.lines();
    assert_eq!(lines.next(), Some("# schema: moments/v1"));
    assert_eq!(lines.next(), Some("k,delta_sq,grad_delta_sq,cross_term"));
    assert_eq!(lines.count(), 8);
    assert!(fs::read_to_string(out.join("config.toml")).unwrap().starts_with("# schema: config/v1\n"));
    let s = summary(&out);
    assert_eq!(s["schema"], "summary/v1");
    assert_eq!(s["experiment"], "convergence");
    assert!(s["build_id"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    let timing: Value = serde_json::from_str(&fs::read_to_string(out.join("timing.json")).unwrap()).unwrap();
    assert_eq!(timing["schema"], "timing/v1");
    assert!(timing["elapsed_seconds"].as_f64().unwrap() >= 0.0);
    let first_key = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(first_key.trim_start_matches(['{', '\n', ' ']).starts_with("\"schema\""));
}

#[test]
fn synthetic_data_matches_p_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = sumo_out(
        &["gen-synthetic", "--dim", "4", "--components", "1", "--p", "0.5", "--rows", "10000", "--seed", "2"],
        &out,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let path = out.join("data.csv");
    let rows = load_binary_csv(&path).unwrap();
    assert_eq!(rows.len(), 10000);
    for j in 0..4 {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
        assert!((mean - 0.5).abs() <= 0.01, "pixel {j}: {mean}");
    }
    let again = dir.path().join("again.csv");
    write_binary_csv(&again, &rows).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    let mixture: Value = serde_json::from_str(&fs::read_to_string(out.join("mixture.json")).unwrap()).unwrap();
    assert_eq!(mixture["schema"], "bernoulli-mixture/v1");
}

#[test]
fn density_reads_files_and_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let o = sumo_out(&["gen-synthetic", "--dim", "6", "--rows", "300"], &data);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let train = data.join("data.csv");

    let out = dir.path().join("fit");
    let o = sumo_out(
        &["density", "--data", "file", "--train-file", train.to_str().unwrap(), "--steps", "20", "--eval-k", "20"],
        &out,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = summary(&out);
    assert_eq!(s["results"]["train_rows"], 200);
    assert_eq!(s["results"]["test_rows"], 100);
    assert!(s["results"]["true_test_log_likelihood"].is_null());
    assert!(s["results"]["test_log_likelihood"].as_f64().unwrap() < 0.0);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "0,1,1\n1,0,1\n1,2,0\n").unwrap();
    let o = sumo_out(&["density", "--data", "file", "--train-file", bad.to_str().unwrap()], &dir.path().join("x"));
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn oracle_is_skipped_above_the_exact_limit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = sumo_out(&["qpbo", "--d", "30", "--policy", "indep", "--steps", "10", "--oracle"], &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    assert!(!out.join("oracle.json").exists());
    let s = summary(&out);
    assert!(s["results"]["oracle_skipped"].is_string());
    assert!(s["results"]["normalized_gap"].is_null());
}

#[test]
fn divergence_exits_3_and_keeps_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = sumo_out(&["reverse-kl", "--estimator", "iwae", "--expected-cost", "5", "--seed", "1"], &out);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    let s = summary(&out);
    assert_eq!(s["results"]["divergence"]["kind"], "bias_blow_up");
    assert!(out.join("trace.csv").exists());
    assert!(out.join("checkpoint.json").exists());
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    fs::write(&file, "").unwrap();
    let o = sumo_out(&["toy-unbiased", "--trials", "10"], &file.join("sub"));
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}
