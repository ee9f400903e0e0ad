use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sidelink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sidelink")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn validate_queue_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "q.json",
        r#"{"mode": "validate-queue", "queue_validation": {"rhos": [0.5], "capacities": [5], "arrivals": 20000}}"#,
    );
    let out = dir.path().join("q.csv");
    let o = sidelink(&["validate-queue", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("rho,k,arrivals,blocked,simulated,analytic,std_error,z_score,within_3_sigma\n"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"policy": "random", "sweep_point": [5e8]}"#);
    let o = sidelink(&["sweep", "--config", &cfg, "--out", "unused.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error[config]"));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let o = sidelink(&["train", "--config", "/nonexistent/spec.json", "--out", "x.ckpt"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/spec.json"));
}

#[test]
fn missing_checkpoint_is_a_checkpoint_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.json",
        r#"{"policy": "ddqn", "sweep_points": [5e8], "checkpoint": "/nonexistent/net.ckpt", "epochs_per_point": 10}"#,
    );
    let o = sidelink(&["sweep", "--config", &cfg, "--out", dir.path().join("s.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn mode_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.json", r#"{"mode": "train"}"#);
    let o = sidelink(&["validate-queue", "--config", &cfg, "--out", "unused.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_flag_and_event_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.json",
        r#"{"policy": ["threshold"], "sweep_points": [5e8, 1e9], "seeds": [1, 2, 3], "epochs_per_point": 300}"#,
    );
    let out = dir.path().join("s.csv");
    let dump = dir.path().join("e.jsonl");
    let o = sidelink(&[
        "sweep",
        "--config",
        &cfg,
        "--seed",
        "42",
        "--out",
        out.to_str().unwrap(),
        "--dump-events",
        dump.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<String> = fs::read_to_string(&out).unwrap().lines().skip(1).map(str::to_string).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("500000000,threshold,42,300,"));
    assert_eq!(fs::read_to_string(&dump).unwrap().lines().count(), 600);
    assert!(dir.path().join("s.summary.csv").exists());
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("net.ckpt");
    let cfg = write(
        dir.path(),
        "t.json",
        &format!(
            r#"{{"training_epochs": 300, "log_interval": 100, "agent": {{"hidden_sizes": [8], "train_start": 64}},
                "checkpoint": "{}", "epochs_per_point": 200, "seeds": [5]}}"#,
            ckpt.display()
        ),
    );
    let o = sidelink(&["train", "--config", &cfg, "--out", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("net.ckpt.log.csv")).unwrap().lines().count(), 4);
    assert!(fs::read_to_string(dir.path().join("net.ckpt.meta")).unwrap().contains("steps=300"));

    let eval_out = dir.path().join("eval.csv");
    let o = sidelink(&["evaluate", "--config", &cfg, "--out", eval_out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&eval_out).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("500000000,ddqn,5,200,"));
}

#[test]
fn missing_output_directories_are_created() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "q.json",
        r#"{"queue_validation": {"rhos": [0.5], "capacities": [5], "arrivals": 1000}}"#,
    );
    let out = dir.path().join("runs/nested/q.csv");
    let o = sidelink(&["validate-queue", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.exists());
}
