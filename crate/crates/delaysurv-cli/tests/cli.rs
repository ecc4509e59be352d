//! End-to-end checks of the command-line surface: subcommand round trips,
//! file schemas, seeding, and byte-identical reruns.

use std::fs;
use std::path::Path;
use std::process::Command;

fn delaysurv() -> Command {
    Command::new(env!("CARGO_BIN_EXE_delaysurv"))
}

fn run_ok(cmd: &mut Command) -> String {
    let output = cmd.output().expect("spawn delaysurv");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn simulate_fit_two_stage_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let source_dir = dir.path().join("source");
    let target_dir = dir.path().join("target");

    run_ok(delaysurv()
        .args(["simulate", "--seed", "11", "--n", "400", "--out"])
        .arg(&source_dir));
    let source_csv = source_dir.join("dataset.csv");
    let header = fs::read_to_string(&source_csv)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(header, "x_1,y,v,z,w");

    // Target with administrative censoring and a scalar cohort effect.
    let target_config = dir.path().join("target.json");
    fs::write(
        &target_config,
        r#"{
            "n": 400,
            "accident": {"family": "piecewise_ph", "knots": [0.0, 0.5, 1.0],
                         "rates": [0.1, 0.2, 0.3],
                         "effect": {"type": "scalar", "values": [2.0]}},
            "delay": {"family": "constant", "rates": [5.0]},
            "censor": {"family": "constant", "rates": [1.0]},
            "tau": 0.75,
            "seed": 12
        }"#,
    )
    .unwrap();
    run_ok(delaysurv()
        .args(["simulate", "--config"])
        .arg(&target_config)
        .args(["--out"])
        .arg(&target_dir)
        .arg("--export-truth"));
    assert!(target_dir.join("truth.csv").exists());

    let fit_dir = dir.path().join("fit");
    let stdout = run_ok(delaysurv()
        .args(["fit", "--data"])
        .arg(&source_csv)
        .args(["--iterations", "3", "--replicates", "4", "--seed", "13", "--out"])
        .arg(&fit_dir));
    assert!(stdout.contains("delay_rate"));
    assert!(fit_dir.join("fit.json").exists());
    let trace = fs::read_to_string(fit_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,loglik,"));
    assert_eq!(trace.lines().count(), 5, "init plus three iterations");

    let ts_config = dir.path().join("ts.json");
    fs::write(
        &ts_config,
        r#"{"em": {"iterations": 3, "replicates": 4}, "target_tau": 0.75}"#,
    )
    .unwrap();
    let ts_dir = dir.path().join("two-stage");
    let stdout = run_ok(delaysurv()
        .args(["two-stage", "--source"])
        .arg(&source_csv)
        .args(["--target"])
        .arg(target_dir.join("dataset.csv"))
        .args(["--config"])
        .arg(&ts_config)
        .args(["--seed", "14", "--exact", "--out"])
        .arg(&ts_dir));
    assert!(stdout.contains("gamma_check0"));
    let gamma_csv = fs::read_to_string(ts_dir.join("gamma.csv")).unwrap();
    assert!(gamma_csv.starts_with("gamma_check0,gamma_check,gamma_hat,diag"));
    let gamma: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ts_dir.join("gamma.json")).unwrap()).unwrap();
    assert!(gamma["gamma_check0"].as_f64().unwrap() <= gamma["gamma_check"].as_f64().unwrap());
    assert!(gamma["gamma_hat"].is_number());
}

fn file_bytes(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap()
}

#[test]
fn toy_bench_outputs_are_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        run_ok(delaysurv()
            .args([
                "toy-bench",
                "--trials",
                "2",
                "--n",
                "150",
                "--seed",
                "7",
                "--jobs",
                "2",
                "--out",
            ])
            .arg(out)
            .env("DELAYSURV_SEED", "99"));
    }
    assert_eq!(
        file_bytes(&out_a.join("toy_summary.csv")),
        file_bytes(&out_b.join("toy_summary.csv"))
    );
    let csv = fs::read_to_string(out_a.join("toy_summary.csv")).unwrap();
    assert!(csv.contains("method,lambda_star,param,mean,std,trials"));
    assert!(csv.contains("Ours"));
    assert!(out_a.join("toy_table.txt").exists());
}

#[test]
fn env_seed_is_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let out_env = dir.path().join("env");
    let out_flag = dir.path().join("flag");
    run_ok(delaysurv()
        .args(["simulate", "--n", "50", "--out"])
        .arg(&out_env)
        .env("DELAYSURV_SEED", "424242"));
    run_ok(delaysurv()
        .args(["simulate", "--n", "50", "--seed", "424242", "--out"])
        .arg(&out_flag));
    assert_eq!(
        file_bytes(&out_env.join("dataset.csv")),
        file_bytes(&out_flag.join("dataset.csv"))
    );
}

#[test]
fn risk_bench_runs_on_synthetic_records() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("risk.json");
    fs::write(
        &config,
        r#"{"trials": 2, "synthetic_n": 600,
            "em": {"iterations": 4, "replicates": 4}, "seed": 5, "jobs": 2}"#,
    )
    .unwrap();
    let out = dir.path().join("risk");
    let stdout = run_ok(delaysurv()
        .args(["risk-bench", "--config"])
        .arg(&config)
        .args(["--out"])
        .arg(&out));
    assert!(stdout.contains("Naive"));
    let csv = fs::read_to_string(out.join("risk.csv")).unwrap();
    assert!(csv.contains("dataset,target,method,metric_mean,metric_std,trials"));
    assert!(csv.lines().filter(|l| !l.starts_with('#')).count() >= 4);
}

#[test]
fn rejects_malformed_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x_1,y,v,z,w\n0.5,1.0,1,,\n").unwrap();
    let out = delaysurv()
        .args(["fit", "--data"])
        .arg(&bad)
        .args(["--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}
