use std::path::Path;
use std::process::{Command, Output};

fn conserve(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conserve"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

const TINY: [&str; 16] = [
    "--set", "dataset.n_traj=4",
    "--set", "dataset.points_per_traj=10",
    "--set", "conservation.epochs=2",
    "--set", "conservation.batch_traj=2",
    "--set", "dynamics.epochs=2",
    "--set", "eval.n_traj=2",
    "--set", "eval.duration=0.2",
    "--set", "seeds=[0,1]",
];

#[test]
fn print_defaults_is_the_reference_setup() {
    let dir = tempfile::tempdir().unwrap();
    let out = conserve(&["--print-defaults", "--system", "heat"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["dataset"]["n_traj"], 100);
    assert_eq!(v["autoencoder"]["hidden"], serde_json::json!([32, 16]));
    assert_eq!(v["eval"]["duration"], 1.0);
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = conserve(&["generate", "--set", "dataset.n_traj=1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = conserve(&["generate", "--set", "dataset.bogus=1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = conserve(&["no-such-command"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = conserve(&["probe-theory", "--epsilon", "1e-9"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn chain_with_missing_prerequisite_and_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut args: Vec<&str> = TINY.to_vec();
    args.extend(["--set", "output_dir=run"]);
    let with = |cmd: &[&str]| {
        let mut a: Vec<&str> = cmd.to_vec();
        a.extend(&args);
        conserve(&a, d)
    };
    assert!(with(&["generate"]).status.success());
    let first = std::fs::read(d.join("run/seed_0/dataset/traj_000.csv")).unwrap();
    assert!(with(&["generate"]).status.success());
    assert_eq!(std::fs::read(d.join("run/seed_0/dataset/traj_000.csv")).unwrap(), first);

    let out = with(&["train-dynamics"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("conservation checkpoint"));

    assert!(with(&["train-dynamics", "--no-projection"]).status.success());
    assert!(d.join("run/seed_1/dynamics/baseline.json").exists());
    assert!(with(&["train-conservation"]).status.success());
    assert!(with(&["train-dynamics"]).status.success());
    let out = with(&["evaluate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(d.join("run/eval/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn probe_theory_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = conserve(&["probe-theory", "--out", "p.csv"], dir.path());
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    let losses: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 11);
    assert!(losses[1..].iter().all(|l| *l >= losses[0]));
    let out = conserve(&["probe-theory", "--no-deltas", "--out", "q.csv"], dir.path());
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("q.csv")).unwrap().lines().count(), 2);
}

#[test]
fn sweep_writes_one_row_per_value_and_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--axis", "noise_std", "--values", "0,0.1", "--set", "output_dir=sw"];
    args.extend(TINY);
    let out = conserve(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sw/sweep_noise_std.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
}
