use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn panoabr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panoabr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixtures(dir: &Path) -> String {
    let out = panoabr(&["gen-fixtures", "--out", dir.to_str().unwrap(), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // short training so the learned-policy paths stay fast
    let cfg = dir.join("experiment.toml");
    let text = fs::read_to_string(&cfg).unwrap().replace("episodes = 200", "episodes = 8");
    fs::write(&cfg, text).unwrap();
    cfg.to_str().unwrap().to_owned()
}

#[test]
fn run_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures(dir.path());
    let mut summaries = Vec::new();
    for out in ["a", "b"] {
        let out_dir = dir.path().join(out);
        let o = panoabr(&["run", "--config", &cfg, "--policy", "mappo", "--out", out_dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        summaries.push((
            fs::read(out_dir.join("mappo/summary.tsv")).unwrap(),
            fs::read(out_dir.join("mappo/rep0/checkpoint.bin")).unwrap(),
        ));
    }
    assert_eq!(summaries[0], summaries[1]);
}

#[test]
fn report_normalises_to_best_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures(dir.path());
    let results = dir.path().join("results");
    for policy in ["bb", "rb", "mpc", "dynamic"] {
        let o = panoabr(&["run", "--config", &cfg, "--policy", policy]);
        assert!(o.status.success(), "{policy}: {}", String::from_utf8_lossy(&o.stderr));
        let summary = fs::read_to_string(results.join(policy).join("summary.tsv")).unwrap();
        assert_eq!(summary.lines().count(), 4, "header, one rep, mean, std");
    }
    let o = panoabr(&["report", "--out", results.to_str().unwrap()]);
    assert!(o.status.success());
    let table = fs::read_to_string(results.join("report.tsv")).unwrap();
    let norms: Vec<f64> = table
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(norms.len(), 4);
    let best = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!((best - 1.0).abs() < 1e-12);
}

#[test]
fn repetitions_add_mean_and_std_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures(dir.path());
    let text = fs::read_to_string(&cfg).unwrap().replace("repetitions = 1", "repetitions = 3");
    fs::write(&cfg, text).unwrap();
    let o = panoabr(&["run", "--config", &cfg, "--policy", "random"]);
    assert!(o.status.success());
    let summary = fs::read_to_string(dir.path().join("results/random/summary.tsv")).unwrap();
    let labels: Vec<&str> = summary.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(labels, ["0", "1", "2", "mean", "std"]);
}

#[test]
fn sweep_writes_one_curve_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures(dir.path());
    let mut text = fs::read_to_string(&cfg).unwrap();
    text.push_str("\n[sweep]\nclip_eps = [0.1, 0.2]\nlambda = [0.9]\n");
    fs::write(&cfg, text).unwrap();
    let o = panoabr(&["sweep", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = dir.path().join("results/sweep");
    assert!(sweep.join("curve_eps0.1_lambda0.9.tsv").is_file());
    assert!(sweep.join("curve_eps0.2_lambda0.9.tsv").is_file());
    assert_eq!(fs::read_to_string(sweep.join("sweep.tsv")).unwrap().lines().count(), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(panoabr(&["run", "--config", "/does/not/exist.toml"]).status.code(), Some(1));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[experiment]\npolicy = \"pensieve\"\n").unwrap();
    assert_eq!(panoabr(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
    fs::write(&bad, "[experiment]\nunknown_key = 1\n").unwrap();
    assert_eq!(panoabr(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(panoabr(&["report", "--out", "/does/not/exist"]).status.code(), Some(1));
    assert_eq!(panoabr(&["no-such-verb"]).status.code(), Some(1));
    let cfg = fixtures(dir.path());
    assert_eq!(panoabr(&["run", "--config", &cfg, "--policy", "bb", "--mode", "ippo"]).status.code(), Some(1));
    assert_eq!(panoabr(&["verify", "--cases", "50"]).status.code(), Some(0));
    assert_eq!(panoabr(&["--help"]).status.code(), Some(0));
}
