use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use safeset_core::toys::chain_1d;

fn safeset(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safeset"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn chain_config(dir: &Path) -> String {
    let cfg = dir.join("chain.toml");
    fs::write(
        &cfg,
        "[experiment]\nsystem = \"chain1d\"\nk = 20\n\n[schedule]\neps = [0.01, 0.002]\nbeta = [0.01]\ndelta = [[0.5]]\nstep_bound = [1.0]\n\n[output]\ndir = \"out\"\n",
    )
    .unwrap();
    cfg.display().to_string()
}

#[test]
fn config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[experiment]\nsytem = \"cbf\"\n").unwrap();
    let o = safeset(tmp.path(), &["characterize", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));

    let o = safeset(tmp.path(), &["characterize", "--set", "schedule.eps=[0.1,0.2]"]);
    assert_eq!(code(&o), 1);
    let o = safeset(tmp.path(), &["characterize", "--no-such-flag"]);
    assert_eq!(code(&o), 1);
    let o = safeset(tmp.path(), &["characterize", "--config", "missing.toml"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn oracle_check_passes_and_negative_control_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = safeset(tmp.path(), &["oracle-check", "--set", "experiment.trials=1", "--out", "ok"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(tmp.path().join("ok/oracle_check.csv").exists());

    let o = safeset(
        tmp.path(),
        &["oracle-check", "--set", "experiment.trials=1", "--set", "experiment.prune_scope=\"disabled\"", "--out", "bad"],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn small_budget_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = chain_config(tmp.path());
    let o = safeset(tmp.path(), &["characterize", "--config", &cfg, "--set", "experiment.budget=10"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("achieved none"));
}

#[test]
fn chain_characterization_matches_the_oracle_and_reruns_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = chain_config(tmp.path());
    let o = safeset(tmp.path(), &["characterize", "--config", &cfg, "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = tmp.path().join("out");
    for f in ["safe_set.csv", "history.csv", "audit.jsonl", "resolved_config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let safe = fs::read_to_string(out.join("safe_set.csv")).unwrap();
    let rows = safe.lines().skip(1).filter(|l| !l.is_empty()).count();
    assert_eq!(rows, chain_1d().oracle().unwrap().len());

    let o = safeset(tmp.path(), &["validate", "--config", &cfg, "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));

    // the resolved config alone reproduces every output
    let resolved = out.join("resolved_config.toml").display().to_string();
    let o = safeset(tmp.path(), &["characterize", "--config", &resolved, "--out", "again"]);
    assert_eq!(code(&o), 0);
    for f in ["safe_set.csv", "history.csv", "audit.jsonl"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(tmp.path().join("again").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn slice_rejects_bad_velocities() {
    let tmp = tempfile::tempdir().unwrap();
    let o = safeset(tmp.path(), &["slice", "--velocities", "1.5,0,0,0"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("velocities"));
    let o = safeset(tmp.path(), &["slice", "--velocities", "0,0,0"]);
    assert_eq!(code(&o), 1);
    // valid velocities but nothing characterized yet
    let o = safeset(tmp.path(), &["slice", "--velocities", "0.5,0,-0.5,0"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn baselines_omit_the_derived_row_without_a_safe_set() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = chain_config(tmp.path());
    let o = safeset(tmp.path(), &["baselines", "--config", &cfg, "--set", "baselines.n_mc=500"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let est = fs::read_to_string(tmp.path().join("out/estimates.csv")).unwrap();
    assert!(est.starts_with("method,n,p_hat,ci_lo,ci_hi,runs_wallclock"));
    assert!(est.contains("monte-carlo"));
    assert!(!est.contains("derived"));

    let o = safeset(tmp.path(), &["characterize", "--config", &cfg]);
    assert_eq!(code(&o), 0);
    let o = safeset(tmp.path(), &["baselines", "--config", &cfg, "--set", "baselines.n_mc=500"]);
    assert_eq!(code(&o), 0);
    let est = fs::read_to_string(tmp.path().join("out/estimates.csv")).unwrap();
    assert!(est.contains("derived"));
}
