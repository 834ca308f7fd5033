use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mhis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhis"))
        .args(args)
        .env("MHIS_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const TINY: &str = r#"
problem = "gaussian_toy"
proposal = "rw"
n_steps = 400
burn_in = 50
n_replicates = 3
seed = 9
stepsizes = [1.0, 2.5]
estimators = ["S", "A", "WR", "B", "B_sqrt_n"]
"#;

#[test]
fn verify_prints_table_and_exit_code_agrees() {
    let out = mhis(&["verify", "--models", "20", "--max-states", "5", "--seed", "3"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("operator identities"), "{text}");
    assert!(text.contains("FAIL-as-expected"));
    let failing = text.lines().any(|l| l.trim_end().ends_with(" FAIL"));
    assert_eq!(out.status.code(), Some(if failing { 3 } else { 0 }), "{text}");
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "problem = \"bvp\"\nproposal = \"rw\"\nn_steps = 10\n");
    let out = mhis(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = mhis(&["run", "--config", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = mhis(&["run", "--config", &cfg, "--output-dir", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["results.csv", "acceptance.csv", "summary.json"] {
        let x = fs::read(a.join(file)).unwrap();
        let y = fs::read(b.join(file)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{file} differs between identical runs");
    }
    let results = fs::read_to_string(a.join("results.csv")).unwrap();
    assert!(results.starts_with("problem,proposal,dim,s,estimator,replicate,component,value"));
    // 2 stepsizes x 5 estimators x 3 replicates x 1 component, plus header.
    assert_eq!(results.lines().count(), 1 + 2 * 5 * 3);
}

#[test]
fn chain_dump_writes_augmented_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let path = dir.path().join("chain.csv");
    let out = mhis(&["chain-dump", "--config", &cfg, "--output", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "step,x0,y0,log_alpha,accepted,log_weight");
    assert_eq!(lines.count(), 400);
}

#[test]
fn calibrate_writes_audit_trail() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
problem = "gaussian_toy"
proposal = "rw"
n_steps = 1000
n_replicates = 2
calibrate = true

[calibration]
s_lo = 0.5
s_hi = 8.0
pilot_steps = 20000
"#;
    let cfg = write_config(dir.path(), body);
    let out = mhis(&["calibrate", "--config", &cfg, "--output-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let audit = fs::read_to_string(dir.path().join("calibration_gaussian_toy_d1.csv")).unwrap();
    assert!(audit.starts_with("iter,s,J_f,J,acceptance_rate,g"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("calibrated s"));
}
