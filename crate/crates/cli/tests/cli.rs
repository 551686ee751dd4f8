use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "source.n_x=24",
    "--set",
    "grid.n_y=40",
    "--set",
    "validate.mc_samples=10000",
];

fn zdmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zdmap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_small(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--method", "greedy", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    zdmap(&args)
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_results_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = run_small(&a, &["--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run_small(&b, &["--seed", "5"]).status.success());
    for f in ["summary.json", "mapping.json", "mapping.csv"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(
        std::fs::read(a.join("summary.json")).unwrap(),
        std::fs::read(b.join("summary.json")).unwrap()
    );
    let s = summary(&a);
    assert_eq!(s["method"], "greedy");
    assert_eq!(s["seed"], 5);
    assert!(s["mc"]["stderr"].as_f64().unwrap() > 0.0);
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(
        &cfg,
        "method = \"ncr\"\n[weights]\nmode = \"total\"\nlambda = 0.05\n[run]\nseed = 9\n",
    )
    .unwrap();
    let out = tmp.path().join("o");
    let o = run_small(&out, &["--config", cfg.to_str().unwrap(), "--set", "weights.lambda=0.02"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    // --method greedy beats the file, --set beats the file, the file seed beats the default
    assert_eq!(s["method"], "greedy");
    assert_eq!(s["lambda1"], 0.02);
    assert_eq!(s["seed"], 9);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    for extra in [
        &["--set", "source.bogus=1"][..],
        &["--set", "source.rho=1.5"],
        &["--config", "/nonexistent/zdmap.toml"],
    ] {
        let o = run_small(&out, extra);
        assert_eq!(o.status.code(), Some(2), "{extra:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    }
    assert_eq!(zdmap(&["run", "--method", "sa"]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn sweep_writes_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let mut args = vec!["sweep", "--method", "greedy", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--set", "sweep.lambdas=[0.01, 0.05]", "--set", "validate.enabled=false"]);
    let o = zdmap(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("lambda1,lambda2,P1,P2,CSNR_dB,SNR_dB,method"));
    assert_eq!(lines.count(), 2);
    // no list configured
    let o = zdmap(&["sweep", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_and_dump_read_a_saved_mapping() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert!(run_small(&out, &[]).status.success());
    let mapping = out.join("mapping.json");
    let mut args = vec!["validate", mapping.to_str().unwrap(), "--samples", "20000"];
    args.extend_from_slice(SMALL);
    let o = zdmap(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["monte_carlo"]["samples"], 20000);
    assert!(v["deployed"]["d"].as_f64().unwrap() > 0.0);

    let o = zdmap(&["dump", mapping.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 25);
    assert_eq!(text.lines().next().unwrap(), "x,g1,g2");
    let file = tmp.path().join("m.csv");
    assert!(zdmap(&["dump", mapping.to_str().unwrap(), "--csv", file.to_str().unwrap()]).status.success());
    assert_eq!(std::fs::read_to_string(file).unwrap(), text);

    let o = zdmap(&["validate", "/nonexistent/mapping.json"]);
    assert_eq!(o.status.code(), Some(1));
}
