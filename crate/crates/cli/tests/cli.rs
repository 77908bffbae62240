//! End-to-end tests of the bridgesim binary: exit-code contract, output
//! formats, and the determinism guarantees.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bridgesim"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const BROWNIAN_BRIDGE: &str = r#"{
    "model": {"name": "brownian", "dim": 1},
    "conditioning": {"strong": {"z": [0.0]}},
    "start": {"s": 0.0, "x": [0.0]},
    "horizon": 1.0,
    "grid": {"n": 250},
    "ensemble": {"n_paths": 100, "master_seed": 42},
    "outputs": {"stride": 5}
}"#;

fn run_simulate(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .args(["simulate", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn simulate_smoke_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", BROWNIAN_BRIDGE);
    let out = run_simulate(&cfg, tmp.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = std::fs::read_to_string(tmp.path().join("paths.csv")).unwrap();
    assert!(csv.starts_with("path_id,t,x_1\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["n_paths"], 100);
    // mean at mid-horizon is finite
    let stats = summary["node_stats"].as_array().unwrap();
    let mid = stats
        .iter()
        .min_by(|a, b| {
            let da = (a["t"].as_f64().unwrap() - 0.5).abs();
            let db = (b["t"].as_f64().unwrap() - 0.5).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    assert!(mid["mean"][0].as_f64().unwrap().is_finite());
    assert!(summary["pinning"]["fraction"].as_f64().unwrap() > 0.95);
}

#[test]
fn identical_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", BROWNIAN_BRIDGE);
    let (d1, d2) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_simulate(&cfg, &d1, &[]).status.success());
    assert!(run_simulate(&cfg, &d2, &[]).status.success());
    assert_eq!(
        std::fs::read(d1.join("paths.csv")).unwrap(),
        std::fs::read(d2.join("paths.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(d1.join("summary.json")).unwrap(),
        std::fs::read(d2.join("summary.json")).unwrap()
    );
}

#[test]
fn thread_count_does_not_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", BROWNIAN_BRIDGE);
    let mut outputs = Vec::new();
    for threads in ["1", "4", "8"] {
        let dir = tmp.path().join(format!("t{threads}"));
        let out = run_simulate(&cfg, &dir, &["--threads", threads]);
        assert!(out.status.success());
        outputs.push(std::fs::read(dir.join("paths.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn summary_statistics_match_paths_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", BROWNIAN_BRIDGE);
    assert!(run_simulate(&cfg, tmp.path(), &[]).status.success());

    let csv = std::fs::read_to_string(tmp.path().join("paths.csv")).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap())
            .unwrap();

    // group sample values by time
    let mut by_t: std::collections::BTreeMap<u64, Vec<f64>> = Default::default();
    for line in csv.lines().skip(1) {
        let mut parts = line.split(',');
        let _pid = parts.next().unwrap();
        let t: f64 = parts.next().unwrap().parse().unwrap();
        let x: f64 = parts.next().unwrap().parse().unwrap();
        by_t.entry(t.to_bits()).or_default().push(x);
    }
    for stat in summary["node_stats"].as_array().unwrap() {
        let t = stat["t"].as_f64().unwrap();
        let mean = stat["mean"][0].as_f64().unwrap();
        let var = stat["variance"][0].as_f64().unwrap();
        let xs = &by_t[&t.to_bits()];
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0);
        assert!((m - mean).abs() <= 1e-12, "mean mismatch at t={t}: {m} vs {mean}");
        assert!((v - var).abs() <= 1e-12, "variance mismatch at t={t}");
    }
}

#[test]
fn missing_model_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.json",
        r#"{"conditioning": {"strong": {"z": [0.0]}}, "start": {"s": 0, "x": [0.0]}, "horizon": 1.0}"#,
    );
    let out = run_simulate(&cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_flag_exits_2() {
    let out = bin().arg("simulate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn classify_brownian_ou_bessel() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (r#"{"name": "brownian", "dim": 1}"#, "[0.0]", vec![("lower", "natural"), ("upper", "natural")]),
        (r#"{"name": "ou", "theta": 1.0, "sigma": 1.0}"#, "[0.0]", vec![("lower", "natural"), ("upper", "natural")]),
        (r#"{"name": "bessel", "delta": 3.0}"#, "[1.0]", vec![("lower", "entrance"), ("upper", "natural")]),
    ];
    for (model, x, expect) in cases {
        let cfg = write_config(
            tmp.path(),
            "c.json",
            &format!(
                r#"{{"model": {model}, "conditioning": {{"strong": {{"z": {x}}}}},
                    "start": {{"s": 0.0, "x": {x}}}, "horizon": 1.0}}"#
            ),
        );
        let out = bin().args(["classify", "--config"]).arg(&cfg).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let reports: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        for (i, (ep, class)) in expect.iter().enumerate() {
            assert_eq!(reports[i]["endpoint"], *ep, "{model}");
            assert_eq!(reports[i]["classification"], *class, "{model}");
        }
    }
}

#[test]
fn classify_rejects_multidim() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c2.json",
        r#"{"model": {"name": "brownian", "dim": 2},
            "conditioning": {"strong": {"z": [0.0, 0.0]}},
            "start": {"s": 0.0, "x": [0.0, 0.0]}, "horizon": 1.0}"#,
    );
    let out = bin().args(["classify", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_appendix_b_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", BROWNIAN_BRIDGE);
    let out = bin().args(["verify", "appendixB", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let reports: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(reports.as_array().unwrap().iter().all(|r| r["passed"].as_bool().unwrap()));
}

#[test]
fn verify_assumptions_and_bridge_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", BROWNIAN_BRIDGE);
    for suite in ["assumptions", "bridge"] {
        let out = bin().args(["verify", suite, "--config"]).arg(&cfg).output().unwrap();
        assert!(
            out.status.success(),
            "suite {suite}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let reports: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(reports.as_array().unwrap().iter().all(|r| r["passed"].as_bool().unwrap()), "{suite}");
    }
}

#[test]
fn verify_unknown_suite_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", BROWNIAN_BRIDGE);
    let out = bin().args(["verify", "bogus", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exact_sampler_method_from_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "exact.json",
        r#"{
        "model": {"name": "brownian", "dim": 1},
        "conditioning": {"strong": {"z": [1.0]}},
        "start": {"s": 0.0, "x": [0.0]},
        "horizon": 1.0,
        "grid": {"n": 40},
        "ensemble": {"n_paths": 50, "master_seed": 8},
        "method": "exact_brownian_bridge"
    }"#,
    );
    let out = run_simulate(&cfg, tmp.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["pinning"]["fraction"], 1.0);
}

#[test]
fn density_tabulates_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", BROWNIAN_BRIDGE);
    let out = bin()
        .args(["density", "--nt", "5", "--ny", "11", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("density.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,y,density,h,drift");
    // Brownian bridge drift column must match (z−y)/(T*−t)
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let (t, y, drift) = (v[0], v[1], v[4]);
        let expect = (0.0 - y) / (1.0 - t);
        assert!((drift - expect).abs() <= 1e-9 * expect.abs().max(1.0), "{line}");
    }
}
