use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn sopf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sopf")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_feeder(dir: &Path) -> std::path::PathBuf {
    let spec = json!({
        "trunk_len": 3, "laterals": [], "spacing_km": 0.2, "r_ohm_per_km": 0.33, "x_ohm_per_km": 0.38,
        "v0_kv": 7.2, "s_base_mva": 1.0, "epsilon": 0.05, "l_max_ka2": 0.5, "p_load_mw": 0.1, "pf": 0.94,
        "pc_max_mw": 0.05, "k_u": 1.0,
        "pv": { "s_w_mva": 0.1, "fraction": 1.0, "overrides": [], "seed": 0 }
    });
    let path = dir.join("feeder.json");
    fs::write(&path, spec.to_string()).unwrap();
    path
}

const FAST: &[&str] = &["--rho", "2", "--rho-policy", "fixed", "--init", "zeros"];

#[test]
fn full_pipeline_on_a_small_feeder() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (net, full, red, rep) = (d.join("net.json"), d.join("full.json"), d.join("red.json"), d.join("rep.json"));

    let out = sopf(&["build-network", "--spec", p(&small_feeder(d)), "--seed", "3", "--out", p(&net)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&net)["nodes"].as_array().unwrap().len(), 4);
    assert_eq!(read_json(&d.join("net.manifest.json"))["seed"], 3);

    let out = sopf(&[
        "generate-scenarios", "--network", p(&net), "--mean-ratio", "0.6", "--count", "30", "--seed", "5",
        "--out", p(&full),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(read_json(&full)["scenarios"].as_array().unwrap().len(), 30);

    let out = sopf(&["reduce", "--scenarios", p(&full), "--to", "3", "--out", p(&red)]);
    assert_eq!(code(&out), 0);
    let pis: f64 = read_json(&red)["scenarios"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["pi"].as_f64().unwrap())
        .sum();
    assert!((pis - 1.0).abs() < 1e-12);

    let mut args = vec!["solve", "--network", p(&net), "--scenarios", p(&red), "--out", p(&rep)];
    args.extend_from_slice(FAST);
    let out = sopf(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let report = read_json(&rep);
    assert_eq!(report["converged"], true);
    assert!(report["socp_gap"].as_f64().unwrap() <= 1e-3);
    let trace = fs::read_to_string(d.join("rep.trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "iter,r,s,objective,gap,rho");
    let manifest = read_json(&d.join("rep.manifest.json"));
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(d.join("rep.timing.json").is_file());

    let verdict = d.join("exact.json");
    let out = sopf(&[
        "check-exactness", "--network", p(&net), "--scenarios", p(&red), "--m-independent", "--out", p(&verdict),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(read_json(&verdict)["mode"], "m-independent");

    let test = d.join("test.json");
    sopf(&[
        "generate-scenarios", "--network", p(&net), "--mean-ratio", "0.6", "--count", "5", "--seed", "9",
        "--out", p(&test),
    ]);
    let metrics = d.join("metrics.json");
    let out = sopf(&[
        "baseline", "--network", p(&net), "--pc", p(&rep), "--k", "1.1,1.5", "--test-scenarios", p(&test), "--out",
        p(&metrics),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&metrics).as_array().unwrap().len(), 2);
    assert!(d.join("metrics.cdf_k1.5.csv").is_file());

    let online = d.join("online.json");
    let mut args = vec![
        "online-eval", "--network", p(&net), "--pc", p(&rep), "--test-scenarios", p(&test), "--out", p(&online),
    ];
    args.extend_from_slice(FAST);
    let out = sopf(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(read_json(&online)["infeasible"], 0);
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("nope.json");
    let out = sopf(&["solve", "--network", p(&missing), "--scenarios", p(&missing), "--out", p(&d.join("r.json"))]);
    assert_eq!(code(&out), 2);

    let net = d.join("net.json");
    sopf(&["build-network", "--preset", "day-type", "--out", p(&net)]);
    let sc = d.join("sc.json");
    sopf(&["generate-scenarios", "--network", p(&net), "--mean-ratio", "0.3", "--count", "2", "--out", p(&sc)]);
    let out = sopf(&["solve", "--network", p(&net), "--scenarios", p(&sc), "--rho", "0", "--out", p(&d.join("r.json"))]);
    assert_eq!(code(&out), 2);
    let out = sopf(&["reduce", "--scenarios", p(&sc), "--to", "5", "--out", p(&d.join("x.json"))]);
    assert_eq!(code(&out), 2);
    let out = sopf(&["build-network", "--out", p(&d.join("y.json"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn iteration_cap_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (net, sc, rep) = (d.join("net.json"), d.join("sc.json"), d.join("rep.json"));
    sopf(&["build-network", "--spec", p(&small_feeder(d)), "--out", p(&net)]);
    sopf(&["generate-scenarios", "--network", p(&net), "--mean-ratio", "0.5", "--count", "2", "--out", p(&sc)]);
    let out = sopf(&["solve", "--network", p(&net), "--scenarios", p(&sc), "--max-iters", "5", "--out", p(&rep)]);
    assert_eq!(code(&out), 3);
    assert_eq!(read_json(&rep)["converged"], false);
    assert_eq!(fs::read_to_string(d.join("rep.trace.csv")).unwrap().lines().count(), 6);
}

#[test]
fn blocked_reactive_support_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let net = json!({
        "v0_kv": 7.2, "s_base_mva": 1.0, "epsilon": 0.05,
        "nodes": [
            { "id": 0, "ancestor": null, "p_l_mw": 0.0, "q_l_mvar": 0.0, "pf": 1.0, "pc_min_mw": 0.0,
              "pc_max_mw": 0.0, "s_w_mva": 0.0, "q_s": 0.0, "k_u": 0.0 },
            { "id": 1, "ancestor": 0, "p_l_mw": 0.1, "q_l_mvar": 0.0, "pf": 0.94, "pc_min_mw": 0.0,
              "pc_max_mw": 0.05, "s_w_mva": 3.0, "q_s": 0.0, "k_u": 1.0 }
        ],
        "lines": [{ "node": 1, "r_ohm": 2.0, "x_ohm": 2.0, "l_max_ka2": 0.25 }]
    });
    let scenarios = json!({ "seed": 0, "scenarios": [{ "pi": 1.0, "w_mw": { "1": 2.2 } }] });
    let pc = json!({ "pc_mw": { "1": 0.05 }, "qc_mvar": {}, "scenarios": [] });
    let (n, s, c, o) = (d.join("net.json"), d.join("sc.json"), d.join("pc.json"), d.join("online.json"));
    fs::write(&n, net.to_string()).unwrap();
    fs::write(&s, scenarios.to_string()).unwrap();
    fs::write(&c, pc.to_string()).unwrap();
    let base = ["online-eval", "--network", p(&n), "--pc", p(&c), "--test-scenarios", p(&s), "--out", p(&o)];
    let mut args = base.to_vec();
    args.extend_from_slice(FAST);
    args.extend_from_slice(&["--max-iters", "4000", "--no-reactive"]);
    let out = sopf(&args);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&o)["infeasible"], 1);
}

#[test]
fn experiment_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let net = d.join("net.json");
    sopf(&["build-network", "--spec", p(&small_feeder(d)), "--out", p(&net)]);
    let spec = json!({
        "name": "tiny",
        "network": { "file": "net.json" },
        "day_types": [{ "name": "cloudy", "mean_ratio": 0.3 }, { "name": "sunny", "mean_ratio": 0.9 }],
        "generate": 12,
        "reduce_to": 2,
        "solver": { "rho": 2.0, "rho_policy": "fixed", "init": "zeros" },
        "seed": 1
    });
    let spec_path = d.join("spec.json");
    fs::write(&spec_path, spec.to_string()).unwrap();
    let out_dir = d.join("run");
    let out = sopf(&["run-experiment", "--spec", p(&spec_path), "--out", p(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["seed"], 1);
    let out = sopf(&["report", "--dir", p(&out_dir)]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("cloudy") && text.contains("sunny"));
    assert_eq!(code(&sopf(&["report", "--dir", p(&d.join("missing"))])), 2);
}
