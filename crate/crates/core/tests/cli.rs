use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn mvcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvcn")).args(args).output().unwrap()
}

fn small_t2(checks: Value) -> Value {
    let text = mvcn(&["preset", "t2_convex", "--print"]).stdout;
    let mut cfg: Value = serde_json::from_slice(&text).unwrap();
    cfg["n"] = json!(60);
    cfg["aux_size"] = json!(60);
    cfg["realizations"] = json!(6);
    cfg["t_final"] = json!(6.0);
    cfg["checks"] = checks;
    cfg
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();

    let ok = write(dir.path(), "ok.json", &small_t2(json!([{"check": "rate_at_least", "column": "w2", "min": 0.1}])));
    let r = mvcn(&["run", &ok, "--out", out]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stdout));
    assert!(String::from_utf8_lossy(&r.stdout).starts_with("PASS"));

    let bad = write(dir.path(), "bad.json", &small_t2(json!([{"check": "rate_at_least", "column": "w2", "min": 1e3}])));
    let r = mvcn(&["run", &bad, "--out", out]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stdout).starts_with("FAIL"));

    let mut broken = small_t2(json!([]));
    broken["dt"] = json!(-1.0);
    let broken = write(dir.path(), "broken.json", &broken);
    assert_eq!(mvcn(&["run", &broken, "--out", out]).status.code(), Some(1));

    let mut unknown = small_t2(json!([]));
    unknown["typo_field"] = json!(1);
    let unknown = write(dir.path(), "unknown.json", &unknown);
    assert_eq!(mvcn(&["run", &unknown, "--out", out]).status.code(), Some(1));

    assert_eq!(mvcn(&["run", "/nonexistent.json"]).status.code(), Some(1));

    let r = mvcn(&["run", &bad, "--out", out, "--set", "checks.0.min=0.1"]);
    assert_eq!(r.status.code(), Some(0));
    assert_eq!(mvcn(&["run", &ok, "--out", out, "--set", "n"]).status.code(), Some(1));
    assert_eq!(mvcn(&["run", &ok, "--out", out, "--set", "aux_size=10"]).status.code(), Some(1));
}

#[test]
fn fit_reads_timeseries_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let mut text = String::from("t,y\n");
    for k in 0..100 {
        let t = k as f64 * 0.05;
        text += &format!("{t},{}\n", 3.0 * (-1.5 * t).exp());
    }
    std::fs::write(&csv, text).unwrap();
    let r = mvcn(&["fit", csv.to_str().unwrap(), "--floor", "0"]);
    assert_eq!(r.status.code(), Some(0));
    let s = String::from_utf8_lossy(&r.stdout);
    let rate: f64 = s
        .lines()
        .find_map(|l| l.strip_prefix("rate="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((rate - 1.5).abs() < 1e-9);
    assert_eq!(mvcn(&["fit", csv.to_str().unwrap(), "--column", "nope"]).status.code(), Some(1));
}

#[test]
fn metric_dump_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small_t2(json!([])));
    let r = mvcn(&["metric", "dump", &cfg]);
    assert_eq!(r.status.code(), Some(0));
    let s = String::from_utf8_lossy(&r.stdout);
    let header = s.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "r,f,fprime,phi,big_phi,g");
    assert!(s.lines().any(|l| l.starts_with("# ell=")));
    let row: Vec<f64> = s
        .lines()
        .filter(|l| !l.starts_with('#'))
        .nth(2)
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    assert_eq!(row.len(), 6);

    let r = mvcn(&["metric", "dump", &cfg, "--set", "sigma0=3"]);
    let s = String::from_utf8_lossy(&r.stdout);
    assert!(s.lines().any(|l| l == "# sigma0=3.00000000000000000e0"), "{s}");
}

#[test]
fn preset_listing_and_threshold() {
    let r = mvcn(&["preset", "p6_threshold"]);
    assert_eq!(r.status.code(), Some(0));
    assert_eq!(mvcn(&["preset", "no_such_preset"]).status.code(), Some(1));
    for name in ["t2_convex", "p4_ou", "t3_double_well", "sg0_collapse", "gibbs_barycenter"] {
        let r = mvcn(&["preset", name, "--print"]);
        assert_eq!(r.status.code(), Some(0), "{name}");
        let v: Value = serde_json::from_slice(&r.stdout).unwrap();
        assert_eq!(v["name"], json!(name));
    }
}

#[test]
fn scaling_over_config_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfgs = dir.path().join("cfg");
    std::fs::create_dir(&cfgs).unwrap();
    for n in [40, 80, 160] {
        let mut c = small_t2(json!([]));
        c["n"] = json!(n);
        c["aux_size"] = json!(n);
        c["t_final"] = json!(8.0);
        write(&cfgs, &format!("n{n:05}.json"), &c);
    }
    let out = dir.path().join("s");
    let r = mvcn(&["scaling", cfgs.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_ne!(r.status.code(), Some(1), "{}", String::from_utf8_lossy(&r.stderr));
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(out.join("scaling.json")).unwrap()).unwrap();
    assert_eq!(rep["ns"], json!([40, 80, 160]));
    assert!(String::from_utf8_lossy(&r.stdout).contains("slope within"));
}
