use mvcn_core::harness::config::ExperimentConfig;
use mvcn_core::harness::experiment::{run_experiment, setup, write_outputs, ExperimentOutcome};
use mvcn_core::harness::presets;

fn small(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.n = 40;
    if cfg.aux_size.is_some() {
        cfg.aux_size = Some(40);
    }
    cfg.realizations = 5;
    cfg.t_final = 1.0;
    cfg.snapshot_times.retain(|&t| t <= 1.0);
    cfg.checks.clear();
    cfg
}

fn bits(o: &ExperimentOutcome) -> Vec<u64> {
    o.records
        .iter()
        .flat_map(|r| r.rows.iter().flatten().map(|x| x.to_bits()))
        .collect()
}

#[test]
fn identical_across_worker_counts() {
    for cfg in [small(presets::t2_convex()), small(presets::t3_double_well()), small(presets::sg0_collapse())] {
        let mut runs = Vec::new();
        for workers in [Some(1), Some(3), None] {
            let mut c = cfg.clone();
            c.workers = workers;
            runs.push(bits(&run_experiment(&c).unwrap()));
        }
        assert!(!runs[0].is_empty());
        assert_eq!(runs[0], runs[1], "{}", cfg.name);
        assert_eq!(runs[0], runs[2], "{}", cfg.name);
    }
}

#[test]
fn seed_changes_the_path() {
    let cfg = small(presets::t2_convex());
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(bits(&run_experiment(&cfg).unwrap()), bits(&run_experiment(&other).unwrap()));
}

#[test]
fn manifest_reproduces_derived_constants() {
    let cfg = small(presets::t3_double_well());
    let o = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&o, dir.path()).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let echoed = ExperimentConfig::from_json(&manifest["config"].to_string()).unwrap();
    assert_eq!(echoed, cfg);
    let again = setup(&echoed).unwrap();
    let rate_c = manifest["derived"]["rate_c"].as_f64().unwrap();
    assert_eq!(again.derived.rate_c.unwrap().to_bits(), rate_c.to_bits());
    let r0 = manifest["derived"]["metric"]["r0"].as_f64().unwrap();
    assert_eq!(again.derived.metric.as_ref().unwrap().r0.to_bits(), r0.to_bits());
    assert_eq!(manifest["realizations_completed"].as_u64(), Some(5));

    let rerun = run_experiment(&echoed).unwrap();
    assert_eq!(bits(&rerun), bits(&o));
    for name in ["timeseries.csv", "summary.json", "fit.txt", "plot.gp"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}
