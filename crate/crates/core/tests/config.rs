use mvcn_core::harness::config::{apply_override, CouplingConfig, ExperimentConfig};
use mvcn_core::harness::presets::{self, PRESETS};
use mvcn_core::Error;

fn field_of(e: Error) -> String {
    match e {
        Error::Config { field, .. } => field,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn presets_round_trip_through_json() {
    for name in PRESETS.iter().filter(|n| **n != "p6_threshold") {
        let cfg = presets::preset_config(name).unwrap();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg, "{name}");
    }
    for cfg in presets::chaos_configs() {
        cfg.validate().unwrap();
    }
}

#[test]
fn invalid_fields_are_named() {
    let base = presets::t3_double_well();
    let cases: Vec<(&str, Box<dyn Fn(&mut ExperimentConfig)>)> = vec![
        ("dt", Box::new(|c| c.dt = 0.0)),
        ("t_final", Box::new(|c| c.t_final = 10.001)),
        ("observe_every", Box::new(|c| c.observe_every = 7)),
        ("n", Box::new(|c| c.n = 0)),
        ("sigma", Box::new(|c| c.sigma = f64::NAN)),
        ("initial_b", Box::new(|c| c.initial_b = None)),
        ("workers", Box::new(|c| c.workers = Some(0))),
        ("aux_size", Box::new(|c| c.aux_size = Some(c.n - 1))),
        (
            "coupling.noise_floor",
            Box::new(|c| {
                c.coupling = Some(CouplingConfig::Reflection1d {
                    delta: None,
                    delta_factor: 1e-3,
                    noise_floor: -1.0,
                })
            }),
        ),
        ("observables", Box::new(|c| c.observables.push(c.observables[0].clone()))),
    ];
    for (field, edit) in cases {
        let mut c = base.clone();
        edit(&mut c);
        assert_eq!(field_of(c.validate().unwrap_err()), field);
    }
}

#[test]
fn reflection_needs_one_dimension() {
    let mut c = presets::sg0_collapse();
    c.coupling = Some(CouplingConfig::Reflection1d {
        delta: Some(0.1),
        delta_factor: 1e-3,
        noise_floor: 0.0,
    });
    assert_eq!(field_of(c.validate().unwrap_err()), "coupling");
}

#[test]
fn unknown_keys_are_rejected() {
    let mut v: serde_json::Value = serde_json::from_str(&presets::t2_convex().to_json()).unwrap();
    v["sigmaa"] = serde_json::json!(1.0);
    assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
}

#[test]
fn overrides_reach_nested_fields() {
    let mut v: serde_json::Value = serde_json::from_str(&presets::t3_double_well().to_json()).unwrap();
    apply_override(&mut v, "sigma0=2.5").unwrap();
    apply_override(&mut v, "coupling.delta=0.02").unwrap();
    apply_override(&mut v, "observables.7={\"kind\":\"mean_gap\"}").unwrap();
    apply_override(&mut v, "name=renamed").unwrap();
    let c = ExperimentConfig::from_json(&v.to_string()).unwrap();
    assert_eq!(c.sigma0, 2.5);
    assert_eq!(c.name, "renamed");
    assert!(matches!(c.coupling, Some(CouplingConfig::Reflection1d { delta: Some(d), .. }) if d == 0.02));
    assert!(apply_override(&mut v, "observables.99=1").is_err());
    assert!(apply_override(&mut v, "sigma0.x=1").is_err());
    assert!(apply_override(&mut v, "no_equals").is_err());
}

#[test]
fn dt_defaults_to_one_thousandth() {
    let mut v: serde_json::Value = serde_json::from_str(&presets::t2_convex().to_json()).unwrap();
    v.as_object_mut().unwrap().remove("dt");
    assert_eq!(ExperimentConfig::from_json(&v.to_string()).unwrap().dt, 1e-3);
}
