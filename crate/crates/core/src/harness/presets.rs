//! Named experiment presets, one per acceptance scenario.

use std::path::Path;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::harness::config::{Check, CouplingConfig, ExperimentConfig, MetricConfig, OuTargets, PotentialConfig};
use crate::harness::experiment::{run_experiment, write_outputs, CheckResult};
use crate::harness::fit::{scaling_slope, ScalingReport};
use crate::metric::{sigma0_threshold, ThresholdReport};
use crate::model::{InteractionConfig, PotentialKind, DEFAULT_BOX};
use crate::sde::{Covariance, InitialLaw, Observable, Which};
use crate::stationary::Functional;

pub const PRESETS: &[&str] = &[
    "t2_convex",
    "chaos_scaling",
    "p4_ou",
    "t3_double_well",
    "t3_double_well_resolved",
    "sg0_collapse",
    "sg0_collapse_radial",
    "gibbs_barycenter",
    "p6_threshold",
];

fn potential(kind: PotentialKind) -> PotentialConfig {
    PotentialConfig {
        kind,
        box_half_width: DEFAULT_BOX,
    }
}

fn quadratic(dim: usize) -> PotentialConfig {
    potential(PotentialKind::Quadratic {
        center: vec![0.0; dim],
        curvature: 1.0,
    })
}

fn gaussian(mean: Vec<f64>, var: f64) -> InitialLaw {
    InitialLaw::Gaussian {
        mean,
        cov: Covariance::Isotropic(var),
    }
}

pub fn t2_convex() -> ExperimentConfig {
    ExperimentConfig {
        name: "t2_convex".into(),
        potential: quadratic(1),
        interaction: InteractionConfig::Quadratic { alpha: 0.5 },
        sigma: 0.5,
        sigma0: 0.5,
        n: 1000,
        aux_size: Some(1000),
        dt: 0.01,
        t_final: 12.0,
        realizations: 100,
        seed: 20_201,
        workers: None,
        coupling: Some(CouplingConfig::Synchronous),
        initial_a: InitialLaw::GaussianRandomCenter {
            center_mean: vec![1.5],
            center_cov: Covariance::Isotropic(0.25),
            cov: Covariance::Isotropic(0.25),
            center_stream: 0,
        },
        initial_b: Some(gaussian(vec![-1.5], 1.0)),
        pair_initial: true,
        observe_every: 10,
        observables: vec![
            Observable::W2,
            Observable::W1,
            Observable::W2Paired,
            Observable::DfPaired,
            Observable::Spread { which: Which::A },
            Observable::Spread { which: Which::B },
            Observable::SecondMoment { which: Which::A },
            Observable::SecondMoment { which: Which::B },
        ],
        snapshot_times: vec![],
        metric: MetricConfig::default(),
        checks: vec![
            Check::RateAtLeast {
                column: "w2".into(),
                min: 0.8,
            },
            Check::PlateauPresent { column: "w2".into() },
        ],
    }
}

/// Base configuration of the chaos-scaling sweep and its particle numbers.
pub fn chaos_scaling() -> (ExperimentConfig, Vec<usize>) {
    let mut c = t2_convex();
    c.name = "chaos_scaling".into();
    c.realizations = 40;
    c.observables = vec![Observable::W2, Observable::W2Paired];
    c.checks = vec![Check::PlateauPresent { column: "w2".into() }];
    (c, vec![250, 1000, 4000])
}

pub fn p4_ou() -> ExperimentConfig {
    let sq = Functional::SquaredNorm;
    ExperimentConfig {
        name: "p4_ou".into(),
        potential: quadratic(1),
        interaction: InteractionConfig::None,
        sigma: 0.5,
        sigma0: 0.5,
        n: 2000,
        aux_size: None,
        dt: 0.01,
        t_final: 10.0,
        realizations: 200,
        seed: 40_404,
        workers: None,
        coupling: None,
        initial_a: InitialLaw::Dirac { point: vec![2.0] },
        initial_b: None,
        pair_initial: false,
        observe_every: 5,
        observables: vec![
            Observable::Functional {
                which: Which::A,
                functional: sq.clone(),
            },
            Observable::Generator {
                which: Which::A,
                functional: sq.clone(),
            },
            Observable::Spread { which: Which::A },
            Observable::Mean {
                which: Which::A,
                coord: 0,
            },
        ],
        snapshot_times: vec![4.0, 6.0, 8.0, 10.0],
        metric: MetricConfig::default(),
        checks: vec![
            Check::OuInvariant {
                rel_tol: 0.1,
                targets: OuTargets::Parameters,
            },
            Check::StationaryResidual {
                functional: sq,
                checkpoints: vec![0.5, 1.0, 2.0, 4.0],
                stationary_from: 5.0,
            },
        ],
    }
}

pub fn t3_double_well() -> ExperimentConfig {
    ExperimentConfig {
        name: "t3_double_well".into(),
        potential: potential(PotentialKind::DoubleWell1d),
        interaction: InteractionConfig::Quadratic { alpha: 0.05 },
        sigma: 0.5,
        sigma0: 3.0,
        n: 1000,
        aux_size: None,
        dt: 0.005,
        t_final: 10.0,
        realizations: 100,
        seed: 30_303,
        workers: None,
        coupling: Some(CouplingConfig::Reflection1d {
            delta: None,
            delta_factor: 1e-3,
            noise_floor: 0.0,
        }),
        initial_a: gaussian(vec![-1.0], 0.25),
        initial_b: Some(gaussian(vec![1.0], 0.5)),
        pair_initial: true,
        observe_every: 10,
        observables: vec![
            Observable::DfPaired,
            Observable::W2Paired,
            Observable::W2,
            Observable::W1,
            Observable::Spread { which: Which::A },
            Observable::SecondMoment { which: Which::A },
            Observable::SecondMoment { which: Which::B },
            Observable::Pi,
        ],
        snapshot_times: vec![],
        metric: MetricConfig::default(),
        checks: vec![
            Check::RateAtLeastRateC {
                column: "df_paired".into(),
                fraction: 0.5,
            },
            Check::DeltaSensitivity {
                column: "df_paired".into(),
                max_rel_change: 0.1,
            },
            Check::MomentBound {
                which: Which::A,
                m_v: 1.0,
                big_m_v: 1.0,
            },
        ],
    }
}

/// Same as `t3_double_well` with the reflection window widened to
/// 2.5 sigma0 sqrt(dt), the size of one reflected noise increment.
pub fn t3_double_well_resolved() -> ExperimentConfig {
    let mut cfg = t3_double_well();
    cfg.name = "t3_double_well_resolved".into();
    cfg.coupling = Some(CouplingConfig::Reflection1d {
        delta: None,
        delta_factor: 1e-3,
        noise_floor: 2.5,
    });
    cfg
}

pub fn sg0_collapse() -> ExperimentConfig {
    ExperimentConfig {
        name: "sg0_collapse".into(),
        potential: quadratic(2),
        interaction: InteractionConfig::Quadratic { alpha: 5.0 },
        sigma: 0.0,
        sigma0: 1.0,
        n: 100,
        aux_size: None,
        dt: 0.002,
        t_final: 12.0,
        realizations: 100,
        seed: 50_505,
        workers: None,
        coupling: Some(CouplingConfig::MeanReflection {
            delta: None,
            delta_factor: 1e-3,
            noise_floor: 0.0,
        }),
        initial_a: gaussian(vec![1.0, 1.0], 1.0),
        initial_b: Some(gaussian(vec![-1.0, 0.5], 0.5)),
        pair_initial: false,
        observe_every: 5,
        observables: vec![
            Observable::Spread { which: Which::A },
            Observable::Spread { which: Which::B },
            Observable::DfMean,
            Observable::MeanGap,
        ],
        snapshot_times: vec![],
        metric: MetricConfig::default(),
        checks: vec![
            Check::CollapseRateNear {
                column: "spread_a".into(),
                rel_tol: 0.2,
            },
            Check::RateAtLeastEllSigma0Sq {
                column: "df_mean".into(),
                fraction: 0.5,
            },
        ],
    }
}

pub fn sg0_collapse_radial() -> ExperimentConfig {
    let mut c = sg0_collapse();
    c.name = "sg0_collapse_radial".into();
    c.potential = potential(PotentialKind::RadialDoubleWell { dim: 2 });
    c.seed = 50_606;
    c.checks = vec![
        Check::CollapseRateBound {
            column: "spread_a".into(),
            slack: 0.2,
        },
        Check::RateAtLeast {
            column: "spread_a".into(),
            min: 0.8 * 2.0 * (5.0 - 1.0),
        },
        Check::RateAtLeastEllSigma0Sq {
            column: "df_mean".into(),
            fraction: 0.5,
        },
    ];
    c
}

pub fn gibbs_barycenter() -> ExperimentConfig {
    ExperimentConfig {
        name: "gibbs_barycenter".into(),
        potential: potential(PotentialKind::DoubleWell1d),
        interaction: InteractionConfig::Quadratic { alpha: 5.0 },
        sigma: 0.0,
        sigma0: 1.5,
        n: 50,
        aux_size: None,
        dt: 0.005,
        t_final: 160.0,
        realizations: 100,
        seed: 90_909,
        workers: None,
        coupling: None,
        initial_a: gaussian(vec![0.0], 1.0),
        initial_b: None,
        pair_initial: false,
        observe_every: 20,
        observables: vec![
            Observable::Mean {
                which: Which::A,
                coord: 0,
            },
            Observable::Spread { which: Which::A },
        ],
        snapshot_times: vec![],
        metric: MetricConfig::default(),
        checks: vec![Check::GibbsBarycenter {
            burn_in: 10.0,
            max_ks: 0.05,
            min_samples: 10_000,
        }],
    }
}

pub fn preset_config(name: &str) -> Result<ExperimentConfig> {
    match name {
        "t2_convex" => Ok(t2_convex()),
        "chaos_scaling" => Ok(chaos_scaling().0),
        "p4_ou" => Ok(p4_ou()),
        "t3_double_well" => Ok(t3_double_well()),
        "t3_double_well_resolved" => Ok(t3_double_well_resolved()),
        "sg0_collapse" => Ok(sg0_collapse()),
        "sg0_collapse_radial" => Ok(sg0_collapse_radial()),
        "gibbs_barycenter" => Ok(gibbs_barycenter()),
        _ => Err(invalid(format!("unknown or non-simulation preset `{name}`"))),
    }
}

/// Runs configurations differing only in `n` and regresses their plateaus.
pub const SLOPE_TOLERANCE: f64 = 0.15;

pub fn slope_check(rep: &ScalingReport) -> CheckResult {
    CheckResult {
        name: format!("slope within {SLOPE_TOLERANCE} of -1/2"),
        pass: (rep.slope + 0.5).abs() <= SLOPE_TOLERANCE,
        detail: format!("slope={:.4} se={:.3} plateaus={:?}", rep.slope, rep.slope_se, rep.plateaus),
    }
}

pub fn run_scaling(configs: &[ExperimentConfig], column: &str, out: Option<&Path>) -> Result<(ScalingReport, Vec<CheckResult>)> {
    let mut ns = Vec::new();
    let mut plateaus = Vec::new();
    let mut checks = Vec::new();
    for c in configs {
        let o = run_experiment(c)?;
        if let Some(dir) = out {
            write_outputs(&o, &dir.join(format!("n{}", c.n)))?;
        }
        let f = match o.fits.get(column) {
            Some(f) => f.clone(),
            None => o.series.fit(column)?,
        };
        ns.push(c.n);
        plateaus.push(f.plateau);
        checks.extend(o.checks.into_iter().map(|mut r| {
            r.name = format!("N={}: {}", c.n, r.name);
            r
        }));
    }
    Ok((scaling_slope(&ns, &plateaus)?, checks))
}

pub fn chaos_configs() -> Vec<ExperimentConfig> {
    let (base, ns) = chaos_scaling();
    ns.into_iter()
        .map(|n| {
            let mut c = base.clone();
            c.n = n;
            c.aux_size = Some(n);
            c.name = format!("chaos_scaling_n{n}");
            c
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdOutcome {
    pub report: ThresholdReport,
    pub check: CheckResult,
}

pub fn p6_threshold() -> Result<ThresholdOutcome> {
    let v = crate::model::PotentialSpec::double_well_1d(DEFAULT_BOX)?;
    let w = crate::model::InteractionSpec::quadratic(0.05)?;
    let report = sigma0_threshold(&v, &w, 0.3, 10.0, 1e-2)?;
    let check = CheckResult {
        name: "sigma0 threshold located".into(),
        pass: report.threshold.is_some_and(|t| t > 0.3 && t < 10.0),
        detail: format!("threshold={:?}", report.threshold),
    };
    Ok(ThresholdOutcome { report, check })
}
