//! Running configured experiments and writing their artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::harness::config::{Check, CouplingConfig, ExperimentConfig, OuTargets};
use crate::harness::fit::{fit_rate_resolved, RateFit};
use crate::metric::{build_metric_with, DistortedMetric, MetricSummary};
use crate::model::{InteractionSpec, PotentialKind, PotentialSpec};
use crate::noise::NoisePlan;
use crate::ot::EmpiricalMeasure;
use crate::sde::{
    run, sample_initial, CoupledEnsembles, CouplingMode, ObserverContext, RunOptions, TrajectoryRecord,
};
use crate::stationary::{
    correlation_lag, gibbs_dirac_check, ou_invariant_check, stationarity_residual, variance_collapse_rate,
};

/// Constants derived from the configuration before simulating.
#[derive(Clone, Debug, Serialize)]
pub struct Derived {
    pub dim: usize,
    pub lipschitz_v: f64,
    pub lipschitz_w: f64,
    pub kappa_liminf: f64,
    pub convexity_modulus: Option<f64>,
    pub alpha: Option<f64>,
    pub metric: Option<MetricSummary>,
    pub rate_c: Option<f64>,
    pub ell_sigma0_sq: Option<f64>,
    /// `2 (alpha - 2 L_V)`
    pub collapse_bound: Option<f64>,
    /// `2 (beta + alpha)` for quadratic `V`.
    pub collapse_rate_quadratic: Option<f64>,
    pub mean_delta: Option<f64>,
}

pub struct Setup {
    pub v: PotentialSpec,
    pub w: InteractionSpec,
    pub plan: NoisePlan,
    pub metric: Option<DistortedMetric>,
    pub derived: Derived,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let v = cfg.potential.build()?;
    let w = cfg.interaction.build()?;
    let plan = NoisePlan::new(cfg.seed, cfg.dt, cfg.sigma, cfg.sigma0)?;
    let metric = if cfg.sigma0 > 0.0 {
        match build_metric_with(&v, cfg.sigma0, cfg.metric.options()) {
            Ok(m) => Some(m),
            Err(e) if cfg.observables.iter().any(|o| o.needs_metric()) => return Err(e),
            Err(_) => None,
        }
    } else {
        None
    };
    let alpha = w.alpha();
    let derived = Derived {
        dim: v.dim(),
        lipschitz_v: v.lipschitz(),
        lipschitz_w: w.lipschitz(),
        kappa_liminf: v.kappa_liminf(),
        convexity_modulus: v.convexity_modulus(),
        alpha,
        metric: metric.as_ref().map(DistortedMetric::summary),
        rate_c: metric.as_ref().map(|m| m.rate_c(&w)),
        ell_sigma0_sq: metric.as_ref().map(|m| m.ell() * cfg.sigma0 * cfg.sigma0),
        collapse_bound: alpha.map(|a| 2.0 * (a - 2.0 * v.lipschitz())),
        collapse_rate_quadratic: match (v.kind(), alpha) {
            (PotentialKind::Quadratic { curvature, .. }, Some(a)) => Some(2.0 * (curvature + a)),
            _ => None,
        },
        mean_delta: None,
    };
    Ok(Setup {
        v,
        w,
        plan,
        metric,
        derived,
    })
}

/// Runs all realizations; `delta_scale` multiplies the reflection threshold.
pub fn simulate(cfg: &ExperimentConfig, s: &Setup, delta_scale: f64) -> Result<(Vec<TrajectoryRecord>, Option<f64>)> {
    let one = |r: usize| -> Result<(TrajectoryRecord, Option<f64>)> {
        let r64 = r as u64;
        let a = sample_initial(&cfg.initial_a, cfg.n, &s.plan, r64, 0)?;
        let aux = match cfg.aux_size {
            Some(m) => Some(sample_initial(&cfg.initial_a, m, &s.plan, r64, 2)?),
            None => None,
        };
        let mut ce = match (&cfg.coupling, &cfg.initial_b) {
            (Some(c), Some(lb)) => {
                let b = sample_initial(lb, cfg.n, &s.plan, r64, 1)?;
                let mut ce = CoupledEnsembles::new(a, Some(b), aux, CouplingMode::Synchronous)?;
                if cfg.pair_initial {
                    ce.pair_initial()?;
                }
                let gap = || {
                    let b = ce.b.as_ref().unwrap();
                    crate::ot::dist2(&ce.a.particles.mean(), &b.particles.mean()).sqrt()
                };
                let step = cfg.sigma0 * cfg.dt.sqrt();
                let resolve = |delta: &Option<f64>, factor: f64, floor: f64, base: f64| -> Result<f64> {
                    let d = delta.unwrap_or_else(|| (factor * base).max(floor * step)) * delta_scale;
                    if d > 0.0 {
                        Ok(d)
                    } else {
                        Err(invalid("initial coupling distance is zero; set delta explicitly"))
                    }
                };
                ce.mode = match c {
                    CouplingConfig::Independent => CouplingMode::Independent,
                    CouplingConfig::Synchronous => CouplingMode::Synchronous,
                    CouplingConfig::Reflection1d { delta, delta_factor, noise_floor } => CouplingMode::Reflection1d {
                        delta: resolve(delta, *delta_factor, *noise_floor, ce.rms_gap().unwrap())?,
                    },
                    CouplingConfig::MeanReflection { delta, delta_factor, noise_floor } => CouplingMode::MeanReflection {
                        delta: resolve(delta, *delta_factor, *noise_floor, gap())?,
                    },
                };
                CoupledEnsembles::new(ce.a, ce.b, ce.aux, ce.mode)?
            }
            _ => CoupledEnsembles::single(a, aux)?,
        };
        let delta = match ce.mode {
            CouplingMode::Reflection1d { delta } | CouplingMode::MeanReflection { delta } => Some(delta),
            _ => None,
        };
        let ctx = ObserverContext {
            v: &s.v,
            w: &s.w,
            plan: &s.plan,
            metric: s.metric.as_ref(),
        };
        let opts = RunOptions {
            t_final: cfg.t_final,
            observe_every: cfg.observe_every,
            snapshot_times: cfg.snapshot_times.clone(),
        };
        let rec = run(&mut ce, &ctx, r64, &opts, &cfg.observables).map_err(|f| match f.error {
            Error::BlowUp { ensemble, particle, time } => Error::BlowUp { ensemble, particle, time },
            e => e,
        })?;
        Ok((rec, delta))
    };
    let exec = || (0..cfg.realizations).into_par_iter().map(one).collect::<Result<Vec<_>>>();
    let out = match cfg.workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| invalid(e.to_string()))?
            .install(exec)?,
        None => exec()?,
    };
    let deltas: Vec<f64> = out.iter().filter_map(|(_, d)| *d).collect();
    let mean_delta = (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64);
    Ok((out.into_iter().map(|(r, _)| r).collect(), mean_delta))
}

/// Per-time mean and Monte-Carlo standard error of every column.
#[derive(Clone, Debug, Serialize)]
pub struct AggregatedSeries {
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
}

impl AggregatedSeries {
    pub fn from_records(records: &[TrajectoryRecord]) -> Result<Self> {
        let first = records.first().ok_or_else(|| invalid("no realizations"))?;
        let r = records.len() as f64;
        let nt = first.times.len();
        let nc = first.columns.len();
        let mut mean = vec![vec![0.0; nc]; nt];
        let mut se = vec![vec![0.0; nc]; nt];
        for t in 0..nt {
            for c in 0..nc {
                let m = records.iter().map(|x| x.rows[t][c]).sum::<f64>() / r;
                let var = if records.len() > 1 {
                    records.iter().map(|x| (x.rows[t][c] - m).powi(2)).sum::<f64>() / (r - 1.0)
                } else {
                    0.0
                };
                mean[t][c] = m;
                se[t][c] = (var / r).sqrt();
            }
        }
        Ok(Self {
            columns: first.columns.clone(),
            times: first.times.clone(),
            mean,
            se,
        })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.mean.iter().map(|r| r[k]).collect())
    }

    pub fn column_se(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.se.iter().map(|r| r[k]).collect())
    }

    /// Rate fit of a column, cut where the mean is not resolved by its SE.
    pub fn fit(&self, name: &str) -> Result<RateFit> {
        let (v, se) = match (self.column(name), self.column_se(name)) {
            (Some(v), Some(se)) => (v, se),
            _ => return Err(invalid(format!("no column `{name}`"))),
        };
        fit_rate_resolved(&self.times, &v, &se, None)
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let mut header = vec!["t".to_string()];
        for c in &self.columns {
            header.push(c.clone());
            header.push(format!("{c}_se"));
        }
        writeln!(out, "{}", header.join(","))?;
        for (k, t) in self.times.iter().enumerate() {
            let mut line = format!("{t:.10e}");
            for c in 0..self.columns.len() {
                write!(line, ",{:.10e},{:.10e}", self.mean[k][c], self.se[k][c]).unwrap();
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentOutcome {
    pub name: String,
    pub derived: Derived,
    pub fits: BTreeMap<String, RateFit>,
    pub checks: Vec<CheckResult>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub series: AggregatedSeries,
    #[serde(skip)]
    pub records: Vec<TrajectoryRecord>,
    #[serde(skip)]
    pub config: ExperimentConfig,
}

impl ExperimentOutcome {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let mut s = setup(cfg)?;
    let (records, mean_delta) = simulate(cfg, &s, 1.0)?;
    s.derived.mean_delta = mean_delta;
    let series = AggregatedSeries::from_records(&records)?;
    let mut warnings: Vec<String> = Vec::new();
    for r in &records {
        for w in &r.warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
    }
    let mut fits = BTreeMap::new();
    for c in &cfg.checks {
        let col = match c {
            Check::RateAtLeast { column, .. }
            | Check::RateAtLeastRateC { column, .. }
            | Check::RateAtLeastEllSigma0Sq { column, .. }
            | Check::PlateauPresent { column }
            | Check::DeltaSensitivity { column, .. } => column,
            _ => continue,
        };
        if !fits.contains_key(col) {
            match series.fit(col) {
                Ok(f) => {
                    fits.insert(col.clone(), f);
                }
                Err(e) => warnings.push(format!("fit of {col}: {e}")),
            }
        }
    }
    let mut checks = Vec::new();
    for c in &cfg.checks {
        let (pass, detail) = match evaluate_check(c, cfg, &s, &series, &records, &mut fits) {
            Ok(x) => x,
            Err(e) => (false, format!("error: {e}")),
        };
        checks.push(CheckResult {
            name: c.label(),
            pass,
            detail,
        });
    }
    Ok(ExperimentOutcome {
        name: cfg.name.clone(),
        derived: s.derived,
        fits,
        checks,
        warnings,
        series,
        records,
        config: cfg.clone(),
    })
}

fn fitted<'a>(fits: &'a BTreeMap<String, RateFit>, col: &str) -> Result<&'a RateFit> {
    fits.get(col)
        .ok_or_else(|| Error::FitImpossible(format!("no admissible window for {col}")))
}

fn evaluate_check(
    c: &Check,
    cfg: &ExperimentConfig,
    s: &Setup,
    series: &AggregatedSeries,
    records: &[TrajectoryRecord],
    fits: &mut BTreeMap<String, RateFit>,
) -> Result<(bool, String)> {
    let need = |x: Option<f64>, what: &str| x.ok_or_else(|| invalid(format!("{what} unavailable for this configuration")));
    Ok(match c {
        Check::RateAtLeast { column, min } => {
            let f = fitted(fits, column)?;
            (f.rate >= *min, format!("rate={:.4} (se {:.2e}) min={min}", f.rate, f.rate_se))
        }
        Check::RateAtLeastRateC { column, fraction } => {
            let f = fitted(fits, column)?;
            let c = need(s.derived.rate_c, "c(V,W,sigma0)")?;
            (
                f.rate >= fraction * c,
                format!("rate={:.4} c={c:.4} needed={:.4}", f.rate, fraction * c),
            )
        }
        Check::RateAtLeastEllSigma0Sq { column, fraction } => {
            let f = fitted(fits, column)?;
            let e = need(s.derived.ell_sigma0_sq, "ell sigma0^2")?;
            (
                f.rate >= fraction * e,
                format!("rate={:.4} ell*sigma0^2={e:.4} needed={:.4}", f.rate, fraction * e),
            )
        }
        Check::CollapseRateNear { column, rel_tol } => {
            let target = need(s.derived.collapse_rate_quadratic, "2(beta+alpha)")?;
            let cf = collapse(cfg, s, series, column)?;
            let rel = (cf.rate - target).abs() / target;
            (rel <= *rel_tol, format!("rate={:.4} target={target:.4} rel_err={rel:.4}", cf.rate))
        }
        Check::CollapseRateBound { column, slack } => {
            let bound = need(s.derived.collapse_bound, "2(alpha-2L_V)")?;
            let cf = collapse(cfg, s, series, column)?;
            let needed = bound - slack * bound.abs();
            let note = if bound <= 0.0 { " (bound is vacuous)" } else { "" };
            (cf.rate >= needed, format!("rate={:.4} bound={bound:.4} needed={needed:.4}{note}", cf.rate))
        }
        Check::PlateauPresent { column } => {
            let f = fitted(fits, column)?;
            let reached = f.plateau_reached_at;
            let ok = f.plateau > 0.0 && reached.is_some_and(|t| t <= 0.8 * cfg.t_final);
            (ok, format!("plateau={:.4e} reached_at={reached:?}", f.plateau))
        }
        Check::DeltaSensitivity { column, max_rel_change } => {
            let f1 = fitted(fits, column)?.clone();
            let (recs, _) = simulate(cfg, s, 0.5)?;
            let ser = AggregatedSeries::from_records(&recs)?;
            let f2 = ser.fit(column)?;
            let rel = (f2.rate - f1.rate).abs() / f1.rate.abs();
            fits.insert(format!("{column}@delta/2"), f2.clone());
            (
                rel < *max_rel_change,
                format!("rate={:.4} rate(delta/2)={:.4} rel_change={rel:.4}", f1.rate, f2.rate),
            )
        }
        Check::OuInvariant { rel_tol, targets } => {
            let samples: Vec<EmpiricalMeasure> = records
                .iter()
                .flat_map(|r| r.snapshots.iter().map(|(_, m)| m.clone()))
                .collect();
            let (beta, alpha) = match s.v.kind() {
                PotentialKind::Quadratic { curvature, .. } => (*curvature, s.w.alpha().unwrap_or(0.0)),
                _ => return Err(invalid("ou_invariant needs a quadratic potential")),
            };
            let closed = (
                cfg.sigma * cfg.sigma / (2.0 * (beta + alpha)),
                cfg.sigma0 * cfg.sigma0 / (2.0 * beta),
            );
            let (tw, tm) = match targets {
                OuTargets::Parameters => (cfg.sigma * cfg.sigma, cfg.sigma0 * cfg.sigma0),
                OuTargets::ClosedForm => closed,
            };
            let rep = ou_invariant_check(&samples, tw, tm, *rel_tol)?;
            (
                rep.pass,
                format!(
                    "within={:.5} (target {tw:.5}, closed form {:.5}) means={:.5} (target {tm:.5}, closed form {:.5}) samples={} ks_means={:.4}",
                    rep.within_variance, closed.0, rep.mean_variance, closed.1, rep.samples, rep.means_ks
                ),
            )
        }
        Check::StationaryResidual {
            functional,
            checkpoints,
            stationary_from,
        } => {
            let f = format!("F_{}_a", functional.tag());
            let mf = format!("MF_{}_a", functional.tag());
            let rep = stationarity_residual(records, &f, &mf, checkpoints, *stationary_from)?;
            let mut d = String::new();
            for cp in &rep.checkpoints {
                write!(d, "t={:.2}: lhs={:.5} rhs={:.5} se={:.2e}; ", cp.t, cp.lhs, cp.rhs, cp.combined_se).unwrap();
            }
            write!(d, "stationary MF={:.2e} se={:.2e}", rep.stationary_mean, rep.stationary_se).unwrap();
            (rep.pass, d)
        }
        Check::GibbsBarycenter {
            burn_in,
            max_ks,
            min_samples,
        } => {
            let j0 = records[0].times.partition_point(|&t| t < *burn_in);
            let series: Vec<Vec<f64>> = records
                .iter()
                .map(|r| r.column("mean_a_0").unwrap()[j0..].to_vec())
                .collect();
            let lag = correlation_lag(&series);
            let samples: Vec<f64> = series.iter().flat_map(|s| s.iter().step_by(lag).copied()).collect();
            let rep = gibbs_dirac_check(&samples, &s.v, cfg.sigma0, 0, *max_ks, *min_samples)?;
            let dt_obs = records[0].times[1] - records[0].times[0];
            (
                rep.pass,
                format!(
                    "ks={:.4} samples={} thinning={:.3} time units",
                    rep.ks,
                    rep.samples,
                    lag as f64 * dt_obs
                ),
            )
        }
        Check::MomentBound { which, m_v, big_m_v } => {
            let col = crate::sde::Observable::SecondMoment { which: *which }.name();
            let k = series.columns.iter().position(|c| *c == col).unwrap();
            let d = s.v.dim() as f64;
            let m0 = series.mean[0][k];
            let stat = (2.0 * big_m_v + (cfg.sigma * cfg.sigma + cfg.sigma0 * cfg.sigma0) * d) / (2.0 * m_v);
            let mut worst = f64::NEG_INFINITY;
            for (i, &t) in series.times.iter().enumerate() {
                let e = (-2.0 * m_v * t).exp();
                let bound = e * m0 + stat * (1.0 - e);
                worst = worst.max(series.mean[i][k] - 3.0 * series.se[i][k] - bound);
            }
            (worst <= 0.0, format!("max(m2 - 3se - bound)={worst:.4e} stationary bound={stat:.4}"))
        }
    })
}

fn collapse(cfg: &ExperimentConfig, s: &Setup, series: &AggregatedSeries, column: &str) -> Result<RateFit> {
    let alpha = s.w.alpha().unwrap_or(0.0);
    let values = series.column(column).unwrap();
    Ok(variance_collapse_rate(&series.times, &values, cfg.sigma, alpha, s.v.lipschitz())?.fit)
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    version: &'a str,
    config: &'a ExperimentConfig,
    derived: &'a Derived,
    realizations_completed: usize,
}

/// Writes `manifest.json`, `timeseries.csv`, `summary.json`, `fit.txt` and `plot.gp`.
pub fn write_outputs(o: &ExperimentOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        name: &o.name,
        version: env!("CARGO_PKG_VERSION"),
        config: &o.config,
        derived: &o.derived,
        realizations_completed: o.records.len(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let mut csv = Vec::new();
    o.series.write_csv(&mut csv)?;
    fs::write(dir.join("timeseries.csv"), csv)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(o)?)?;
    let mut fit = String::from("column,rate,rate_se,ci_low,ci_high,plateau,t_start,t_end,points\n");
    for (k, f) in &o.fits {
        writeln!(
            fit,
            "{k},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{}",
            f.rate, f.rate_se, f.ci_low, f.ci_high, f.plateau, f.t_start, f.t_end, f.points
        )
        .unwrap();
    }
    fs::write(dir.join("fit.txt"), fit)?;
    let mut gp = String::from(
        "set datafile separator ','\nset key autotitle columnhead\nset logscale y\nset xlabel 't'\nplot ",
    );
    let plots: Vec<String> = o
        .series
        .columns
        .iter()
        .enumerate()
        .map(|(k, _)| format!("'timeseries.csv' using 1:{} with lines", 2 + 2 * k))
        .collect();
    gp.push_str(&plots.join(", \\\n     "));
    gp.push('\n');
    fs::write(dir.join("plot.gp"), gp)?;
    Ok(())
}

pub fn format_checks(o: &ExperimentOutcome) -> String {
    let mut s = String::new();
    for c in &o.checks {
        writeln!(s, "{} {}: {} [{}]", if c.pass { "PASS" } else { "FAIL" }, o.name, c.name, c.detail).unwrap();
    }
    s
}
