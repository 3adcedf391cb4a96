//! JSON experiment configuration.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::metric::MetricOptions;
use crate::model::{InteractionConfig, PotentialKind, PotentialSpec, DEFAULT_BOX};
use crate::sde::{InitialLaw, Observable, Which};
use crate::stationary::Functional;

fn default_box() -> f64 {
    DEFAULT_BOX
}

fn default_quad_step() -> f64 {
    1e-2
}

fn default_delta_factor() -> f64 {
    1e-3
}

fn default_dt() -> f64 {
    1e-3
}

fn default_observe_every() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialConfig {
    #[serde(flatten)]
    pub kind: PotentialKind,
    #[serde(default = "default_box")]
    pub box_half_width: f64,
}

impl PotentialConfig {
    pub fn build(&self) -> Result<PotentialSpec> {
        PotentialSpec::from_kind(self.kind.clone(), self.box_half_width)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingConfig {
    Independent,
    Synchronous,
    #[serde(rename = "reflection_1d")]
    Reflection1d {
        #[serde(default)]
        delta: Option<f64>,
        #[serde(default = "default_delta_factor")]
        delta_factor: f64,
        #[serde(default)]
        noise_floor: f64,
    },
    MeanReflection {
        #[serde(default)]
        delta: Option<f64>,
        #[serde(default = "default_delta_factor")]
        delta_factor: f64,
        #[serde(default)]
        noise_floor: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    #[serde(default = "default_quad_step")]
    pub quad_step: f64,
    #[serde(default)]
    pub diff: Option<f64>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            quad_step: default_quad_step(),
            diff: None,
        }
    }
}

impl MetricConfig {
    pub fn options(&self) -> MetricOptions {
        MetricOptions {
            quad_step: self.quad_step,
            diff: self.diff,
            ..MetricOptions::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuTargets {
    /// Within-ensemble variance `sigma^2`, variance of means `sigma0^2`.
    Parameters,
    /// `sigma^2 / (2 (beta + alpha))` and `sigma0^2 / (2 beta)`.
    ClosedForm,
}

/// Acceptance checks evaluated after a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    RateAtLeast { column: String, min: f64 },
    /// Rate at least `fraction * c(V, W, sigma0)`.
    RateAtLeastRateC { column: String, fraction: f64 },
    /// Rate at least `fraction * ell * sigma0^2`.
    RateAtLeastEllSigma0Sq { column: String, fraction: f64 },
    /// Spread rate within `rel_tol` of `2 (beta + alpha)` for quadratic `V`.
    CollapseRateNear { column: String, rel_tol: f64 },
    /// Spread rate at least `2 (alpha - 2 L_V) - slack |2 (alpha - 2 L_V)|`.
    CollapseRateBound { column: String, slack: f64 },
    /// The series settles to a positive floor before 80% of the horizon.
    PlateauPresent { column: String },
    /// Rerun with half the reflection threshold; rates differ by at most `max_rel_change`.
    DeltaSensitivity { column: String, max_rel_change: f64 },
    OuInvariant { rel_tol: f64, targets: OuTargets },
    StationaryResidual {
        functional: Functional,
        checkpoints: Vec<f64>,
        stationary_from: f64,
    },
    GibbsBarycenter {
        burn_in: f64,
        max_ks: f64,
        min_samples: usize,
    },
    /// `m2(t) <= e^{-2 m t} m2(0) + (2 M + (sigma^2 + sigma0^2) d)/(2 m) (1 - e^{-2 m t})`
    /// given `x . grad V(x) >= m |x|^2 - M`.
    MomentBound { which: Which, m_v: f64, big_m_v: f64 },
}

impl Check {
    pub fn label(&self) -> String {
        match self {
            Check::RateAtLeast { column, min } => format!("rate({column}) >= {min}"),
            Check::RateAtLeastRateC { column, fraction } => format!("rate({column}) >= {fraction} c"),
            Check::RateAtLeastEllSigma0Sq { column, fraction } => {
                format!("rate({column}) >= {fraction} ell sigma0^2")
            }
            Check::CollapseRateNear { column, rel_tol } => {
                format!("rate({column}) within {rel_tol} of 2(beta+alpha)")
            }
            Check::CollapseRateBound { column, slack } => {
                format!("rate({column}) >= 2(alpha-2L_V) - {slack}|.|")
            }
            Check::PlateauPresent { column } => format!("plateau({column})"),
            Check::DeltaSensitivity { column, max_rel_change } => {
                format!("delta/2 changes rate({column}) by < {max_rel_change}")
            }
            Check::OuInvariant { targets, .. } => format!("ou_invariant({targets:?})"),
            Check::StationaryResidual { functional, .. } => format!("stationarity({})", functional.tag()),
            Check::GibbsBarycenter { .. } => "gibbs_barycenter".into(),
            Check::MomentBound { which, .. } => format!("moment_bound({which:?})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub potential: PotentialConfig,
    pub interaction: InteractionConfig,
    pub sigma: f64,
    pub sigma0: f64,
    pub n: usize,
    /// Size of the mean-field reference ensemble for `a`.
    #[serde(default)]
    pub aux_size: Option<usize>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub t_final: f64,
    pub realizations: usize,
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Absent for a single ensemble.
    #[serde(default)]
    pub coupling: Option<CouplingConfig>,
    pub initial_a: InitialLaw,
    #[serde(default)]
    pub initial_b: Option<InitialLaw>,
    #[serde(default)]
    pub pair_initial: bool,
    #[serde(default = "default_observe_every")]
    pub observe_every: usize,
    pub observables: Vec<Observable>,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default)]
    pub checks: Vec<Check>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Loads a config and applies `path.to.field=value` overrides. Values
    /// are parsed as JSON, falling back to a plain string.
    pub fn load_with_overrides(path: &std::path::Path, overrides: &[String]) -> Result<Self> {
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        let cfg: Self = serde_json::from_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dim(&self) -> usize {
        self.initial_a.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if self.name.is_empty() {
            return Err(config_err("name", "must not be empty"));
        }
        let v = self.potential.build().map_err(|e| config_err("potential", e.to_string()))?;
        self.interaction
            .build()
            .map_err(|e| config_err("interaction", e.to_string()))?;
        if v.dim() != self.dim() {
            return Err(config_err("initial_a", "dimension differs from the potential"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(config_err("sigma", "must be non-negative"));
        }
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            return Err(config_err("sigma0", "must be non-negative"));
        }
        if self.n == 0 {
            return Err(config_err("n", "must be positive"));
        }
        if self.aux_size.is_some_and(|m| m < self.n) {
            return Err(config_err("aux_size", "must be at least n"));
        }
        if !pos(self.dt) {
            return Err(config_err("dt", "must be positive"));
        }
        if !pos(self.t_final) {
            return Err(config_err("t_final", "must be positive"));
        }
        let steps = (self.t_final / self.dt).round();
        if (steps * self.dt - self.t_final).abs() > 1e-9 * self.t_final.max(1.0) {
            return Err(config_err("t_final", "must be a multiple of dt"));
        }
        if self.observe_every == 0 || (steps as u64) % self.observe_every as u64 != 0 {
            return Err(config_err("observe_every", "must divide the step count"));
        }
        if self.realizations == 0 {
            return Err(config_err("realizations", "must be positive"));
        }
        if self.workers == Some(0) {
            return Err(config_err("workers", "must be positive"));
        }
        if !pos(self.metric.quad_step) {
            return Err(config_err("metric.quad_step", "must be positive"));
        }
        match (&self.coupling, &self.initial_b) {
            (Some(_), None) => return Err(config_err("initial_b", "required for coupled runs")),
            (None, Some(_)) => return Err(config_err("coupling", "required when initial_b is given")),
            (Some(_), Some(b)) if b.dim() != self.dim() => {
                return Err(config_err("initial_b", "dimension differs from initial_a"))
            }
            _ => {}
        }
        if let Some(
            CouplingConfig::Reflection1d { delta, delta_factor, noise_floor }
            | CouplingConfig::MeanReflection { delta, delta_factor, noise_floor },
        ) = &self.coupling
        {
            if delta.is_some_and(|d| !pos(d)) || !pos(*delta_factor) {
                return Err(config_err("coupling.delta", "must be positive"));
            }
            if !(noise_floor.is_finite() && *noise_floor >= 0.0) {
                return Err(config_err("coupling.noise_floor", "must be finite and >= 0"));
            }
        }
        if matches!(self.coupling, Some(CouplingConfig::Reflection1d { .. })) && self.dim() != 1 {
            return Err(config_err("coupling", "reflection_1d needs d = 1"));
        }
        if self.coupling.is_none() && self.observables.iter().any(Observable::needs_pair) {
            return Err(config_err("observables", "paired observable without a coupled ensemble"));
        }
        if self.observables.iter().any(Observable::needs_metric) && !(self.sigma0 > 0.0) {
            return Err(config_err("observables", "distorted-metric observables need sigma0 > 0"));
        }
        let names: Vec<String> = self.observables.iter().map(Observable::name).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(config_err("observables", format!("duplicate column {n}")));
            }
        }
        if self.snapshot_times.iter().any(|t| !(*t >= 0.0 && *t <= self.t_final)) {
            return Err(config_err("snapshot_times", "must lie in [0, t_final]"));
        }
        for c in &self.checks {
            let column = match c {
                Check::RateAtLeast { column, .. }
                | Check::RateAtLeastRateC { column, .. }
                | Check::RateAtLeastEllSigma0Sq { column, .. }
                | Check::CollapseRateNear { column, .. }
                | Check::CollapseRateBound { column, .. }
                | Check::PlateauPresent { column }
                | Check::DeltaSensitivity { column, .. } => Some(column.clone()),
                Check::StationaryResidual { functional, .. } => Some(
                    Observable::Generator {
                        which: Which::A,
                        functional: functional.clone(),
                    }
                    .name(),
                ),
                Check::GibbsBarycenter { .. } => Some("mean_a_0".to_string()),
                Check::MomentBound { which, .. } => Some(Observable::SecondMoment { which: *which }.name()),
                Check::OuInvariant { .. } => None,
            };
            if let Some(col) = column {
                if !names.contains(&col) {
                    return Err(config_err("checks", format!("check needs observable column {col}")));
                }
            }
            if let Check::OuInvariant { .. } = c {
                if self.snapshot_times.len() < 1 {
                    return Err(config_err("snapshot_times", "ou_invariant needs snapshots"));
                }
            }
            if let Check::StationaryResidual { functional, .. } = c {
                let f = Observable::Functional {
                    which: Which::A,
                    functional: functional.clone(),
                }
                .name();
                if !names.contains(&f) {
                    return Err(config_err("checks", format!("check needs observable column {f}")));
                }
            }
        }
        Ok(())
    }
}

/// Sets one `a.b.c=value` field in a JSON config. Array elements are
/// addressed by index.
pub fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<()> {
    use serde_json::Value;
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(spec, "override must look like key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(path, "empty key in override"));
    }
    let mut cur = root;
    for (i, k) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(k.to_string(), value);
                    return Ok(());
                }
                map.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let j: usize = k
                    .parse()
                    .map_err(|_| config_err(path, "array index expected"))?;
                let n = items.len();
                let slot = items
                    .get_mut(j)
                    .ok_or_else(|| config_err(path, format!("index {j} out of range ({n} items)")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(config_err(path, "not an object or array")),
        };
    }
    Ok(())
}
