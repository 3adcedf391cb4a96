//! Euler-Maruyama particle systems, couplings and observers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{invalid, Error, Result};
use crate::metric::DistortedMetric;
use crate::model::{InteractionSpec, PotentialSpec};
use crate::noise::{Channel, NoisePlan, INIT_STEP};
use crate::ot::{self, dist2, EmpiricalMeasure, InnerDistance};
use crate::stationary::{generator_apply, Functional, FunctionalOracle};

/// Any coordinate beyond this magnitude aborts the realization.
pub const BLOWUP_LIMIT: f64 = 1e3;
pub const PAIRING_EXACT_CAP: usize = 512;

const LANE_A: u32 = 0;
const LANE_B: u32 = 1;
const LANE_AUX: u32 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub particles: EmpiricalMeasure,
    pub time: f64,
}

impl Ensemble {
    pub fn new(particles: EmpiricalMeasure) -> Self {
        Self { particles, time: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles.dim()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Covariance {
    /// `v * I`
    Isotropic(f64),
    Full(Vec<Vec<f64>>),
}

impl Covariance {
    fn cholesky(&self, d: usize) -> Result<Vec<f64>> {
        let full = match self {
            Covariance::Isotropic(v) => {
                if !(*v >= 0.0 && v.is_finite()) {
                    return Err(invalid("variance must be non-negative"));
                }
                let mut m = vec![0.0; d * d];
                for k in 0..d {
                    m[k * d + k] = *v;
                }
                return Ok(m.iter().map(|x| x.sqrt()).collect());
            }
            Covariance::Full(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(invalid("covariance shape does not match dimension"));
                }
                rows.concat()
            }
        };
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                if (full[i * d + j] - full[j * d + i]).abs() > 1e-12 {
                    return Err(invalid("covariance must be symmetric"));
                }
                let mut s = full[i * d + j];
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(invalid("covariance must be positive definite"));
                    }
                    l[i * d + i] = s.sqrt();
                } else {
                    l[i * d + j] = s / l[j * d + j];
                }
            }
        }
        Ok(l)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Gaussian { mean: Vec<f64>, cov: Covariance },
    /// Atoms at `left` or `right` (weight `weight_right`), plus isotropic jitter `std`.
    TwoPointMixture {
        left: Vec<f64>,
        right: Vec<f64>,
        weight_right: f64,
        #[serde(default)]
        std: f64,
    },
    Dirac { point: Vec<f64> },
    /// Gaussian around a random center drawn from the common channel.
    GaussianRandomCenter {
        center_mean: Vec<f64>,
        center_cov: Covariance,
        cov: Covariance,
        #[serde(default)]
        center_stream: u32,
    },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::TwoPointMixture { left, .. } => left.len(),
            InitialLaw::Dirac { point } => point.len(),
            InitialLaw::GaussianRandomCenter { center_mean, .. } => center_mean.len(),
        }
    }
}

fn gaussian_rows(
    mean: &[f64],
    chol: &[f64],
    n: usize,
    plan: &NoisePlan,
    realization: u64,
    lane: u32,
) -> Vec<f64> {
    let d = mean.len();
    let s = plan.stream(realization, Channel::Idiosyncratic, lane);
    let mut z = vec![0.0; d];
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        s.normals(i as u64, INIT_STEP, &mut z);
        for r in 0..d {
            let mut x = mean[r];
            for c in 0..=r {
                x += chol[r * d + c] * z[c];
            }
            out.push(x);
        }
    }
    out
}

/// Draws `n` particles. Per-particle draws use the idiosyncratic channel on `lane`;
/// a random center uses the common channel on `center_stream`.
pub fn sample_initial(
    law: &InitialLaw,
    n: usize,
    plan: &NoisePlan,
    realization: u64,
    lane: u32,
) -> Result<Ensemble> {
    if n == 0 {
        return Err(invalid("need at least one particle"));
    }
    let d = law.dim();
    if d == 0 {
        return Err(invalid("initial law has dimension 0"));
    }
    let points = match law {
        InitialLaw::Gaussian { mean, cov } => {
            gaussian_rows(mean, &cov.cholesky(d)?, n, plan, realization, lane)
        }
        InitialLaw::Dirac { point } => point.iter().copied().cycle().take(n * d).collect(),
        InitialLaw::TwoPointMixture {
            left,
            right,
            weight_right,
            std,
        } => {
            if right.len() != d {
                return Err(invalid("mixture atoms differ in dimension"));
            }
            if !(0.0..=1.0).contains(weight_right) || !(*std >= 0.0) {
                return Err(invalid("mixture weight must lie in [0,1] and std >= 0"));
            }
            let s = plan.stream(realization, Channel::Idiosyncratic, lane);
            let mut z = vec![0.0; d];
            let mut out = Vec::with_capacity(n * d);
            for i in 0..n {
                let mut rng = s.rng(i as u64, INIT_STEP);
                let atom = if rng.random::<f64>() < *weight_right { right } else { left };
                for zk in z.iter_mut() {
                    *zk = rng.sample(rand_distr::StandardNormal);
                }
                out.extend(atom.iter().zip(&z).map(|(a, e)| a + std * e));
            }
            out
        }
        InitialLaw::GaussianRandomCenter {
            center_mean,
            center_cov,
            cov,
            center_stream,
        } => {
            let lc = center_cov.cholesky(d)?;
            let mut z = vec![0.0; d];
            plan.stream(realization, Channel::Common, *center_stream)
                .normals(0, INIT_STEP, &mut z);
            let center: Vec<f64> = (0..d)
                .map(|r| center_mean[r] + (0..=r).map(|c| lc[r * d + c] * z[c]).sum::<f64>())
                .collect();
            gaussian_rows(&center, &cov.cholesky(d)?, n, plan, realization, lane)
        }
    };
    Ok(Ensemble::new(EmpiricalMeasure::new(points, d)?))
}

/// Permutation `p` such that row `i` of `a` is matched with row `p[i]` of `b`:
/// monotone in one dimension, exact assignment up to 512 particles otherwise.
pub fn optimal_initial_pairing(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<Vec<usize>> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(invalid("pairing needs ensembles of equal shape"));
    }
    let n = a.len();
    if a.dim() == 1 {
        let order = |m: &EmpiricalMeasure| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&i, &j| m.points()[i].total_cmp(&m.points()[j]));
            idx
        };
        let (oa, ob) = (order(a), order(b));
        let mut p = vec![0; n];
        for k in 0..n {
            p[oa[k]] = ob[k];
        }
        return Ok(p);
    }
    if n > PAIRING_EXACT_CAP {
        return Err(Error::UseSlicedEstimate {
            n,
            cap: PAIRING_EXACT_CAP,
        });
    }
    let mut c = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            c.push(dist2(a.point(i), b.point(j)));
        }
    }
    Ok(assignment::solve(&c, n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CouplingMode {
    /// Fresh idiosyncratic and common noise for each ensemble.
    Independent,
    /// Shared idiosyncratic and common noise.
    Synchronous,
    /// Shared idiosyncratic noise; common noise reflected with weight
    /// `pi = clamp(2 mean|E_i|/delta - 1, 0, 1)` and mixed with an auxiliary channel.
    #[serde(rename = "reflection_1d")]
    Reflection1d { delta: f64 },
    /// As `Reflection1d` but reflecting across the hyperplane orthogonal to the
    /// barycenter difference, with `pi` driven by its length.
    MeanReflection { delta: f64 },
}

/// Writes `-grad V(x_i) - (1/M) sum_j grad W(x_i - y_j)` for each row `x_i` of `target`,
/// with `y_j` the rows of `source`.
pub(crate) fn drift_field(
    target: &EmpiricalMeasure,
    source: &EmpiricalMeasure,
    v: &PotentialSpec,
    w: &InteractionSpec,
    out: &mut [f64],
) {
    let d = target.dim();
    for (o, x) in out.chunks_mut(d).zip(target.points().chunks(d)) {
        v.grad(x, o);
        o.iter_mut().for_each(|a| *a = -*a);
    }
    match w {
        InteractionSpec::None => {}
        InteractionSpec::Quadratic { alpha } => {
            let m = source.mean();
            for (o, x) in out.chunks_mut(d).zip(target.points().chunks(d)) {
                for k in 0..d {
                    o[k] -= alpha * (x[k] - m[k]);
                }
            }
        }
        InteractionSpec::CustomEven { .. } => {
            let inv = 1.0 / source.len() as f64;
            let mut z = vec![0.0; d];
            let mut g = vec![0.0; d];
            for (o, x) in out.chunks_mut(d).zip(target.points().chunks(d)) {
                for y in source.points().chunks(d) {
                    for k in 0..d {
                        z[k] = x[k] - y[k];
                    }
                    w.grad(&z, &mut g);
                    for k in 0..d {
                        o[k] -= inv * g[k];
                    }
                }
            }
        }
    }
}

/// Drift `b(x, m)` at a single point.
pub fn drift(x: &[f64], m: &EmpiricalMeasure, v: &PotentialSpec, w: &InteractionSpec) -> Result<Vec<f64>> {
    if x.len() != m.dim() || v.dim() != m.dim() {
        return Err(invalid("dimension mismatch in drift"));
    }
    let p = EmpiricalMeasure::new(x.to_vec(), x.len())?;
    let mut out = vec![0.0; x.len()];
    drift_field(&p, m, v, w, &mut out);
    Ok(out)
}

/// Two ensembles driven by coupled noise, an optional mean-field reference
/// ensemble for `a`, or a single ensemble when `b` is absent.
#[derive(Clone, Debug)]
pub struct CoupledEnsembles {
    pub a: Ensemble,
    pub b: Option<Ensemble>,
    /// Larger ensemble sharing `a`'s common noise; when present, `a`'s
    /// interaction is computed against it.
    pub aux: Option<Ensemble>,
    pub mode: CouplingMode,
    steps: u64,
    last_pi: f64,
}

impl CoupledEnsembles {
    pub fn new(a: Ensemble, b: Option<Ensemble>, aux: Option<Ensemble>, mode: CouplingMode) -> Result<Self> {
        if let Some(b) = &b {
            if b.len() != a.len() || b.dim() != a.dim() {
                return Err(invalid("coupled ensembles must have equal N and dimension"));
            }
        }
        if let Some(x) = &aux {
            if x.dim() != a.dim() {
                return Err(invalid("auxiliary ensemble dimension differs"));
            }
        }
        match mode {
            CouplingMode::Reflection1d { delta } | CouplingMode::MeanReflection { delta } => {
                if !(delta > 0.0 && delta.is_finite()) {
                    return Err(invalid("reflection delta must be positive"));
                }
                if matches!(mode, CouplingMode::Reflection1d { .. }) && a.dim() != 1 {
                    return Err(invalid("reflection_1d needs d = 1"));
                }
            }
            _ => {}
        }
        Ok(Self {
            a,
            b,
            aux,
            mode,
            steps: 0,
            last_pi: 1.0,
        })
    }

    pub fn single(a: Ensemble, aux: Option<Ensemble>) -> Result<Self> {
        Self::new(a, None, aux, CouplingMode::Synchronous)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.a.time
    }

    /// Reflection weight used in the last step.
    pub fn last_pi(&self) -> f64 {
        self.last_pi
    }

    /// Permutes `b` so that row `i` of `b` is its optimal partner of row `i` of `a`.
    pub fn pair_initial(&mut self) -> Result<()> {
        if let Some(b) = &mut self.b {
            let p = optimal_initial_pairing(&self.a.particles, &b.particles)?;
            b.particles = b.particles.permuted(&p);
        }
        Ok(())
    }

    /// Root-mean-square distance between index-paired particles.
    pub fn rms_gap(&self) -> Option<f64> {
        self.b.as_ref().map(|b| w2_paired(&self.a.particles, &b.particles))
    }

    fn reflection_weight(&self, delta: f64) -> f64 {
        let b = self.b.as_ref().expect("reflection needs two ensembles");
        let d = self.a.dim();
        let u = match self.mode {
            CouplingMode::MeanReflection { .. } => {
                dist2(&self.a.particles.mean(), &b.particles.mean()).sqrt() / delta
            }
            _ => {
                let n = self.a.len();
                (0..n)
                    .map(|i| dist2(self.a.particles.point(i), b.particles.point(i)).sqrt())
                    .sum::<f64>()
                    / (n as f64 * delta)
            }
        };
        let _ = d;
        (2.0 * u - 1.0).clamp(0.0, 1.0)
    }

    pub fn step(
        &mut self,
        v: &PotentialSpec,
        w: &InteractionSpec,
        plan: &NoisePlan,
        realization: u64,
    ) -> Result<()> {
        let d = self.a.dim();
        let step = self.steps;
        let sq = plan.dt.sqrt();

        let mut drift_a = vec![0.0; self.a.particles.points().len()];
        let src_a = self.aux.as_ref().map_or(&self.a.particles, |x| &x.particles);
        drift_field(&self.a.particles, src_a, v, w, &mut drift_a);
        let drift_b = self.b.as_ref().map(|b| {
            let mut out = vec![0.0; b.particles.points().len()];
            drift_field(&b.particles, &b.particles, v, w, &mut out);
            out
        });
        let drift_aux = self.aux.as_ref().map(|x| {
            let mut out = vec![0.0; x.particles.points().len()];
            drift_field(&x.particles, &x.particles, v, w, &mut out);
            out
        });

        let mut db0 = vec![0.0; d];
        plan.stream(realization, Channel::Common, LANE_A).normals(0, step, &mut db0);
        let (common_a, common_b) = match self.mode {
            CouplingMode::Independent => {
                let mut other = vec![0.0; d];
                plan.stream(realization, Channel::Common, LANE_B).normals(0, step, &mut other);
                (db0.clone(), other)
            }
            CouplingMode::Synchronous => (db0.clone(), db0.clone()),
            CouplingMode::Reflection1d { delta } | CouplingMode::MeanReflection { delta } => {
                let pi = if self.b.is_some() { self.reflection_weight(delta) } else { 1.0 };
                self.last_pi = pi;
                let lam = (1.0 - pi * pi).max(0.0).sqrt();
                let mut aux0 = vec![0.0; d];
                plan.stream(realization, Channel::AuxCommon, LANE_A).normals(0, step, &mut aux0);
                let ca: Vec<f64> = (0..d).map(|k| pi * db0[k] + lam * aux0[k]).collect();
                let reflected = match (self.mode, &self.b) {
                    (CouplingMode::MeanReflection { .. }, Some(b)) => {
                        let ma = self.a.particles.mean();
                        let mb = b.particles.mean();
                        let diff: Vec<f64> = ma.iter().zip(&mb).map(|(x, y)| x - y).collect();
                        let norm = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm > 0.0 {
                            let e: Vec<f64> = diff.iter().map(|x| x / norm).collect();
                            let dot: f64 = e.iter().zip(&db0).map(|(x, y)| x * y).sum();
                            (0..d).map(|k| db0[k] - 2.0 * dot * e[k]).collect()
                        } else {
                            db0.clone()
                        }
                    }
                    _ => db0.iter().map(|x| -x).collect::<Vec<f64>>(),
                };
                let cb = (0..d).map(|k| pi * reflected[k] + lam * aux0[k]).collect();
                (ca, cb)
            }
        };

        let idio_shared = !matches!(self.mode, CouplingMode::Independent);
        let sa = plan.stream(realization, Channel::Idiosyncratic, LANE_A);
        let sb = plan.stream(
            realization,
            Channel::Idiosyncratic,
            if idio_shared { LANE_A } else { LANE_B },
        );
        let sx = plan.stream(realization, Channel::Idiosyncratic, LANE_AUX);
        let new_time = (step + 1) as f64 * plan.dt;

        let advance = |e: &mut Ensemble,
                       drift: &[f64],
                       common: &[f64],
                       stream: crate::noise::NoiseStream,
                       tag: char|
         -> Result<()> {
            let mut z = vec![0.0; d];
            for (i, x) in e.particles.points_mut().chunks_mut(d).enumerate() {
                if plan.sigma > 0.0 {
                    stream.normals(i as u64, step, &mut z);
                }
                for k in 0..d {
                    x[k] += drift[i * d + k] * plan.dt
                        + sq * (plan.sigma * z[k] + plan.sigma0 * common[k]);
                }
                if x.iter().any(|c| !(c.abs() <= BLOWUP_LIMIT)) {
                    return Err(Error::BlowUp {
                        ensemble: tag,
                        particle: i,
                        time: new_time,
                    });
                }
            }
            e.time = new_time;
            Ok(())
        };

        advance(&mut self.a, &drift_a, &common_a, sa, 'a')?;
        if let (Some(b), Some(db)) = (self.b.as_mut(), drift_b.as_ref()) {
            advance(b, db, &common_b, sb, 'b')?;
        }
        if let (Some(x), Some(dx)) = (self.aux.as_mut(), drift_aux.as_ref()) {
            advance(x, dx, &common_a, sx, 'x')?;
        }
        self.steps += 1;
        Ok(())
    }
}

pub fn w2_paired(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    let n = a.len();
    ((0..n).map(|i| dist2(a.point(i), b.point(i))).sum::<f64>() / n as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    A,
    B,
}

/// Scalar observables recorded along a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observable {
    /// `(1/N) sum f(|a_i - b_i|)`
    DfPaired,
    /// `sqrt((1/N) sum |a_i - b_i|^2)`
    W2Paired,
    W2,
    W1,
    /// `f(|mean a - mean b|)`
    DfMean,
    MeanGap,
    Spread { which: Which },
    SecondMoment { which: Which },
    Mean { which: Which, coord: usize },
    Functional { which: Which, functional: Functional },
    Generator { which: Which, functional: Functional },
    /// Reflection weight used in the last step.
    Pi,
}

impl Observable {
    pub fn name(&self) -> String {
        let s = |w: &Which| match w {
            Which::A => "a",
            Which::B => "b",
        };
        match self {
            Observable::DfPaired => "df_paired".into(),
            Observable::W2Paired => "w2_paired".into(),
            Observable::W2 => "w2".into(),
            Observable::W1 => "w1".into(),
            Observable::DfMean => "df_mean".into(),
            Observable::MeanGap => "mean_gap".into(),
            Observable::Spread { which } => format!("spread_{}", s(which)),
            Observable::SecondMoment { which } => format!("m2_{}", s(which)),
            Observable::Mean { which, coord } => format!("mean_{}_{}", s(which), coord),
            Observable::Functional { which, functional } => format!("F_{}_{}", functional.tag(), s(which)),
            Observable::Generator { which, functional } => format!("MF_{}_{}", functional.tag(), s(which)),
            Observable::Pi => "pi".into(),
        }
    }

    pub fn needs_pair(&self) -> bool {
        matches!(
            self,
            Observable::DfPaired
                | Observable::W2Paired
                | Observable::W2
                | Observable::W1
                | Observable::DfMean
                | Observable::MeanGap
        ) || matches!(
            self,
            Observable::Spread { which: Which::B }
                | Observable::SecondMoment { which: Which::B }
                | Observable::Mean { which: Which::B, .. }
                | Observable::Functional { which: Which::B, .. }
                | Observable::Generator { which: Which::B, .. }
        )
    }

    pub fn needs_metric(&self) -> bool {
        matches!(self, Observable::DfPaired | Observable::DfMean)
    }

    pub fn evaluate(&self, ce: &CoupledEnsembles, ctx: &ObserverContext<'_>) -> Result<f64> {
        let pick = |w: &Which| -> Result<&EmpiricalMeasure> {
            match w {
                Which::A => Ok(&ce.a.particles),
                Which::B => ce
                    .b
                    .as_ref()
                    .map(|b| &b.particles)
                    .ok_or_else(|| invalid("observable needs ensemble b")),
            }
        };
        let pair = || -> Result<(&EmpiricalMeasure, &EmpiricalMeasure)> { Ok((pick(&Which::A)?, pick(&Which::B)?)) };
        let metric = || ctx.metric.ok_or_else(|| invalid("observable needs a distorted metric"));
        Ok(match self {
            Observable::DfPaired => {
                let (a, b) = pair()?;
                ot::df_paired(a, b, metric()?)?
            }
            Observable::W2Paired => {
                let (a, b) = pair()?;
                w2_paired(a, b)
            }
            Observable::W2 => {
                let (a, b) = pair()?;
                InnerDistance::W2.eval(a, b)?
            }
            Observable::W1 => {
                let (a, b) = pair()?;
                InnerDistance::W1.eval(a, b)?
            }
            Observable::DfMean => {
                let (a, b) = pair()?;
                metric()?.f_nonneg(dist2(&a.mean(), &b.mean()).sqrt())
            }
            Observable::MeanGap => {
                let (a, b) = pair()?;
                dist2(&a.mean(), &b.mean()).sqrt()
            }
            Observable::Spread { which } => pick(which)?.spread(),
            Observable::SecondMoment { which } => pick(which)?.second_moment(),
            Observable::Mean { which, coord } => {
                let m = pick(which)?;
                if *coord >= m.dim() {
                    return Err(invalid("mean coordinate out of range"));
                }
                m.mean()[*coord]
            }
            Observable::Functional { which, functional } => functional.value(pick(which)?),
            Observable::Generator { which, functional } => generator_apply(
                functional,
                pick(which)?,
                ctx.v,
                ctx.w,
                ctx.plan.sigma,
                ctx.plan.sigma0,
            )?,
            Observable::Pi => ce.last_pi,
        })
    }
}

pub struct ObserverContext<'a> {
    pub v: &'a PotentialSpec,
    pub w: &'a InteractionSpec,
    pub plan: &'a NoisePlan,
    pub metric: Option<&'a DistortedMetric>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub t_final: f64,
    /// Record every this many steps; must divide the step count.
    pub observe_every: usize,
    /// Times at which ensemble `a` is copied into the record.
    pub snapshot_times: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrajectoryRecord {
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub snapshots: Vec<(f64, EmpiricalMeasure)>,
    pub max_abs_coordinate: f64,
    pub warnings: Vec<String>,
}

impl TrajectoryRecord {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Failure of a run together with the observations recorded before it.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: TrajectoryRecord,
}

impl From<RunFailure> for Error {
    fn from(f: RunFailure) -> Self {
        f.error
    }
}

fn observe_into(
    rec: &mut TrajectoryRecord,
    ce: &CoupledEnsembles,
    ctx: &ObserverContext<'_>,
    observables: &[Observable],
) -> Result<()> {
    let mut row = Vec::with_capacity(observables.len());
    for o in observables {
        row.push(o.evaluate(ce, ctx)?);
    }
    rec.times.push(ce.time());
    rec.rows.push(row);
    Ok(())
}

pub fn run(
    ce: &mut CoupledEnsembles,
    ctx: &ObserverContext<'_>,
    realization: u64,
    opts: &RunOptions,
    observables: &[Observable],
) -> std::result::Result<TrajectoryRecord, RunFailure> {
    let mut rec = TrajectoryRecord {
        columns: observables.iter().map(Observable::name).collect(),
        ..Default::default()
    };
    let fail = |error: Error, partial: TrajectoryRecord| RunFailure { error, partial };
    let dt = ctx.plan.dt;
    let steps = (opts.t_final / dt).round() as u64;
    if !(opts.t_final > 0.0) || ((steps as f64) * dt - opts.t_final).abs() > 1e-9 * opts.t_final.max(1.0) {
        return Err(fail(invalid("t_final must be a positive multiple of dt"), rec));
    }
    if opts.observe_every == 0 || steps % opts.observe_every as u64 != 0 {
        return Err(fail(invalid("observer cadence must divide the step count"), rec));
    }
    if ce.b.is_none() && observables.iter().any(Observable::needs_pair) {
        return Err(fail(invalid("paired observable requested for a single ensemble"), rec));
    }
    if matches!(ce.mode, CouplingMode::MeanReflection { .. }) && ctx.plan.sigma > 0.0 {
        rec.warnings
            .push("mean_reflection with sigma > 0: idiosyncratic noise is not reflected".into());
    }
    let snap_steps: Vec<u64> = opts.snapshot_times.iter().map(|t| (t / dt).round() as u64).collect();
    let snap = |rec: &mut TrajectoryRecord, ce: &CoupledEnsembles| {
        if snap_steps.contains(&ce.steps()) {
            rec.snapshots.push((ce.time(), ce.a.particles.clone()));
        }
    };
    if let Err(e) = observe_into(&mut rec, ce, ctx, observables) {
        return Err(fail(e, rec));
    }
    snap(&mut rec, ce);
    let bound = ctx.v.box_half_width();
    let mut excursion = false;
    for k in 1..=steps {
        if let Err(e) = ce.step(ctx.v, ctx.w, ctx.plan, realization) {
            return Err(fail(e, rec));
        }
        let m = ce
            .a
            .particles
            .points()
            .iter()
            .chain(ce.b.iter().flat_map(|b| b.particles.points()))
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
        rec.max_abs_coordinate = rec.max_abs_coordinate.max(m);
        if m > bound && !excursion {
            excursion = true;
            rec.warnings
                .push(format!("particle left the working box |x| <= {bound} at t = {}", ce.time()));
        }
        if k % opts.observe_every as u64 == 0 {
            if let Err(e) = observe_into(&mut rec, ce, ctx, observables) {
                return Err(fail(e, rec));
            }
        }
        snap(&mut rec, ce);
    }
    Ok(rec)
}
