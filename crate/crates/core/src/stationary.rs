//! Measure-level generator, stationarity residuals and invariant-law checks.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::harness::fit::{fit_rate_with, FitOptions, RateFit};
use crate::model::{InteractionSpec, PotentialSpec};
use crate::ot::EmpiricalMeasure;
use crate::sde::{drift_field, TrajectoryRecord};

/// Smooth functional of a measure, described through its derivatives:
/// `D_m F(m, x)`, `div_x D_m F(m, x)` and `iint Tr D2_mm F(m, x, y) m(dx) m(dy)`.
pub trait FunctionalOracle {
    fn value(&self, m: &EmpiricalMeasure) -> f64;
    fn measure_gradient(&self, m: &EmpiricalMeasure, x: &[f64], out: &mut [f64]);
    fn divergence(&self, m: &EmpiricalMeasure, x: &[f64]) -> f64;
    fn second_order(&self, m: &EmpiricalMeasure) -> f64;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "functional", rename_all = "snake_case", deny_unknown_fields)]
pub enum Functional {
    /// `<m, x_k>`
    Coordinate { index: usize },
    /// `<m, |x|^2>`
    SquaredNorm,
    /// `<m, |x - mean(m)|^2>`
    Variance,
}

impl Functional {
    pub fn tag(&self) -> String {
        match self {
            Functional::Coordinate { index } => format!("x{index}"),
            Functional::SquaredNorm => "sq".into(),
            Functional::Variance => "var".into(),
        }
    }
}

impl FunctionalOracle for Functional {
    fn value(&self, m: &EmpiricalMeasure) -> f64 {
        match self {
            Functional::Coordinate { index } => m.mean()[*index],
            Functional::SquaredNorm => m.second_moment(),
            Functional::Variance => m.spread(),
        }
    }

    fn measure_gradient(&self, m: &EmpiricalMeasure, x: &[f64], out: &mut [f64]) {
        match self {
            Functional::Coordinate { index } => {
                out.fill(0.0);
                out[*index] = 1.0;
            }
            Functional::SquaredNorm => {
                for (o, a) in out.iter_mut().zip(x) {
                    *o = 2.0 * a;
                }
            }
            Functional::Variance => {
                let mean = m.mean();
                for ((o, a), c) in out.iter_mut().zip(x).zip(&mean) {
                    *o = 2.0 * (a - c);
                }
            }
        }
    }

    fn divergence(&self, m: &EmpiricalMeasure, _x: &[f64]) -> f64 {
        match self {
            Functional::Coordinate { .. } => 0.0,
            Functional::SquaredNorm | Functional::Variance => 2.0 * m.dim() as f64,
        }
    }

    fn second_order(&self, m: &EmpiricalMeasure) -> f64 {
        match self {
            Functional::Variance => -2.0 * m.dim() as f64,
            _ => 0.0,
        }
    }
}

/// `MF(m) = <m, D_mF . b(., m)> + (sigma^2 + sigma0^2)/2 <m, div D_mF>
///        + sigma0^2/2 iint Tr D2_mm F dm dm`.
pub fn generator_apply(
    f: &dyn FunctionalOracle,
    m: &EmpiricalMeasure,
    v: &PotentialSpec,
    w: &InteractionSpec,
    sigma: f64,
    sigma0: f64,
) -> Result<f64> {
    if v.dim() != m.dim() {
        return Err(invalid("potential and measure dimensions differ"));
    }
    let d = m.dim();
    let n = m.len();
    let mut b = vec![0.0; m.points().len()];
    drift_field(m, m, v, w, &mut b);
    let mut g = vec![0.0; d];
    let mut first = 0.0;
    let mut div = 0.0;
    for i in 0..n {
        let x = m.point(i);
        f.measure_gradient(m, x, &mut g);
        first += g.iter().zip(&b[i * d..(i + 1) * d]).map(|(p, q)| p * q).sum::<f64>();
        div += f.divergence(m, x);
    }
    let n = n as f64;
    Ok(first / n
        + 0.5 * (sigma * sigma + sigma0 * sigma0) * div / n
        + 0.5 * sigma0 * sigma0 * f.second_order(m))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckpointResult {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub combined_se: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub checkpoints: Vec<CheckpointResult>,
    pub stationary_from: f64,
    pub stationary_mean: f64,
    pub stationary_se: f64,
    pub stationary_pass: bool,
    pub sigma_multiplier: f64,
    pub pass: bool,
    pub warnings: Vec<String>,
}

/// Checks `E F(m_t) - E F(m_0) = E int_0^t MF(m_s) ds` at `checkpoints` and
/// `E MF = 0` averaged over `t >= stationary_from`, using columns `f_col`
/// and `mf_col` of independent realizations.
pub fn stationarity_residual(
    records: &[TrajectoryRecord],
    f_col: &str,
    mf_col: &str,
    checkpoints: &[f64],
    stationary_from: f64,
) -> Result<ResidualReport> {
    if records.is_empty() {
        return Err(invalid("no realizations"));
    }
    let mut warnings = Vec::new();
    let r = records.len();
    let k = if r < 30 {
        warnings.push(format!("only {r} realizations: interval widened"));
        4.0
    } else {
        3.0
    };
    let times = &records[0].times;
    let cols: Vec<(Vec<f64>, Vec<f64>)> = records
        .iter()
        .map(|rec| {
            Ok((
                rec.column(f_col).ok_or_else(|| invalid(format!("missing column {f_col}")))?,
                rec.column(mf_col).ok_or_else(|| invalid(format!("missing column {mf_col}")))?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for &t in checkpoints {
        let j = times.partition_point(|&s| s < t - 1e-9);
        if j >= times.len() {
            return Err(invalid(format!("checkpoint {t} beyond the record")));
        }
        let mut lhs = Vec::with_capacity(r);
        let mut rhs = Vec::with_capacity(r);
        for (f, mf) in &cols {
            lhs.push(f[j] - f[0]);
            let mut integral = 0.0;
            for q in 1..=j {
                integral += 0.5 * (times[q] - times[q - 1]) * (mf[q] + mf[q - 1]);
            }
            rhs.push(integral);
        }
        let (ml, sl) = mean_se(&lhs);
        let (mr, sr) = mean_se(&rhs);
        let se = (sl * sl + sr * sr).sqrt();
        out.push(CheckpointResult {
            t: times[j],
            lhs: ml,
            rhs: mr,
            combined_se: se,
            pass: (ml - mr).abs() <= k * se,
        });
    }
    let j0 = times.partition_point(|&s| s < stationary_from - 1e-9);
    if j0 >= times.len() {
        return Err(invalid("stationary window is empty"));
    }
    let per: Vec<f64> = cols
        .iter()
        .map(|(_, mf)| mf[j0..].iter().sum::<f64>() / (mf.len() - j0) as f64)
        .collect();
    let (sm, sse) = mean_se(&per);
    let stationary_pass = sm.abs() <= k * sse;
    let pass = stationary_pass && out.iter().all(|c| c.pass);
    Ok(ResidualReport {
        checkpoints: out,
        stationary_from: times[j0],
        stationary_mean: sm,
        stationary_se: sse,
        stationary_pass,
        sigma_multiplier: k,
        pass,
        warnings,
    })
}

/// Earliest window start after which consecutive window averages of `column`
/// (pooled over realizations) differ by less than one standard error.
pub fn detect_stationarity(records: &[TrajectoryRecord], column: &str, window: f64) -> Result<Option<f64>> {
    if records.is_empty() || !(window > 0.0) {
        return Err(invalid("need realizations and a positive window"));
    }
    let times = &records[0].times;
    let series: Vec<Vec<f64>> = records
        .iter()
        .map(|r| r.column(column).ok_or_else(|| invalid(format!("missing column {column}"))))
        .collect::<Result<_>>()?;
    let avg = |a: f64, b: f64| -> Option<(f64, f64)> {
        let idx: Vec<usize> = (0..times.len()).filter(|&k| times[k] >= a && times[k] < b).collect();
        if idx.is_empty() {
            return None;
        }
        let per: Vec<f64> = series
            .iter()
            .map(|s| idx.iter().map(|&k| s[k]).sum::<f64>() / idx.len() as f64)
            .collect();
        Some(mean_se(&per))
    };
    let end = *times.last().unwrap();
    let mut start = times[0];
    while start + 2.0 * window <= end + 1e-9 {
        if let (Some((m1, s1)), Some((m2, s2))) = (avg(start, start + window), avg(start + window, start + 2.0 * window + 1e-9)) {
            if (m1 - m2).abs() < (s1 * s1 + s2 * s2).sqrt() {
                return Ok(Some(start));
            }
        }
        start += window;
    }
    Ok(None)
}

#[derive(Clone, Debug, Serialize)]
pub struct OuReport {
    pub samples: usize,
    pub within_variance: f64,
    pub mean_variance: f64,
    pub target_within: f64,
    pub target_mean: f64,
    pub rel_err_within: f64,
    pub rel_err_mean: f64,
    pub rel_tol: f64,
    pub pass: bool,
    /// Kolmogorov-Smirnov distance of standardized ensemble means to N(0,1).
    pub means_ks: f64,
}

/// Compares the average within-ensemble variance and the variance of ensemble
/// means (per coordinate, then averaged) with the given targets.
pub fn ou_invariant_check(
    samples: &[EmpiricalMeasure],
    target_within: f64,
    target_mean: f64,
    rel_tol: f64,
) -> Result<OuReport> {
    if samples.len() < 2 {
        return Err(invalid("need at least two ensemble samples"));
    }
    let d = samples[0].dim();
    let mut within = 0.0;
    let mut means: Vec<Vec<f64>> = vec![Vec::new(); d];
    for s in samples {
        if s.dim() != d || s.len() < 2 {
            return Err(invalid("samples must share dimension and hold >= 2 particles"));
        }
        let n = s.len() as f64;
        within += s.spread() * n / (n - 1.0) / d as f64;
        for (k, m) in s.mean().into_iter().enumerate() {
            means[k].push(m);
        }
    }
    within /= samples.len() as f64;
    let mut mean_var = 0.0;
    let mut ks: f64 = 0.0;
    for col in &means {
        let (mu, se) = mean_se(col);
        let sd = se * (col.len() as f64).sqrt();
        mean_var += sd * sd / d as f64;
        let z: Vec<f64> = col.iter().map(|x| (x - mu) / sd).collect();
        ks = ks.max(ks_distance(&z, std_normal_cdf));
    }
    let rel_err_within = (within - target_within).abs() / target_within;
    let rel_err_mean = (mean_var - target_mean).abs() / target_mean;
    Ok(OuReport {
        samples: samples.len(),
        within_variance: within,
        mean_variance: mean_var,
        target_within,
        target_mean,
        rel_err_within,
        rel_err_mean,
        rel_tol,
        pass: rel_err_within <= rel_tol && rel_err_mean <= rel_tol,
        means_ks: ks,
    })
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// `sup |F_n - F|` for the empirical distribution of `xs`.
pub fn ks_distance(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Tabulated marginal of the density proportional to `exp(-2 V / sigma0^2)`.
#[derive(Clone, Debug)]
pub struct GibbsMarginal {
    x: Vec<f64>,
    cdf: Vec<f64>,
    density: Vec<f64>,
}

impl GibbsMarginal {
    pub fn new(v: &PotentialSpec, sigma0: f64, coord: usize) -> Result<Self> {
        if !(sigma0 > 0.0) {
            return Err(Error::OracleUndefined("sigma0 must be positive".into()));
        }
        let d = v.dim();
        if coord >= d {
            return Err(invalid("coordinate out of range"));
        }
        if d > 2 {
            return Err(Error::OracleUndefined("marginal oracle supports d <= 2".into()));
        }
        let beta = 2.0 / (sigma0 * sigma0);
        let vmin = {
            let b = v.box_half_width();
            let m = 400;
            let mut best = f64::INFINITY;
            let mut p = vec![0.0; d];
            let grid = |k: usize| -b + 2.0 * b * k as f64 / m as f64;
            for i in 0..=m {
                p[0] = grid(i);
                if d == 2 {
                    for j in 0..=m {
                        p[1] = grid(j);
                        best = best.min(v.value(&p));
                    }
                } else {
                    best = best.min(v.value(&p));
                }
            }
            best
        };
        let weight = |p: &[f64]| (-beta * (v.value(p) - vmin)).exp();
        let mut l = v.box_half_width();
        loop {
            let edge = (0..d)
                .map(|k| {
                    let mut p = vec![0.0; d];
                    p[k] = l;
                    let a = weight(&p);
                    p[k] = -l;
                    a.max(weight(&p))
                })
                .fold(0.0, f64::max);
            if edge < 1e-18 {
                break;
            }
            l *= 2.0;
            if l > 1e6 {
                return Err(Error::OracleUndefined("exp(-2V/sigma0^2) is not integrable".into()));
            }
        }
        let n = if d == 1 { 40_000 } else { 1_600 };
        let h = 2.0 * l / n as f64;
        let x: Vec<f64> = (0..=n).map(|k| -l + k as f64 * h).collect();
        let density: Vec<f64> = x
            .iter()
            .map(|&xi| {
                if d == 1 {
                    weight(&[xi])
                } else {
                    let mut p = [0.0; 2];
                    p[coord] = xi;
                    let mut s = 0.0;
                    for (k, &y) in x.iter().enumerate() {
                        p[1 - coord] = y;
                        let c = if k == 0 || k == n { 0.5 } else { 1.0 };
                        s += c * weight(&p);
                    }
                    s * h
                }
            })
            .collect();
        let mut cdf = vec![0.0; x.len()];
        for k in 1..x.len() {
            cdf[k] = cdf[k - 1] + 0.5 * h * (density[k] + density[k - 1]);
        }
        let z = *cdf.last().unwrap();
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::OracleUndefined("normalizer is not finite".into()));
        }
        cdf.iter_mut().for_each(|c| *c /= z);
        let density = density.into_iter().map(|p| p / z).collect();
        Ok(Self { x, cdf, density })
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t <= self.x[0] {
            return 0.0;
        }
        let last = self.x.len() - 1;
        if t >= self.x[last] {
            return 1.0;
        }
        let k = self.x.partition_point(|&s| s <= t) - 1;
        let h = self.x[k + 1] - self.x[k];
        let u = (t - self.x[k]) / h;
        let (u2, u3) = (u * u, u * u * u);
        (2.0 * u3 - 3.0 * u2 + 1.0) * self.cdf[k]
            + (u3 - 2.0 * u2 + u) * h * self.density[k]
            + (-2.0 * u3 + 3.0 * u2) * self.cdf[k + 1]
            + (u3 - u2) * h * self.density[k + 1]
    }

    /// Normalized density at the grid nodes.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x.iter().copied().zip(self.density.iter().copied())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GibbsReport {
    pub samples: usize,
    pub ks: f64,
    pub max_ks: f64,
    pub min_samples: usize,
    pub pass: bool,
}

/// KS distance between barycenter samples (one coordinate) and the marginal of
/// the density proportional to `exp(-2 V / sigma0^2)`.
pub fn gibbs_dirac_check(
    samples: &[f64],
    v: &PotentialSpec,
    sigma0: f64,
    coord: usize,
    max_ks: f64,
    min_samples: usize,
) -> Result<GibbsReport> {
    if samples.is_empty() {
        return Err(invalid("no samples"));
    }
    let g = GibbsMarginal::new(v, sigma0, coord)?;
    let ks = ks_distance(samples, |t| g.cdf(t));
    Ok(GibbsReport {
        samples: samples.len(),
        ks,
        max_ks,
        min_samples,
        pass: ks < max_ks && samples.len() >= min_samples,
    })
}

/// Lag (in samples) at which the pooled autocorrelation first drops below `1/e`.
pub fn correlation_lag(series: &[Vec<f64>]) -> usize {
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    if len < 4 {
        return 1;
    }
    let mut var = 0.0;
    let centered: Vec<Vec<f64>> = series
        .iter()
        .map(|s| {
            let m = s[..len].iter().sum::<f64>() / len as f64;
            s[..len].iter().map(|x| x - m).collect()
        })
        .collect();
    for c in &centered {
        var += c.iter().map(|x| x * x).sum::<f64>();
    }
    if var == 0.0 {
        return 1;
    }
    for lag in 1..len / 2 {
        let mut acc = 0.0;
        for c in &centered {
            acc += c[..len - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>();
        }
        if acc / var < (-1.0f64).exp() {
            return lag;
        }
    }
    len / 2
}

#[derive(Clone, Debug, Serialize)]
pub struct CollapseFit {
    pub fit: RateFit,
    pub warnings: Vec<String>,
}

/// Exponential rate of the mean within-ensemble spread for `sigma = 0` and a
/// quadratic interaction of strength `alpha`.
pub fn variance_collapse_rate(
    times: &[f64],
    spread: &[f64],
    sigma: f64,
    alpha: f64,
    lipschitz_v: f64,
) -> Result<CollapseFit> {
    if sigma != 0.0 {
        return Err(Error::Precondition("variance collapse needs sigma = 0".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Precondition("variance collapse needs a quadratic interaction with alpha > 0".into()));
    }
    let mut warnings = Vec::new();
    if alpha <= 2.0 * lipschitz_v {
        warnings.push(format!("alpha = {alpha} <= 2 L_V = {}: no guaranteed collapse rate", 2.0 * lipschitz_v));
    }
    let floor = 1e-14;
    let alive = spread.iter().take_while(|&&s| s >= floor).count();
    if alive < 20 {
        warnings.push("spread fell below 1e-14 before a fit window formed".into());
    }
    let fit = fit_rate_with(
        &times[..alive.max(1).min(times.len())],
        &spread[..alive.max(1).min(spread.len())],
        FitOptions {
            floor_hint: Some(0.0),
            min_value: floor,
            ..FitOptions::default()
        },
    )?;
    Ok(CollapseFit { fit, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ou_linear_functional() {
        let v = PotentialSpec::quadratic(vec![0.0], 1.0, 6.0).unwrap();
        let m = EmpiricalMeasure::from_1d(vec![1.0, 2.0, 3.0]).unwrap();
        let g = generator_apply(&Functional::Coordinate { index: 0 }, &m, &v, &InteractionSpec::None, 0.5, 0.5).unwrap();
        assert!((g + 2.0).abs() < 1e-12);
    }

    #[test]
    fn variance_on_dirac() {
        let v = PotentialSpec::quadratic(vec![0.0, 0.0], 1.0, 6.0).unwrap();
        let w = InteractionSpec::quadratic(1.0).unwrap();
        let m = EmpiricalMeasure::new(vec![0.3, -0.2, 0.3, -0.2], 2).unwrap();
        let g = generator_apply(&Functional::Variance, &m, &v, &w, 0.7, 1.3).unwrap();
        assert!((g - 0.49 * 2.0).abs() < 1e-12);
        let g0 = generator_apply(&Functional::Variance, &m, &v, &w, 0.0, 1.3).unwrap();
        assert!(g0.abs() < 1e-12);
    }

    #[test]
    fn gibbs_quadratic_is_gaussian() {
        let v = PotentialSpec::quadratic(vec![0.0], 1.0, 6.0).unwrap();
        let g = GibbsMarginal::new(&v, 1.5, 0).unwrap();
        // exp(-2 x^2/2 / 2.25) is N(0, 1.125)
        let sd = 1.125f64.sqrt();
        for t in [-2.0, -0.5, 0.0, 0.7, 3.0] {
            assert!((g.cdf(t) - std_normal_cdf(t / sd)).abs() < 1e-7);
        }
    }

    #[test]
    fn gibbs_needs_common_noise() {
        let v = PotentialSpec::double_well_1d(6.0).unwrap();
        assert!(matches!(GibbsMarginal::new(&v, 0.0, 0), Err(Error::OracleUndefined(_))));
    }

    #[test]
    fn collapse_preconditions() {
        let t: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let s: Vec<f64> = t.iter().map(|x| (-12.0 * x).exp()).collect();
        assert!(variance_collapse_rate(&t, &s, 0.0, 0.0, 1.0).is_err());
        assert!(variance_collapse_rate(&t, &s, 0.1, 5.0, 1.0).is_err());
        let f = variance_collapse_rate(&t, &s, 0.0, 5.0, 1.0).unwrap();
        assert!((f.fit.rate - 12.0).abs() < 1e-9);
    }
}
