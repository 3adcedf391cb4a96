//! Exponential rate fits and chaos-scaling regression.

use serde::Serialize;

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct FitOptions<'a> {
    /// Known floor; `None` estimates it as the median of the final 20%.
    pub floor_hint: Option<f64>,
    /// Points at or below this value are never fitted.
    pub min_value: f64,
    /// Fraction of the admissible window, taken from its end, used in the fit.
    pub late_fraction: f64,
    /// Monte Carlo standard errors of `values`; the window also ends where
    /// a value drops below `se_multiple` times its standard error.
    pub se: Option<&'a [f64]>,
    pub se_multiple: f64,
}

impl Default for FitOptions<'_> {
    fn default() -> Self {
        Self {
            floor_hint: None,
            min_value: 0.0,
            late_fraction: 0.5,
            se: None,
            se_multiple: 3.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub rate_se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub plateau: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub points: usize,
    /// First time the series falls to three times the plateau.
    pub plateau_reached_at: Option<f64>,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn fit_rate(times: &[f64], values: &[f64], floor_hint: Option<f64>) -> Result<RateFit> {
    fit_rate_with(
        times,
        values,
        FitOptions {
            floor_hint,
            ..FitOptions::default()
        },
    )
}

/// As [`fit_rate`], with the window cut where the mean is no longer
/// resolved from zero by three standard errors.
pub fn fit_rate_resolved(times: &[f64], values: &[f64], se: &[f64], floor_hint: Option<f64>) -> Result<RateFit> {
    fit_rate_with(
        times,
        values,
        FitOptions {
            floor_hint,
            se: Some(se),
            ..FitOptions::default()
        },
    )
}

/// Least squares on `log(value - plateau)` over the late part of the window
/// where the signal exceeds three times the plateau.
pub fn fit_rate_with(times: &[f64], values: &[f64], opts: FitOptions) -> Result<RateFit> {
    if times.len() != values.len() {
        return Err(invalid("times and values differ in length"));
    }
    if times.iter().chain(values).any(|x| !x.is_finite()) {
        return Err(invalid("series must be finite"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("times must be strictly increasing"));
    }
    if !(opts.late_fraction > 0.0 && opts.late_fraction <= 1.0) {
        return Err(invalid("late_fraction must lie in (0, 1]"));
    }
    if opts.se.is_some_and(|se| se.len() != values.len()) {
        return Err(invalid("standard errors and values differ in length"));
    }
    let n = values.len();
    if n < 10 {
        return Err(Error::FitImpossible(format!("{n} points, need at least 10")));
    }
    let plateau = match opts.floor_hint {
        Some(p) => p,
        None => median(&values[n - (n / 5).max(1)..]).max(0.0),
    };
    let threshold = (3.0 * plateau).max(opts.min_value);
    let end = values
        .iter()
        .enumerate()
        .position(|(i, &v)| {
            v <= threshold || v - plateau <= 0.0 || opts.se.is_some_and(|se| v < opts.se_multiple * se[i])
        })
        .unwrap_or(n);
    let plateau_reached_at = values.iter().position(|&v| v <= 3.0 * plateau).map(|i| times[i]);
    if end < 10 {
        return Err(Error::FitImpossible(format!(
            "only {end} admissible points (plateau {plateau:.3e})"
        )));
    }
    let start = (((end as f64) * (1.0 - opts.late_fraction)).floor() as usize).min(end - 10);
    let t = &times[start..end];
    let y: Vec<f64> = values[start..end].iter().map(|v| (v - plateau).ln()).collect();
    let m = t.len() as f64;
    let tm = t.iter().sum::<f64>() / m;
    let ym = y.iter().sum::<f64>() / m;
    let sxx: f64 = t.iter().map(|x| (x - tm) * (x - tm)).sum();
    let sxy: f64 = t.iter().zip(&y).map(|(x, v)| (x - tm) * (v - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    let ss_res: f64 = t
        .iter()
        .zip(&y)
        .map(|(x, v)| (v - intercept - slope * x).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().map(|v| (v - ym) * (v - ym)).sum();
    let se = (ss_res / (m - 2.0) / sxx).sqrt();
    let rate = -slope;
    Ok(RateFit {
        rate,
        rate_se: se,
        ci_low: rate - 1.96 * se,
        ci_high: rate + 1.96 * se,
        intercept,
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        plateau,
        t_start: t[0],
        t_end: *t.last().unwrap(),
        points: t.len(),
        plateau_reached_at,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingReport {
    pub ns: Vec<usize>,
    pub plateaus: Vec<f64>,
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
}

/// Regression of `log plateau` on `log N`.
pub fn scaling_slope(ns: &[usize], plateaus: &[f64]) -> Result<ScalingReport> {
    if ns.len() != plateaus.len() {
        return Err(invalid("N list and plateau list differ in length"));
    }
    let mut distinct = ns.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 || distinct.len() != ns.len() {
        return Err(invalid("need at least three distinct N values"));
    }
    if plateaus.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(invalid("plateaus must be positive"));
    }
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = plateaus.iter().map(|p| p.ln()).collect();
    let m = x.len() as f64;
    let xm = x.iter().sum::<f64>() / m;
    let ym = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|a| (a - xm) * (a - xm)).sum();
    let slope = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum::<f64>() / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Ok(ScalingReport {
        ns: ns.to_vec(),
        plateaus: plateaus.to_vec(),
        slope,
        slope_se: (ss_res / (m - 2.0) / sxx).sqrt(),
        intercept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * dt).collect()
    }

    #[test]
    fn exponential_with_floor() {
        let t = grid(200, 0.05);
        let v: Vec<f64> = t.iter().map(|x| 5.0 * (-2.0 * x).exp() + 0.01).collect();
        let f = fit_rate(&t, &v, None).unwrap();
        assert!((f.rate - 2.0).abs() < 0.05, "{f:?}");
    }

    #[test]
    fn two_rates_fit_the_slow_one() {
        let t = grid(400, 0.05);
        let v: Vec<f64> = t.iter().map(|x| (-x).exp() + (-10.0 * x).exp()).collect();
        let f = fit_rate(&t, &v, None).unwrap();
        assert!((f.rate - 1.0).abs() < 0.1, "{f:?}");
    }

    #[test]
    fn flat_series_cannot_be_fitted() {
        let t = grid(100, 0.1);
        let v = vec![0.3; 100];
        assert!(matches!(fit_rate(&t, &v, None), Err(Error::FitImpossible(_))));
    }

    #[test]
    fn scaling_needs_three_distinct() {
        assert!(scaling_slope(&[100, 100, 400], &[0.1, 0.1, 0.05]).is_err());
        let r = scaling_slope(&[100, 400, 1600], &[0.1, 0.05, 0.025]).unwrap();
        assert!((r.slope + 0.5).abs() < 1e-12);
    }
}
