//! Distorted metric `f` built from the one-sided convexity profile of `V`.
//!
//! With `diff` the common-noise diffusion coefficient (default `sigma0^2`):
//! `phi(r) = exp(-(1/(2 diff)) int_0^r s kappa_-(s) ds)`, `Phi = int phi`,
//! `g(r) = 1 - (ell/2) int_0^{min(r,R1)} Phi/phi`, `f = int phi g`.

use std::io::Write;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{InteractionSpec, PotentialSpec};

#[derive(Clone, Copy, Debug)]
pub struct MetricOptions {
    /// Diffusion coefficient in `phi`; `None` means `sigma0^2`.
    pub diff: Option<f64>,
    pub quad_step: f64,
    /// Upper end of the `R0`/`R1` search.
    pub search_limit: f64,
    /// `r_max = r_max_factor * R1`.
    pub r_max_factor: f64,
    pub rel_tol: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            diff: None,
            quad_step: 1e-2,
            search_limit: 100.0,
            r_max_factor: 4.0,
            rel_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DistortedMetric {
    r0: f64,
    r1: f64,
    ell: f64,
    phi_r0: f64,
    sigma0: f64,
    diff: f64,
    quad_step: f64,
    r: Vec<f64>,
    f: Vec<f64>,
    fp: Vec<f64>,
    phi: Vec<f64>,
    big_phi: Vec<f64>,
    g: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MetricSummary {
    pub r0: f64,
    pub r1: f64,
    pub ell: f64,
    pub phi_r0: f64,
    pub sigma0: f64,
    pub diff: f64,
    pub quad_step: f64,
    pub r_max: f64,
}

pub fn build_metric(v: &PotentialSpec, sigma0: f64, quad_step: f64) -> Result<DistortedMetric> {
    build_metric_with(
        v,
        sigma0,
        MetricOptions {
            quad_step,
            ..MetricOptions::default()
        },
    )
}

pub fn build_metric_with(
    v: &PotentialSpec,
    sigma0: f64,
    opts: MetricOptions,
) -> Result<DistortedMetric> {
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(invalid("sigma0 must be positive"));
    }
    if !(opts.quad_step > 0.0 && opts.quad_step.is_finite()) {
        return Err(invalid("quad_step must be positive"));
    }
    let diff = opts.diff.unwrap_or(sigma0 * sigma0);
    if !(diff > 0.0 && diff.is_finite()) {
        return Err(invalid("diffusion coefficient must be positive"));
    }
    let gamma = v.kappa_liminf();
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::NotConfining(gamma));
    }
    let kappa = |r: f64| v.kappa(r);
    let (r0, r1) = find_radii(&kappa, diff, opts.search_limit)?;
    let r_max = (opts.r_max_factor * r1).max(r1);
    let mut breaks = vec![0.0];
    for b in [r0, r1, r_max] {
        if b > *breaks.last().unwrap() {
            breaks.push(b);
        }
    }
    let base: Vec<usize> = breaks
        .windows(2)
        .map(|w| ((w[1] - w[0]) / opts.quad_step).ceil().max(1.0) as usize)
        .collect();

    let mut h = opts.quad_step;
    let mut coarse = tabulate(&kappa, diff, r1, &breaks, &base, 1)?;
    let mut fine = tabulate(&kappa, diff, r1, &breaks, &base, 2)?;
    let mut best = extrapolate(&coarse, &fine);
    let mut level = 1;
    loop {
        let next_fine = tabulate(&kappa, diff, r1, &breaks, &base, 1 << (level + 1))?;
        let next = extrapolate(&fine, &next_fine);
        h /= 2.0;
        let change = ((next.ell - best.ell) / best.ell).abs();
        coarse = fine;
        fine = next_fine;
        best = next;
        level += 1;
        if change < opts.rel_tol || coarse.r.len() > 4_000_000 {
            break;
        }
    }
    let phi_r0 = best.value_at_node(&best.phi, r0);
    if !(phi_r0 > 0.0) || !best.ell.is_finite() || best.ell <= 0.0 {
        return Err(invalid("sigma0 too small: phi(R0) underflows"));
    }
    Ok(DistortedMetric {
        r0,
        r1,
        ell: best.ell,
        phi_r0,
        sigma0,
        diff,
        quad_step: h,
        r: best.r,
        f: best.f,
        fp: best.fp,
        phi: best.phi,
        big_phi: best.big_phi,
        g: best.g,
    })
}

fn find_radii(kappa: &dyn Fn(f64) -> f64, diff: f64, limit: f64) -> Result<(f64, f64)> {
    let n = 20_000;
    let step = limit / n as f64;
    let grid: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
    let vals: Vec<f64> = grid.iter().map(|&r| kappa(r)).collect();
    let r0 = match vals.iter().rposition(|&k| k < 0.0) {
        None => 0.0,
        Some(j) if j == n => return Err(Error::IncreaseRMax(limit)),
        Some(j) => bisect(|r| kappa(r) >= 0.0, grid[j], grid[j + 1]),
    };
    let mut suffix = vals.clone();
    for k in (0..n).rev() {
        suffix[k] = suffix[k].min(suffix[k + 1]);
    }
    let tail_min = |s: f64| {
        let j = grid.partition_point(|&r| r <= s);
        let rest = if j <= n { suffix[j] } else { f64::INFINITY };
        kappa(s).min(rest)
    };
    let ok = |s: f64| s > r0 && s * (s - r0) * tail_min(s) >= 4.0 * diff;
    let mut lo = r0;
    for &s in grid.iter().filter(|&&s| s > r0) {
        if ok(s) {
            return Ok((r0, bisect(ok, lo, s)));
        }
        lo = s;
    }
    Err(Error::IncreaseRMax(limit))
}

/// Smallest point where a monotone predicate turns true, given `pred(hi)`.
fn bisect(pred: impl Fn(f64) -> bool, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

struct Table {
    r: Vec<f64>,
    phi: Vec<f64>,
    big_phi: Vec<f64>,
    g: Vec<f64>,
    f: Vec<f64>,
    fp: Vec<f64>,
    ell: f64,
}

impl Table {
    fn value_at_node(&self, col: &[f64], r: f64) -> f64 {
        let k = self
            .r
            .iter()
            .position(|&x| (x - r).abs() <= 1e-12 * r.max(1.0))
            .expect("breakpoint is a node");
        col[k]
    }
}

fn tabulate(
    kappa: &dyn Fn(f64) -> f64,
    diff: f64,
    r1: f64,
    breaks: &[f64],
    base: &[usize],
    mult: usize,
) -> Result<Table> {
    let mut r = vec![0.0];
    for (w, &n) in breaks.windows(2).zip(base) {
        let n = n * mult;
        for k in 1..=n {
            r.push(if k == n {
                w[1]
            } else {
                w[0] + (w[1] - w[0]) * k as f64 / n as f64
            });
        }
    }
    let len = r.len();
    let integrand: Vec<f64> = r.iter().map(|&s| s * (-kappa(s)).max(0.0)).collect();
    let i = cumtrapz(&r, &integrand);
    let phi: Vec<f64> = i.iter().map(|&x| (-x / (2.0 * diff)).exp()).collect();
    let big_phi = cumtrapz(&r, &phi);
    let ratio: Vec<f64> = (0..len)
        .map(|k| if r[k] <= r1 { big_phi[k] / phi[k] } else { 0.0 })
        .collect();
    let mut j = cumtrapz(&r, &ratio);
    let k1 = r.iter().rposition(|&x| x <= r1).unwrap();
    let j1 = j[k1];
    for v in j.iter_mut().skip(k1 + 1) {
        *v = j1;
    }
    let ell = 1.0 / j1;
    let g: Vec<f64> = j.iter().map(|&x| 1.0 - 0.5 * ell * x).collect();
    let fp: Vec<f64> = phi.iter().zip(&g).map(|(p, q)| p * q).collect();
    let f = cumtrapz(&r, &fp);
    if !ell.is_finite() || phi.iter().any(|p| !p.is_finite()) {
        return Err(invalid("metric quadrature overflowed"));
    }
    Ok(Table {
        r,
        phi,
        big_phi,
        g,
        f,
        fp,
        ell,
    })
}

fn cumtrapz(r: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; r.len()];
    for k in 1..r.len() {
        out[k] = out[k - 1] + 0.5 * (r[k] - r[k - 1]) * (y[k] + y[k - 1]);
    }
    out
}

fn extrapolate(coarse: &Table, fine: &Table) -> Table {
    let rich = |c: &[f64], f: &[f64]| -> Vec<f64> {
        c.iter()
            .enumerate()
            .map(|(k, &x)| (4.0 * f[2 * k] - x) / 3.0)
            .collect()
    };
    let phi = rich(&coarse.phi, &fine.phi);
    let g = rich(&coarse.g, &fine.g);
    Table {
        r: coarse.r.clone(),
        big_phi: rich(&coarse.big_phi, &fine.big_phi),
        f: rich(&coarse.f, &fine.f),
        fp: phi.iter().zip(&g).map(|(p, q)| p * q).collect(),
        phi,
        g,
        ell: (4.0 * fine.ell - coarse.ell) / 3.0,
    }
}

impl DistortedMetric {
    pub fn r0(&self) -> f64 {
        self.r0
    }
    pub fn r1(&self) -> f64 {
        self.r1
    }
    pub fn ell(&self) -> f64 {
        self.ell
    }
    pub fn phi_r0(&self) -> f64 {
        self.phi_r0
    }
    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }
    pub fn diff(&self) -> f64 {
        self.diff
    }
    /// Step of the final tabulation.
    pub fn quad_step(&self) -> f64 {
        self.quad_step
    }
    pub fn r_max(&self) -> f64 {
        *self.r.last().unwrap()
    }
    pub fn nodes(&self) -> &[f64] {
        &self.r
    }

    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            r0: self.r0,
            r1: self.r1,
            ell: self.ell,
            phi_r0: self.phi_r0,
            sigma0: self.sigma0,
            diff: self.diff,
            quad_step: self.quad_step,
            r_max: self.r_max(),
        }
    }

    pub fn eval_f(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(invalid(format!("eval_f needs r >= 0, got {r}")));
        }
        Ok(self.f_nonneg(r))
    }

    pub(crate) fn f_nonneg(&self, r: f64) -> f64 {
        let last = self.r.len() - 1;
        if r >= self.r[last] {
            return self.f[last] + self.fp[last] * (r - self.r[last]);
        }
        let k = self.cell(r);
        let h = self.r[k + 1] - self.r[k];
        let t = (r - self.r[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.f[k]
            + (t3 - 2.0 * t2 + t) * h * self.fp[k]
            + (-2.0 * t3 + 3.0 * t2) * self.f[k + 1]
            + (t3 - t2) * h * self.fp[k + 1]
    }

    pub fn eval_fprime(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(invalid(format!("eval_fprime needs r >= 0, got {r}")));
        }
        let last = self.r.len() - 1;
        if r >= self.r[last] {
            return Ok(self.fp[last]);
        }
        let k = self.cell(r);
        let h = self.r[k + 1] - self.r[k];
        let t = (r - self.r[k]) / h;
        let t2 = t * t;
        Ok((6.0 * t2 - 6.0 * t) / h * self.f[k]
            + (3.0 * t2 - 4.0 * t + 1.0) * self.fp[k]
            + (-6.0 * t2 + 6.0 * t) / h * self.f[k + 1]
            + (3.0 * t2 - 2.0 * t) * self.fp[k + 1])
    }

    fn cell(&self, r: f64) -> usize {
        (self.r.partition_point(|&x| x <= r) - 1).min(self.r.len() - 2)
    }

    /// `ell sigma0^2 - 4 L_W / phi(R0)`.
    pub fn rate_c(&self, w: &InteractionSpec) -> f64 {
        self.ell * self.sigma0 * self.sigma0 - 4.0 * w.lipschitz() / self.phi_r0
    }

    /// Nodes with `r, f, f', phi, Phi, g`.
    pub fn table_rows(&self) -> impl Iterator<Item = [f64; 6]> + '_ {
        (0..self.r.len()).map(move |k| {
            [
                self.r[k],
                self.f[k],
                self.fp[k],
                self.phi[k],
                self.big_phi[k],
                self.g[k],
            ]
        })
    }

    pub fn write_csv(&self, w: Option<&InteractionSpec>, out: &mut impl Write) -> Result<()> {
        writeln!(out, "# r0={:.17e}", self.r0)?;
        writeln!(out, "# r1={:.17e}", self.r1)?;
        writeln!(out, "# ell={:.17e}", self.ell)?;
        writeln!(out, "# phi_r0={:.17e}", self.phi_r0)?;
        writeln!(out, "# sigma0={:.17e}", self.sigma0)?;
        writeln!(out, "# diff={:.17e}", self.diff)?;
        writeln!(out, "# quad_step={:.17e}", self.quad_step)?;
        if let Some(w) = w {
            writeln!(out, "# rate_c={:.17e}", self.rate_c(w))?;
        }
        writeln!(out, "r,f,fprime,phi,big_phi,g")?;
        for row in self.table_rows() {
            let s: Vec<String> = row.iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(out, "{}", s.join(","))?;
        }
        Ok(())
    }
}

pub fn rate_c(m: &DistortedMetric, w: &InteractionSpec, sigma0: f64) -> Result<f64> {
    if (m.sigma0 - sigma0).abs() > 1e-12 * sigma0.max(1.0) {
        return Err(invalid("metric was built for a different sigma0"));
    }
    Ok(m.rate_c(w))
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport {
    pub max_excess: f64,
    pub worst_r: f64,
    pub tolerance: f64,
    pub max_abs_f2: f64,
    pub pass: bool,
}

/// Checks `f'' - (1/(2 diff)) r kappa(r) f' + ell f / 2 <= tol` on `r_grid`,
/// with `f''` from central differences at a quarter of the table step.
pub fn check_contraction_inequality(
    m: &DistortedMetric,
    v: &PotentialSpec,
    r_grid: &[f64],
) -> Result<ContractionReport> {
    if r_grid.is_empty() || r_grid.iter().any(|&r| !(r > 0.0 && r <= m.r_max() * (1.0 + 1e-12))) {
        return Err(invalid("r grid must lie in (0, r_max]"));
    }
    let h = m.quad_step / 4.0;
    let odd = |r: f64| {
        if r < 0.0 {
            -m.f_nonneg(-r)
        } else {
            m.f_nonneg(r)
        }
    };
    let mut f2 = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        f2.push((odd(r + h) - 2.0 * odd(r) + odd(r - h)) / (h * h));
    }
    let scale = f2.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let tolerance = 1e-6 * scale.max(f64::MIN_POSITIVE);
    let mut max_excess = f64::NEG_INFINITY;
    let mut worst_r = r_grid[0];
    for (&r, &d2) in r_grid.iter().zip(&f2) {
        let lhs = d2 - r * v.kappa(r) * m.eval_fprime(r)? / (2.0 * m.diff) + 0.5 * m.ell * m.f_nonneg(r);
        if lhs > max_excess {
            max_excess = lhs;
            worst_r = r;
        }
    }
    Ok(ContractionReport {
        max_excess,
        worst_r,
        tolerance,
        max_abs_f2: scale,
        pass: max_excess <= tolerance,
    })
}

/// `count` points on `(0, upper]` offset by half a spacing.
pub fn contraction_grid(upper: f64, count: usize) -> Vec<f64> {
    let d = upper / count as f64;
    (0..count).map(|k| (k as f64 + 0.5) * d).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdReport {
    /// `None` when `c > 0` for every `sigma0 > 0`.
    pub threshold: Option<f64>,
    pub boundary: bool,
    pub grid: Vec<(f64, f64)>,
}

/// `c` at `sigma0`, with `-inf` when `phi(R0)` underflows.
pub fn rate_c_at(v: &PotentialSpec, w: &InteractionSpec, sigma0: f64, quad_step: f64) -> Result<f64> {
    match build_metric(v, sigma0, quad_step) {
        Ok(m) => Ok(m.rate_c(w)),
        Err(Error::InvalidArgument(msg)) if msg.contains("underflow") || msg.contains("overflow") => {
            Ok(f64::NEG_INFINITY)
        }
        Err(e) => Err(e),
    }
}

pub fn sigma0_threshold(
    v: &PotentialSpec,
    w: &InteractionSpec,
    lo: f64,
    hi: f64,
    quad_step: f64,
) -> Result<ThresholdReport> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(invalid("need 0 < lo < hi"));
    }
    let n = 20;
    let mut grid = Vec::with_capacity(n);
    for k in 0..n {
        let s = lo * (hi / lo).powf(k as f64 / (n - 1) as f64);
        grid.push((s, rate_c_at(v, w, s, quad_step)?));
    }
    if w.lipschitz() == 0.0 {
        return Ok(ThresholdReport {
            threshold: None,
            boundary: true,
            grid,
        });
    }
    let last_bad = grid.iter().rposition(|&(_, c)| c <= 0.0);
    let j = match last_bad {
        Some(j) if j + 1 < n => j,
        _ => return Err(Error::NoThresholdInInterval { lo, hi }),
    };
    let (mut a, mut b) = (grid[j].0, grid[j + 1].0);
    while b - a > 1e-5 {
        let mid = 0.5 * (a + b);
        if rate_c_at(v, w, mid, quad_step)? > 0.0 {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(ThresholdReport {
        threshold: Some(0.5 * (a + b)),
        boundary: false,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DEFAULT_BOX;

    fn unit_convex() -> DistortedMetric {
        let v = PotentialSpec::quadratic(vec![0.0], 1.0, DEFAULT_BOX).unwrap();
        build_metric(&v, 1.0, 1e-2).unwrap()
    }

    #[test]
    fn convex_closed_form() {
        let m = unit_convex();
        assert_eq!(m.r0(), 0.0);
        assert!((m.r1() - 2.0).abs() < 1e-10);
        assert!((m.ell() - 0.5).abs() < 1e-8);
        assert!((m.eval_f(2.0).unwrap() - 5.0 / 3.0).abs() < 1e-8);
        assert!((m.rate_c(&InteractionSpec::None) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn affine_past_r1() {
        let m = unit_convex();
        let a = m.eval_f(3.0).unwrap();
        let b = m.eval_f(5.0).unwrap();
        let c = m.eval_f(20.0).unwrap();
        assert!(((c - b) / 15.0 - (b - a) / 2.0).abs() < 1e-10);
        assert!((m.eval_fprime(3.0).unwrap() - 0.5).abs() < 1e-8);
    }

    #[test]
    fn double_well_radii() {
        let v = PotentialSpec::double_well_1d(DEFAULT_BOX).unwrap();
        let m = build_metric(&v, 1.0, 1e-2).unwrap();
        assert!((m.r0() - 2.0).abs() < 1e-10);
        assert!((m.phi_r0() - (-0.5f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn negative_radius_rejected() {
        assert!(unit_convex().eval_f(-1.0).is_err());
    }

    #[test]
    fn csv_has_header_block() {
        let mut buf = Vec::new();
        unit_convex().write_csv(None, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# r0="));
        assert!(s.contains("\nr,f,fprime,phi,big_phi,g\n"));
    }
}
