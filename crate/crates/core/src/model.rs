//! Confining potentials, interaction kernels and their structural constants.
//!
//! `kappa` is the direction-uniform lower bound
//! `(grad V(x) - grad V(y)) . (x - y) >= kappa(|x - y|) |x - y|^2`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const DEFAULT_BOX: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    /// `curvature/2 * |x - center|^2`
    Quadratic { center: Vec<f64>, curvature: f64 },
    /// `x^4/4 - x^2/2`
    #[serde(rename = "double_well_1d")]
    DoubleWell1d,
    /// `|x|^4/4 - |x|^2/2`
    RadialDoubleWell { dim: usize },
    /// Separable: `sum_k sum_j coefficients[k][j] * x_k^j`.
    CustomPolynomial { coefficients: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum KappaProfile {
    Constant(f64),
    /// `r^2/4 - 1`
    QuarticWell,
    /// Linear interpolation on `r`, held constant outside the nodes.
    Tabulated { r: Vec<f64>, values: Vec<f64> },
}

impl KappaProfile {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            KappaProfile::Constant(k) => *k,
            KappaProfile::QuarticWell => r * r / 4.0 - 1.0,
            KappaProfile::Tabulated { r: nodes, values } => {
                if r <= nodes[0] {
                    return values[0];
                }
                let last = nodes.len() - 1;
                if r >= nodes[last] {
                    return values[last];
                }
                let k = nodes.partition_point(|&x| x <= r) - 1;
                let w = (r - nodes[k]) / (nodes[k + 1] - nodes[k]);
                values[k] * (1.0 - w) + values[k + 1] * w
            }
        }
    }

    pub fn liminf(&self) -> f64 {
        match self {
            KappaProfile::Constant(k) => *k,
            KappaProfile::QuarticWell => f64::INFINITY,
            KappaProfile::Tabulated { values, .. } => *values.last().unwrap(),
        }
    }

    fn is_analytic(&self) -> bool {
        !matches!(self, KappaProfile::Tabulated { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialSpec {
    kind: PotentialKind,
    dim: usize,
    box_half_width: f64,
    kappa: KappaProfile,
    lipschitz: f64,
    convexity_modulus: Option<f64>,
}

impl PotentialSpec {
    pub fn quadratic(center: Vec<f64>, curvature: f64, box_half_width: f64) -> Result<Self> {
        check_box(box_half_width)?;
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(invalid("quadratic center must be a non-empty finite vector"));
        }
        if !(curvature > 0.0 && curvature.is_finite()) {
            return Err(invalid("quadratic curvature must be positive"));
        }
        Ok(Self {
            dim: center.len(),
            kind: PotentialKind::Quadratic { center, curvature },
            box_half_width,
            kappa: KappaProfile::Constant(curvature),
            lipschitz: curvature,
            convexity_modulus: Some(curvature),
        })
    }

    pub fn double_well_1d(box_half_width: f64) -> Result<Self> {
        check_box(box_half_width)?;
        let b = box_half_width;
        Ok(Self {
            kind: PotentialKind::DoubleWell1d,
            dim: 1,
            box_half_width,
            kappa: KappaProfile::QuarticWell,
            lipschitz: 3.0 * b * b - 1.0,
            convexity_modulus: None,
        })
    }

    pub fn radial_double_well(dim: usize, box_half_width: f64) -> Result<Self> {
        check_box(box_half_width)?;
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        let b = box_half_width;
        Ok(Self {
            kind: PotentialKind::RadialDoubleWell { dim },
            dim,
            box_half_width,
            kappa: KappaProfile::QuarticWell,
            lipschitz: 3.0 * dim as f64 * b * b - 1.0,
            convexity_modulus: None,
        })
    }

    pub fn custom_polynomial(coefficients: Vec<Vec<f64>>, box_half_width: f64) -> Result<Self> {
        check_box(box_half_width)?;
        if coefficients.is_empty() {
            return Err(invalid("polynomial needs at least one coordinate"));
        }
        for c in &coefficients {
            if c.iter().any(|x| !x.is_finite()) {
                return Err(invalid("polynomial coefficients must be finite"));
            }
            let deg = c.iter().rposition(|&x| x != 0.0).unwrap_or(0);
            if deg < 2 || deg % 2 == 1 || c[deg] <= 0.0 {
                return Err(invalid(
                    "each coordinate polynomial needs even degree >= 2 with positive leading coefficient",
                ));
            }
        }
        let dim = coefficients.len();
        let b = box_half_width;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        let m = 4000;
        for c in &coefficients {
            for k in 0..=m {
                let x = -b + 2.0 * b * k as f64 / m as f64;
                let h = poly_d2(c, x);
                lo = lo.min(h);
                hi = hi.max(h.abs());
            }
        }
        let mut spec = Self {
            kind: PotentialKind::CustomPolynomial { coefficients },
            dim,
            box_half_width,
            kappa: KappaProfile::Tabulated {
                r: vec![1.0],
                values: vec![0.0],
            },
            lipschitz: hi,
            convexity_modulus: (lo > 0.0).then_some(lo),
        };
        let r_end = (4.0 * b * (dim as f64).sqrt()).max(8.0);
        let nodes: Vec<f64> = (1..=400).map(|k| r_end * k as f64 / 400.0).collect();
        let values = kappa_from_grad(&spec, &nodes)?;
        spec.kappa = KappaProfile::Tabulated { r: nodes, values };
        Ok(spec)
    }

    pub fn from_kind(kind: PotentialKind, box_half_width: f64) -> Result<Self> {
        match kind {
            PotentialKind::Quadratic { center, curvature } => {
                Self::quadratic(center, curvature, box_half_width)
            }
            PotentialKind::DoubleWell1d => Self::double_well_1d(box_half_width),
            PotentialKind::RadialDoubleWell { dim } => Self::radial_double_well(dim, box_half_width),
            PotentialKind::CustomPolynomial { coefficients } => {
                Self::custom_polynomial(coefficients, box_half_width)
            }
        }
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn box_half_width(&self) -> f64 {
        self.box_half_width
    }

    pub fn kappa_profile(&self) -> &KappaProfile {
        &self.kappa
    }

    pub fn kappa(&self, r: f64) -> f64 {
        self.kappa.eval(r)
    }

    pub fn kappa_liminf(&self) -> f64 {
        self.kappa.liminf()
    }

    /// Lipschitz constant of `grad V` on the working box.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Strong convexity modulus, when `V` is convex (on the box for polynomials).
    pub fn convexity_modulus(&self) -> Option<f64> {
        self.convexity_modulus
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            PotentialKind::Quadratic { center, curvature } => {
                let s: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                0.5 * curvature * s
            }
            PotentialKind::DoubleWell1d => {
                let s = x[0] * x[0];
                s * s / 4.0 - s / 2.0
            }
            PotentialKind::RadialDoubleWell { .. } => {
                let s: f64 = x.iter().map(|a| a * a).sum();
                s * s / 4.0 - s / 2.0
            }
            PotentialKind::CustomPolynomial { coefficients } => coefficients
                .iter()
                .zip(x)
                .map(|(c, &xk)| c.iter().rev().fold(0.0, |acc, &a| acc * xk + a))
                .sum(),
        }
    }

    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            PotentialKind::Quadratic { center, curvature } => {
                for ((o, a), c) in out.iter_mut().zip(x).zip(center) {
                    *o = curvature * (a - c);
                }
            }
            PotentialKind::DoubleWell1d => {
                out[0] = x[0] * x[0] * x[0] - x[0];
            }
            PotentialKind::RadialDoubleWell { .. } => {
                let s: f64 = x.iter().map(|a| a * a).sum();
                for (o, a) in out.iter_mut().zip(x) {
                    *o = (s - 1.0) * a;
                }
            }
            PotentialKind::CustomPolynomial { coefficients } => {
                for ((o, c), &xk) in out.iter_mut().zip(coefficients).zip(x) {
                    *o = poly_d1(c, xk);
                }
            }
        }
    }
}

fn check_box(b: f64) -> Result<()> {
    if b > 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(invalid("box half-width must be positive and finite"))
    }
}

fn poly_d1(c: &[f64], x: f64) -> f64 {
    c.iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (j, &a)| acc * x + j as f64 * a)
}

fn poly_d2(c: &[f64], x: f64) -> f64 {
    c.iter()
        .enumerate()
        .skip(2)
        .rev()
        .fold(0.0, |acc, (j, &a)| acc * x + (j * (j - 1)) as f64 * a)
}

/// Sampled estimate of `kappa` on `r_grid`: minimum over pairs at distance `r`
/// whose midpoint lies in the working box. Clipped to the analytic profile
/// when one exists.
pub fn kappa_from_grad(v: &PotentialSpec, r_grid: &[f64]) -> Result<Vec<f64>> {
    if r_grid.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(invalid("r grid must be positive and finite"));
    }
    if r_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("r grid must be strictly increasing"));
    }
    let d = v.dim;
    let b = v.box_half_width;
    let (mids, dirs) = pair_samples(d, b);
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut gx = vec![0.0; d];
    let mut gy = vec![0.0; d];
    let mut out = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let mut best = f64::INFINITY;
        for m in mids.chunks(d) {
            for u in dirs.chunks(d) {
                for k in 0..d {
                    x[k] = m[k] + 0.5 * r * u[k];
                    y[k] = m[k] - 0.5 * r * u[k];
                }
                v.grad(&x, &mut gx);
                v.grad(&y, &mut gy);
                let s: f64 = (0..d).map(|k| (gx[k] - gy[k]) * (x[k] - y[k])).sum();
                best = best.min(s / (r * r));
            }
        }
        if v.kappa.is_analytic() {
            best = best.min(v.kappa(r));
        }
        out.push(best);
    }
    Ok(out)
}

fn pair_samples(d: usize, b: f64) -> (Vec<f64>, Vec<f64>) {
    if d == 1 {
        let m = 400;
        let mids = (0..=m).map(|k| -b + 2.0 * b * k as f64 / m as f64).collect();
        return (mids, vec![1.0]);
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0x6b61_7070_61);
    let mut mids = vec![0.0; d];
    for _ in 0..255 {
        for _ in 0..d {
            mids.push(rng.random_range(-b..=b));
        }
    }
    let mut dirs = Vec::new();
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        dirs.extend(e);
    }
    for _ in 0..16 {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        dirs.extend(g.iter().map(|a| a / n));
    }
    (mids, dirs)
}

type KernelGrad = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

#[derive(Clone)]
pub enum InteractionSpec {
    None,
    /// `W(z) = alpha/2 |z|^2`
    Quadratic { alpha: f64 },
    /// Even kernel given by its gradient.
    CustomEven {
        grad: Arc<KernelGrad>,
        lipschitz: f64,
        convex: bool,
    },
}

impl fmt::Debug for InteractionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InteractionSpec::None => write!(f, "None"),
            InteractionSpec::Quadratic { alpha } => write!(f, "Quadratic {{ alpha: {alpha} }}"),
            InteractionSpec::CustomEven { lipschitz, convex, .. } => {
                write!(f, "CustomEven {{ lipschitz: {lipschitz}, convex: {convex} }}")
            }
        }
    }
}

impl InteractionSpec {
    pub fn quadratic(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(invalid("alpha must be non-negative"));
        }
        Ok(InteractionSpec::Quadratic { alpha })
    }

    pub fn custom_even(
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        lipschitz: f64,
        convex: bool,
    ) -> Result<Self> {
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(invalid("interaction Lipschitz constant must be non-negative"));
        }
        Ok(InteractionSpec::CustomEven {
            grad: Arc::new(grad),
            lipschitz,
            convex,
        })
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            InteractionSpec::None => 0.0,
            InteractionSpec::Quadratic { alpha } => *alpha,
            InteractionSpec::CustomEven { lipschitz, .. } => *lipschitz,
        }
    }

    pub fn is_convex(&self) -> bool {
        match self {
            InteractionSpec::None | InteractionSpec::Quadratic { .. } => true,
            InteractionSpec::CustomEven { convex, .. } => *convex,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            InteractionSpec::Quadratic { alpha } => Some(*alpha),
            _ => None,
        }
    }

    pub fn grad(&self, z: &[f64], out: &mut [f64]) {
        match self {
            InteractionSpec::None => out.fill(0.0),
            InteractionSpec::Quadratic { alpha } => {
                for (o, a) in out.iter_mut().zip(z) {
                    *o = alpha * a;
                }
            }
            InteractionSpec::CustomEven { grad, .. } => grad(z, out),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InteractionConfig {
    None,
    Quadratic { alpha: f64 },
}

impl InteractionConfig {
    pub fn build(&self) -> Result<InteractionSpec> {
        match self {
            InteractionConfig::None => Ok(InteractionSpec::None),
            InteractionConfig::Quadratic { alpha } => InteractionSpec::quadratic(*alpha),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_well_kappa_samples() {
        let v = PotentialSpec::double_well_1d(DEFAULT_BOX).unwrap();
        let k = kappa_from_grad(&v, &[2.0, 4.0]).unwrap();
        assert!(k[0] <= 1e-12 && k[0] >= -1.0);
        assert!(k[1] >= 3.0 - 1e-12);
    }

    #[test]
    fn radial_double_well_sampling_is_tight_at_the_origin() {
        let v = PotentialSpec::radial_double_well(2, DEFAULT_BOX).unwrap();
        let r = [0.5, 1.0, 3.0];
        let k = kappa_from_grad(&v, &r).unwrap();
        for (ki, ri) in k.iter().zip(r) {
            assert!((ki - (ri * ri / 4.0 - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn lipschitz_constants() {
        assert_eq!(PotentialSpec::double_well_1d(6.0).unwrap().lipschitz(), 107.0);
        assert_eq!(PotentialSpec::radial_double_well(2, 6.0).unwrap().lipschitz(), 215.0);
    }

    #[test]
    fn polynomial_matches_double_well() {
        let p = PotentialSpec::custom_polynomial(vec![vec![0.0, 0.0, -0.5, 0.0, 0.25]], 6.0).unwrap();
        let v = PotentialSpec::double_well_1d(6.0).unwrap();
        let mut g1 = [0.0];
        let mut g2 = [0.0];
        for x in [-2.3, -0.4, 0.0, 1.7] {
            assert!((p.value(&[x]) - v.value(&[x])).abs() < 1e-12);
            p.grad(&[x], &mut g1);
            v.grad(&[x], &mut g2);
            assert!((g1[0] - g2[0]).abs() < 1e-12);
        }
        assert!((p.lipschitz() - v.lipschitz()).abs() < 1e-9);
        for r in [0.5, 2.0, 4.0] {
            assert!((p.kappa(r) - v.kappa(r)).abs() < 0.05, "{r} {} {}", p.kappa(r), v.kappa(r));
        }
        assert!(p.convexity_modulus().is_none());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(PotentialSpec::quadratic(vec![0.0], -1.0, 6.0).is_err());
        assert!(PotentialSpec::double_well_1d(0.0).is_err());
        assert!(PotentialSpec::custom_polynomial(vec![vec![0.0, 1.0, 0.0, 1.0]], 6.0).is_err());
        assert!(InteractionSpec::quadratic(-0.1).is_err());
        let v = PotentialSpec::double_well_1d(6.0).unwrap();
        assert!(kappa_from_grad(&v, &[1.0, 0.5]).is_err());
    }
}
