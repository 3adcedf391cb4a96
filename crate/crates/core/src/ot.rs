//! Empirical measures and transport distances between them.

use serde::Serialize;

use crate::assignment;
use crate::error::{invalid, Error, Result};
use crate::metric::DistortedMetric;

pub const W2_EXACT_CAP: usize = 4096;
pub const DF_EXACT_CAP: usize = 512;
pub const OUTER_CAP: usize = 256;

/// Uniform measure on `n` points of `R^dim`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<f64>,
    dim: usize,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if points.is_empty() || points.len() % dim != 0 {
            return Err(invalid("point buffer must hold a positive multiple of dim values"));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(invalid("points must be finite"));
        }
        Ok(Self { points, dim })
    }

    pub fn from_1d(points: Vec<f64>) -> Result<Self> {
        Self::new(points, 1)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [f64] {
        &mut self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.points.chunks(self.dim) {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Mean squared distance to the barycenter.
    pub fn spread(&self) -> f64 {
        let m = self.mean();
        self.points
            .chunks(self.dim)
            .map(|p| dist2(p, &m))
            .sum::<f64>()
            / self.len() as f64
    }

    pub fn second_moment(&self) -> f64 {
        self.points.iter().map(|x| x * x).sum::<f64>() / self.len() as f64
    }

    /// Rows reordered so that row `i` is old row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut points = Vec::with_capacity(self.points.len());
        for &j in perm {
            points.extend_from_slice(self.point(j));
        }
        Self {
            points,
            dim: self.dim,
        }
    }
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn same_shape(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<()> {
    if a.dim != b.dim {
        return Err(invalid("measures live in different dimensions"));
    }
    if a.len() != b.len() {
        return Err(invalid("measures have different numbers of atoms"));
    }
    Ok(())
}

fn sorted(a: &EmpiricalMeasure) -> Vec<f64> {
    let mut s = a.points.clone();
    s.sort_by(f64::total_cmp);
    s
}

/// Exact `W_p` in one dimension by the monotone rearrangement, `p` in {1, 2}.
pub fn w_p_1d(a: &EmpiricalMeasure, b: &EmpiricalMeasure, p: u32) -> Result<f64> {
    same_shape(a, b)?;
    if a.dim != 1 {
        return Err(invalid("w_p_1d needs one-dimensional measures"));
    }
    let (x, y) = (sorted(a), sorted(b));
    let n = x.len() as f64;
    match p {
        1 => Ok(x.iter().zip(&y).map(|(u, v)| (u - v).abs()).sum::<f64>() / n),
        2 => Ok((x.iter().zip(&y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / n).sqrt()),
        _ => Err(invalid("p must be 1 or 2")),
    }
}

fn cost_matrix(a: &EmpiricalMeasure, b: &EmpiricalMeasure, c: impl Fn(&[f64], &[f64]) -> f64) -> Vec<f64> {
    let n = a.len();
    let mut m = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            m.push(c(a.point(i), b.point(j)));
        }
    }
    m
}

/// Exact `W_2` by minimum-cost assignment on squared Euclidean cost.
pub fn w2_exact(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.len();
    if n > W2_EXACT_CAP {
        return Err(Error::UseSlicedEstimate { n, cap: W2_EXACT_CAP });
    }
    let c = cost_matrix(a, b, dist2);
    let perm = assignment::solve(&c, n);
    Ok((assignment::total_cost(&c, n, &perm) / n as f64).max(0.0).sqrt())
}

/// Index-wise `(1/N) sum f(|a_i - b_i|)`; an upper bound for the `f`-transport cost.
pub fn df_paired(a: &EmpiricalMeasure, b: &EmpiricalMeasure, m: &DistortedMetric) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.len();
    Ok((0..n)
        .map(|i| m.f_nonneg(dist2(a.point(i), b.point(i)).sqrt()))
        .sum::<f64>()
        / n as f64)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DfEstimate {
    pub value: f64,
    /// Whether the assignment solver certified the value.
    pub exact: bool,
}

/// `f`-transport cost in one dimension: sorted pairing, refined by exact assignment
/// when `N <= 512`.
pub fn df_1d_estimate(a: &EmpiricalMeasure, b: &EmpiricalMeasure, m: &DistortedMetric) -> Result<DfEstimate> {
    same_shape(a, b)?;
    if a.dim != 1 {
        return Err(invalid("df_1d_estimate needs one-dimensional measures"));
    }
    let (x, y) = (sorted(a), sorted(b));
    let n = x.len();
    let sorted_cost = x.iter().zip(&y).map(|(u, v)| m.f_nonneg((u - v).abs())).sum::<f64>() / n as f64;
    if n > DF_EXACT_CAP {
        return Ok(DfEstimate {
            value: sorted_cost,
            exact: false,
        });
    }
    let c = cost_matrix(a, b, |p, q| m.f_nonneg((p[0] - q[0]).abs()));
    let perm = assignment::solve(&c, n);
    let exact = assignment::total_cost(&c, n, &perm) / n as f64;
    Ok(DfEstimate {
        value: exact.min(sorted_cost),
        exact: true,
    })
}

#[derive(Clone, Copy, Debug)]
pub enum InnerDistance<'a> {
    W1,
    W2,
    Df(&'a DistortedMetric),
}

impl InnerDistance<'_> {
    pub fn eval(&self, a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
        match self {
            InnerDistance::W1 => {
                if a.dim == 1 {
                    w_p_1d(a, b, 1)
                } else {
                    same_shape(a, b)?;
                    let n = a.len();
                    if n > W2_EXACT_CAP {
                        return Err(Error::UseSlicedEstimate { n, cap: W2_EXACT_CAP });
                    }
                    let c = cost_matrix(a, b, |p, q| dist2(p, q).sqrt());
                    let perm = assignment::solve(&c, n);
                    Ok(assignment::total_cost(&c, n, &perm) / n as f64)
                }
            }
            InnerDistance::W2 => {
                if a.dim == 1 {
                    w_p_1d(a, b, 2)
                } else {
                    w2_exact(a, b)
                }
            }
            InnerDistance::Df(m) => {
                if a.dim == 1 {
                    df_1d_estimate(a, b, m).map(|e| e.value)
                } else {
                    df_paired(a, b, m)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct OuterDistance {
    /// Optimal assignment between realizations.
    pub assignment: f64,
    /// Realizations paired by index.
    pub index_aligned: f64,
}

/// Transport distance between laws of random measures, each given by `M` realizations.
pub fn outer_distance(
    ra: &[EmpiricalMeasure],
    rb: &[EmpiricalMeasure],
    inner: InnerDistance<'_>,
) -> Result<OuterDistance> {
    let m = ra.len();
    if m == 0 || m != rb.len() {
        return Err(invalid("outer distance needs equal non-zero realization counts"));
    }
    if m > OUTER_CAP {
        return Err(Error::UseSlicedEstimate { n: m, cap: OUTER_CAP });
    }
    let mut c = Vec::with_capacity(m * m);
    for a in ra {
        for b in rb {
            c.push(inner.eval(a, b)?);
        }
    }
    let perm = assignment::solve(&c, m);
    let aligned = (0..m).map(|i| c[i * m + i]).sum::<f64>() / m as f64;
    Ok(OuterDistance {
        assignment: assignment::total_cost(&c, m, &perm) / m as f64,
        index_aligned: aligned,
    })
}
