//! Hand-derived oracles for the metric, distances, generator and fits.

use mvcn_core::harness::fit::{fit_rate, fit_rate_resolved, scaling_slope};
use mvcn_core::metric::{build_metric, rate_c, rate_c_at, sigma0_threshold};
use mvcn_core::model::{InteractionSpec, PotentialSpec, DEFAULT_BOX};
use mvcn_core::ot::{df_paired, w2_exact, w_p_1d, EmpiricalMeasure};
use mvcn_core::stationary::{generator_apply, Functional};
use mvcn_core::Error;

fn quad1() -> PotentialSpec {
    PotentialSpec::quadratic(vec![0.0], 1.0, DEFAULT_BOX).unwrap()
}

fn dw() -> PotentialSpec {
    PotentialSpec::double_well_1d(DEFAULT_BOX).unwrap()
}

#[test]
fn unit_kappa_metric() {
    // kappa = 1, sigma0 = 1: phi = exp(-r^2/4), Phi(r) = int phi, ell from
    // the tail gives 1/2 with R1 = 2 and f(2) = 5/3.
    let m = build_metric(&quad1(), 1.0, 1e-2).unwrap();
    assert!(m.r0().abs() < 1e-6);
    assert!((m.r1() - 2.0).abs() < 1e-6);
    assert!((m.ell() - 0.5).abs() < 1e-6);
    assert!((m.eval_f(2.0).unwrap() - 5.0 / 3.0).abs() < 1e-6);
    assert!((m.phi_r0() - 1.0).abs() < 1e-12);
    let c = rate_c(&m, &InteractionSpec::None, 1.0).unwrap();
    assert!((c - 0.5).abs() < 1e-6);
}

#[test]
fn rate_c_with_interaction() {
    let m = build_metric(&quad1(), 1.0, 1e-2).unwrap();
    let w = InteractionSpec::quadratic(0.1).unwrap();
    assert!((rate_c(&m, &w, 1.0).unwrap() - 0.1).abs() < 1e-6);
}

#[test]
fn double_well_constants() {
    let m = build_metric(&dw(), 1.0, 1e-2).unwrap();
    assert!((m.r0() - 2.0).abs() < 1e-6);
    assert!((m.phi_r0() - (-0.5f64).exp()).abs() < 1e-6);

    let w = InteractionSpec::quadratic(0.05).unwrap();
    let c = rate_c_at(&dw(), &w, 3.0, 1e-2).unwrap();
    assert!((c - 0.7413).abs() < 1e-3, "c = {c}");
    let t = sigma0_threshold(&dw(), &w, 0.3, 10.0, 1e-2).unwrap();
    let s = t.threshold.unwrap();
    assert!((s - 1.2747).abs() < 1e-3, "threshold = {s}");
    assert!(rate_c_at(&dw(), &w, s * 0.99, 1e-2).unwrap() < 0.0);
    assert!(rate_c_at(&dw(), &w, s * 1.01, 1e-2).unwrap() > 0.0);
}

#[test]
fn threshold_without_interaction_is_boundary() {
    let t = sigma0_threshold(&dw(), &InteractionSpec::None, 0.3, 10.0, 1e-2).unwrap();
    assert!(t.boundary);
}

#[test]
fn sandwich_at_every_node() {
    for v in [quad1(), dw()] {
        for s0 in [0.7, 1.0, 3.0] {
            let m = build_metric(&v, s0, 1e-2).unwrap();
            for &r in m.nodes() {
                let f = m.eval_f(r).unwrap();
                assert!(m.phi_r0() * r / 2.0 <= f + 1e-12, "lower bound at r = {r}");
                assert!(f <= r + 1e-12, "upper bound at r = {r}");
            }
        }
    }
}

#[test]
fn f_is_concave_and_increasing() {
    let m = build_metric(&dw(), 1.0, 1e-2).unwrap();
    let mut prev = f64::INFINITY;
    for k in 1..400 {
        let d = m.eval_fprime(k as f64 * 0.05).unwrap();
        assert!(d > 0.0 && d <= prev + 1e-12);
        prev = d;
    }
}

#[test]
fn w2_matches_quantile_formula() {
    let a: Vec<f64> = (0..40).map(|k| ((k * 37) % 41) as f64 / 7.0).collect();
    let b: Vec<f64> = (0..40).map(|k| ((k * 13) % 43) as f64 / 5.0 - 3.0).collect();
    let (a, b) = (EmpiricalMeasure::from_1d(a).unwrap(), EmpiricalMeasure::from_1d(b).unwrap());
    let exact = w2_exact(&a, &b).unwrap();
    let quantile = w_p_1d(&a, &b, 2).unwrap();
    assert!((exact - quantile).abs() < 1e-12);
}

#[test]
fn w2_of_translation_is_the_shift() {
    let pts: Vec<f64> = (0..30).flat_map(|k| [(k as f64).sin(), (k as f64 * 0.7).cos()]).collect();
    let shifted: Vec<f64> = pts.chunks(2).flat_map(|p| [p[0] + 0.3, p[1] - 0.4]).collect();
    let a = EmpiricalMeasure::new(pts, 2).unwrap();
    let b = EmpiricalMeasure::new(shifted, 2).unwrap();
    assert!((w2_exact(&a, &b).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn df_paired_of_constant_gap() {
    let m = build_metric(&quad1(), 1.0, 1e-2).unwrap();
    let a = EmpiricalMeasure::from_1d(vec![0.0, 1.0, -2.0]).unwrap();
    let b = EmpiricalMeasure::from_1d(vec![2.0, 3.0, 0.0]).unwrap();
    assert!((df_paired(&a, &b, &m).unwrap() - 5.0 / 3.0).abs() < 1e-6);
}

#[test]
fn generator_on_quadratic_model() {
    // V = |x|^2/2, W = alpha |z|^2/2, F = <m, |x|^2>:
    // MF = -2 m2 - 2 alpha (m2 - |mean|^2) + (sigma^2 + sigma0^2) d.
    let (alpha, sigma, sigma0) = (0.7, 0.4, 0.9);
    let v = PotentialSpec::quadratic(vec![0.0, 0.0], 1.0, DEFAULT_BOX).unwrap();
    let w = InteractionSpec::quadratic(alpha).unwrap();
    let pts: Vec<f64> = (0..25).flat_map(|k| [(k as f64 * 1.3).sin() + 0.2, (k as f64).cos()]).collect();
    let m = EmpiricalMeasure::new(pts, 2).unwrap();
    let m2 = m.second_moment();
    let mean = m.mean();
    let mean_sq: f64 = mean.iter().map(|x| x * x).sum();
    let want = -2.0 * m2 - 2.0 * alpha * (m2 - mean_sq) + (sigma * sigma + sigma0 * sigma0) * 2.0;
    let got = generator_apply(&Functional::SquaredNorm, &m, &v, &w, sigma, sigma0).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");

    // Common noise leaves the within-ensemble variance alone:
    // M var = -2 (1 + alpha) var + sigma^2 d.
    let want = -2.0 * (1.0 + alpha) * m.spread() + sigma * sigma * 2.0;
    let got = generator_apply(&Functional::Variance, &m, &v, &w, sigma, sigma0).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");

    let want = -mean[1];
    let got = generator_apply(&Functional::Coordinate { index: 1 }, &m, &v, &w, sigma, sigma0).unwrap();
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn two_rate_fit_takes_the_slow_rate() {
    let t: Vec<f64> = (0..400).map(|k| k as f64 * 0.05).collect();
    let v: Vec<f64> = t.iter().map(|&s| (-s).exp() + (-10.0 * s).exp()).collect();
    let f = fit_rate(&t, &v, None).unwrap();
    assert!((f.rate - 1.0).abs() < 0.1, "rate = {}", f.rate);
}

#[test]
fn pure_plateau_is_unfittable() {
    let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
    let v = vec![0.3; 100];
    assert!(matches!(fit_rate(&t, &v, None), Err(Error::FitImpossible(_))));
}

#[test]
fn fit_recovers_rate_above_plateau() {
    let t: Vec<f64> = (0..600).map(|k| k as f64 * 0.05).collect();
    let v: Vec<f64> = t.iter().map(|&s| 2.0 * (-0.8 * s).exp() + 1e-3).collect();
    let f = fit_rate(&t, &v, None).unwrap();
    assert!((f.plateau - 1e-3).abs() < 1e-5);
    assert!((f.rate - 0.8).abs() < 0.02, "rate = {}", f.rate);
    assert!(f.plateau_reached_at.is_some());
}

#[test]
fn unresolved_tail_is_excluded() {
    let t: Vec<f64> = (0..200).map(|k| k as f64 * 0.05).collect();
    let v: Vec<f64> = t.iter().map(|&s| (-s).exp()).collect();
    // Standard errors grow past t = 5, where the mean stops being resolved.
    let se: Vec<f64> = t.iter().zip(&v).map(|(&s, &x)| if s < 5.0 { 0.01 * x } else { x }).collect();
    let f = fit_rate_resolved(&t, &v, &se, Some(0.0)).unwrap();
    assert!(f.t_end < 5.0);
    assert!((f.rate - 1.0).abs() < 1e-9);
}

#[test]
fn scaling_of_inverse_root_n() {
    let ns = [250, 1000, 4000, 16000];
    let p: Vec<f64> = ns.iter().map(|&n| 0.2 / (n as f64).sqrt()).collect();
    let r = scaling_slope(&ns, &p).unwrap();
    assert!((r.slope + 0.5).abs() < 0.01);
    assert!(scaling_slope(&ns[..2], &p[..2]).is_err());
}
