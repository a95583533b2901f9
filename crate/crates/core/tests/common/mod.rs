#![allow(dead_code)]

use ris_cascade::harness::{Estimator, TrialResult};

/// `∫₀^∞ f(x) dx` through `x = scale·u/(1−u)` on double-exponential quadrature.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, scale: f64, tol: f64) -> f64 {
    quadrature::integrate(
        |u: f64| {
            if u <= 0.0 || u >= 1.0 {
                return 0.0;
            }
            let one_m = 1.0 - u;
            let x = scale * u / one_m;
            let v = f(x) * scale / (one_m * one_m);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        tol,
    )
    .integral
}

pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    quadrature::integrate(f, a, b, tol).integral
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of the mean.
pub fn std_err(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0);
    (var / v.len() as f64).sqrt()
}

/// Per-trial NMSE of `est`, in trial order, restricted to one `(T, δ²)` point.
pub fn nmse_series(trials: &[TrialResult], t: usize, delta2: f64, est: Estimator) -> Vec<f64> {
    trials
        .iter()
        .filter(|r| r.t == t && r.delta2 == delta2)
        .map(|r| r.nmse(est).expect("estimator ran"))
        .collect()
}

pub fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}
