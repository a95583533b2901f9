//! Modified Bessel functions of the second kind, orders 0 and 1.
//!
//! Power series for `x <= 2`; Steed's continued fraction (Temme's CF2) above.

use std::f64::consts::PI;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;

/// Returns `(K0(x), K1(x))` for `x > 0`.
///
/// Non-positive `x` gives `(+inf, +inf)`; NaN propagates.
pub fn bessel_k01(x: f64) -> (f64, f64) {
    if x.is_nan() {
        return (f64::NAN, f64::NAN);
    }
    if x <= 0.0 {
        return (f64::INFINITY, f64::INFINITY);
    }
    if x <= 2.0 {
        series(x)
    } else {
        let (k0s, k1s) = continued_fraction_scaled(x);
        let e = (-x).exp();
        (k0s * e, k1s * e)
    }
}

pub fn bessel_k0(x: f64) -> f64 {
    bessel_k01(x).0
}

pub fn bessel_k1(x: f64) -> f64 {
    bessel_k01(x).1
}

/// `K0(x) * exp(x)`, finite for large arguments.
pub fn bessel_k0e(x: f64) -> f64 {
    if x > 2.0 {
        continued_fraction_scaled(x).0
    } else {
        bessel_k0(x) * x.exp()
    }
}

fn series(x: f64) -> (f64, f64) {
    let q = 0.25 * x * x;
    let log_half = (0.5 * x).ln();

    // K0 = -(ln(x/2) + γ) I0 + Σ_{k>=1} H_k q^k / (k!)²
    // K1 = 1/x + ln(x/2) I1 - (x/4) Σ_{k>=0} (ψ(k+1) + ψ(k+2)) q^k / (k!(k+1)!)
    let mut term0 = 1.0; // q^k / (k!)²
    let mut term1 = 1.0; // q^k / (k!(k+1)!)
    let mut i0 = 1.0;
    let mut i1_over = 1.0; // I1 / (x/2)
    let mut harmonic = 0.0;
    let mut k0_sum = 0.0;
    let mut k1_sum = -2.0 * EULER_GAMMA + 1.0; // ψ(1) + ψ(2)
    for k in 1..MAX_ITER {
        let kf = k as f64;
        term0 *= q / (kf * kf);
        term1 *= q / (kf * (kf + 1.0));
        harmonic += 1.0 / kf;
        let psi_sum = -2.0 * EULER_GAMMA + 2.0 * harmonic + 1.0 / (kf + 1.0);
        i0 += term0;
        i1_over += term1;
        k0_sum += harmonic * term0;
        k1_sum += psi_sum * term1;
        if term0 * harmonic.max(1.0) < EPS * k0_sum.abs().max(i0) && term1 < EPS * i1_over {
            break;
        }
    }
    let i1 = 0.5 * x * i1_over;
    let k0 = -(log_half + EULER_GAMMA) * i0 + k0_sum;
    let k1 = 1.0 / x + log_half * i1 - 0.25 * x * k1_sum;
    (k0, k1)
}

/// `(K0(x) e^x, K1(x) e^x)` via Steed's algorithm for order zero.
fn continued_fraction_scaled(x: f64) -> (f64, f64) {
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..MAX_ITER {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < EPS {
            break;
        }
    }
    let h = a1 * h;
    let k0 = (PI / (2.0 * x)).sqrt() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    (k0, k1)
}
