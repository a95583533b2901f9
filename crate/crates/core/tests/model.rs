mod common;

use num_complex::Complex64;
use ris_cascade::channel::{product_gaussian_modulus_cdf, ChannelRealization};
use ris_cascade::harness::{draw_channel_params, slot_noise_power, ScenarioConfig};
use ris_cascade::measurement::{assemble_direct, gen_pilots, gen_ris_profile, sensing_matrix};
use ris_cascade::numeric::{derive_seed, kron};
use ris_cascade::{CMatrix, RngStream};

#[test]
fn cascaded_gains_are_uncorrelated() {
    let cfg = ScenarioConfig::default();
    let n = 20_000;
    let mut params = draw_channel_params(&cfg, &mut RngStream::new(1, 0)).unwrap();
    // unit gain variances keep the bound scale-free
    params.sigma2_rb = 1.0;
    params.sigma2_ur = vec![1.0; 3];
    let var = params.cascaded_gain_variance(0);
    let m = 6;
    let mut cross = vec![Complex64::ZERO; m * m];
    let mut rng = RngStream::new(2, 0);
    for _ in 0..n {
        let chan = ChannelRealization::draw(&mut rng, &params).unwrap();
        let a = &chan.alpha[0];
        for i in 0..m {
            for j in 0..m {
                cross[i * m + j] += a[i] * a[j].conj();
            }
        }
    }
    for i in 0..m {
        let diag = cross[i * m + i].re / n as f64;
        assert!((diag / var - 1.0).abs() < 0.1, "E|a_{i}|^2 = {diag}, want {var}");
        for j in 0..m {
            if i != j {
                let c = cross[i * m + j].norm() / n as f64;
                assert!(c < 4.0 * var / (n as f64).sqrt(), "E[a_{i} a_{j}*] = {c}");
            }
        }
    }
}

#[test]
fn cascaded_gain_modulus_follows_product_law() {
    let cfg = ScenarioConfig::default();
    let mut params = draw_channel_params(&cfg, &mut RngStream::new(3, 0)).unwrap();
    params.sigma2_rb = 1.0;
    params.sigma2_ur = vec![1.0; 3];
    let n = 4000;
    let mut rng = RngStream::new(4, 0);
    let mut samples = Vec::with_capacity(n);
    // σ1² = NL/M_RB, σ2² = L/M_UR for the first entry of α_k
    let s1 = (16.0 * 100.0 / 2.0f64).sqrt();
    let s2 = (100.0 / 3.0f64).sqrt();
    for _ in 0..n {
        let chan = ChannelRealization::draw(&mut rng, &params).unwrap();
        samples.push(chan.alpha[0][0].norm());
    }
    samples.sort_by(f64::total_cmp);
    let ks = samples
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let f = product_gaussian_modulus_cdf(r, s1, s2).unwrap();
            (f - i as f64 / n as f64).abs().max((f - (i + 1) as f64 / n as f64).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value of the Kolmogorov-Smirnov statistic
    assert!(ks < 1.63 / (n as f64).sqrt(), "KS = {ks}");
}

#[test]
fn sensing_gram_at_reference_dimensions() {
    let profile = gen_ris_profile(&mut RngStream::new(5, 1), 100, 6).unwrap();
    let p = 0.2;
    let sbar = sensing_matrix(&profile, p, 16);
    let lhs = sbar.adjoint() * &sbar;
    let s_conj = profile.s.map(|z| z.conj());
    let rhs = kron(&(s_conj * profile.s.transpose()), &CMatrix::identity(16, 16)).scale(p);
    assert!((&lhs - &rhs).norm() / rhs.norm() < 1e-12);
}

#[test]
fn decorrelated_noise_at_reference_setup() {
    let cfg = ScenarioConfig::default();
    let sigma2 = slot_noise_power(&cfg);
    let pilots = gen_pilots(3, 3).unwrap();
    let (mut acc, mut count) = (0.0, 0usize);
    for i in 0..200u64 {
        let seed = derive_seed(&[6, i]);
        let mut rng = RngStream::new(seed, 0);
        let params = draw_channel_params(&cfg, &mut rng).unwrap();
        let chan = ChannelRealization::draw(&mut rng, &params).unwrap();
        let profile = gen_ris_profile(&mut RngStream::new(seed, 1), 100, 2).unwrap();
        let meas = assemble_direct(&chan, &profile, &pilots, cfg.tx_power(), &mut RngStream::new(seed, 2), sigma2).unwrap();
        for k in 0..3 {
            let r = &meas.y[k] - &meas.sensing * &chan.cascaded[k];
            acc += r.norm_squared();
            count += r.len();
        }
        assert!((meas.effective_noise_variance() - sigma2 / 3.0).abs() < 1e-30);
    }
    let var = acc / count as f64;
    assert!((var / (sigma2 / 3.0) - 1.0).abs() < 0.05, "{var:e} vs {:e}", sigma2 / 3.0);
}
