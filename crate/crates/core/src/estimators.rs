//! Cascaded-channel estimators on the model `y = S_c α + n`, `c = W α`.
//!
//! The proposed estimator places a complex adaptive Laplace prior on `α`
//! through the hierarchy `α_i | λ_i ~ CN(0, λ_i)`, `λ_i | γ_i ~ Gamma(3/2, γ_i/4)`,
//! `γ_i ~ Gamma(a, b)`, with noise precision `β ~ Gamma(a, b)`, and runs
//! mean-field coordinate ascent over `q(α) q(λ) q(γ) q(β)`.
//!
//! Both VI estimators run on a power-normalized copy of the problem so the
//! hyperpriors and numerical floors are dimensionless; results are mapped
//! back to the caller's units.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numeric::{hermitian_solve, lstsq_min_norm, CMatrix, CVector, HermitianCholesky};

/// Gamma(a, b) shape/rate shared by the `γ` and `β` hyperpriors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperpriors {
    pub a: f64,
    pub b: f64,
}

impl Hyperpriors {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidArgument(format!("hyperpriors need a, b > 0, got a={a}, b={b}")));
        }
        Ok(Self { a, b })
    }
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Self { a: 1e-6, b: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Floor on `⟨|α_i|²⟩` before square roots and divisions.
    pub moment_floor: f64,
    /// Floor on the `β` posterior rate.
    pub rate_floor: f64,
    /// Ceiling on `⟨β⟩`, in normalized units.
    pub beta_cap: f64,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 200,
            moment_floor: 1e-30,
            rate_floor: 1e-30,
            beta_cap: 1e12,
        }
    }
}

impl ViOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidArgument(format!(
                "need tol > 0 and max_iters >= 1, got tol={}, max_iters={}",
                self.tol, self.max_iters
            )));
        }
        if !(self.moment_floor > 0.0 && self.rate_floor > 0.0 && self.beta_cap > 0.0) {
            return Err(Error::InvalidArgument("floors and beta cap must be positive".into()));
        }
        Ok(())
    }
}

/// Variational posterior moments.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    pub m_alpha: CVector,
    pub c_alpha: CMatrix,
    pub mean_lambda: Vec<f64>,
    pub mean_inv_lambda: Vec<f64>,
    pub mean_gamma: Vec<f64>,
    pub mean_beta: f64,
    pub iteration: usize,
    pub last_change: f64,
    /// Iterations in which any floor or ceiling was active.
    pub floor_hits: usize,
}

impl PosteriorState {
    /// `⟨β⟩ = 1/(0.1 mean|y|²)`, unit scale moments, `C_α = I`.
    pub fn initial(y: &CVector, dim: usize) -> Self {
        let mean_power = if y.is_empty() { 0.0 } else { y.norm_squared() / y.len() as f64 };
        let mean_beta = if mean_power > 0.0 { 1.0 / (0.1 * mean_power) } else { 1.0 };
        Self {
            m_alpha: CVector::zeros(dim),
            c_alpha: CMatrix::identity(dim, dim),
            mean_lambda: vec![1.0; dim],
            mean_inv_lambda: vec![1.0; dim],
            mean_gamma: vec![1.0; dim],
            mean_beta,
            iteration: 0,
            last_change: f64::INFINITY,
            floor_hits: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.m_alpha.len()
    }

    /// `⟨|α_i|²⟩ = |m_i|² + C_ii`.
    pub fn second_moments(&self) -> Vec<f64> {
        self.m_alpha
            .iter()
            .enumerate()
            .map(|(i, m)| m.norm_sqr() + self.c_alpha[(i, i)].re)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutput {
    pub c_hat: CVector,
    pub alpha_hat: CVector,
    pub iterations: usize,
    pub last_change: f64,
    /// Learned `⟨β⟩` in the caller's units, for estimators that learn it.
    pub noise_precision: Option<f64>,
    pub floor_hits: usize,
}

fn check_dims(y: &CVector, s: &CMatrix, w: &CMatrix) -> Result<()> {
    if s.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "sensing matrix has {} rows, observation has {}",
            s.nrows(),
            y.len()
        )));
    }
    if w.ncols() != s.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "dictionary has {} columns, sensing matrix has {}",
            w.ncols(),
            s.ncols()
        )));
    }
    Ok(())
}

fn check_state(state: &PosteriorState, s: &CMatrix) -> Result<()> {
    let m = s.ncols();
    if state.dim() != m
        || state.mean_inv_lambda.len() != m
        || state.mean_lambda.len() != m
        || state.mean_gamma.len() != m
        || state.c_alpha.nrows() != m
    {
        return Err(Error::DimensionMismatch(format!(
            "posterior state of size {} for {m} unknowns",
            state.dim()
        )));
    }
    Ok(())
}

/// `C = (β G + diag d)⁻¹`, `m = β C h` with `G = SᴴS`, `h = Sᴴy`.
fn gaussian_posterior(gram: &CMatrix, sh_y: &CVector, beta: f64, prior_precision: &[f64]) -> Result<(CVector, CMatrix)> {
    let mut a = gram.scale(beta);
    for (i, &d) in prior_precision.iter().enumerate() {
        a[(i, i)] += Complex64::from(d);
    }
    let chol = HermitianCholesky::new(&a)?;
    let rhs = CMatrix::from_column_slice(sh_y.len(), 1, sh_y.scale(beta).as_slice());
    let m = chol.solve(&rhs).column(0).into_owned();
    Ok((m, chol.inverse()))
}

/// Step 1: Gaussian `q(α)` with `C = (⟨β⟩SᴴS + ⟨Λ⁻¹⟩)⁻¹`, `m = ⟨β⟩CSᴴy`.
pub fn update_q_alpha(state: &mut PosteriorState, s: &CMatrix, y: &CVector) -> Result<()> {
    check_state(state, s)?;
    if s.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!("S has {} rows, y has {}", s.nrows(), y.len())));
    }
    let gram = s.adjoint() * s;
    let sh_y = s.adjoint() * y;
    let (m, c) = gaussian_posterior(&gram, &sh_y, state.mean_beta, &state.mean_inv_lambda)?;
    state.m_alpha = m;
    state.c_alpha = c;
    Ok(())
}

/// Means of `GIG(γ/2, 2E, ½)`: `(2√E/√γ + 2/γ, √γ/(2√E))`.
pub fn gig_half_means(gamma: f64, second_moment: f64) -> (f64, f64) {
    let root_e = second_moment.sqrt();
    let root_g = gamma.sqrt();
    (2.0 * root_e / root_g + 2.0 / gamma, root_g / (2.0 * root_e))
}

/// Step 2: GIG `q(λ_i)`. Returns whether the moment floor was used.
pub fn update_q_lambda(state: &mut PosteriorState, opts: &ViOptions) -> bool {
    let mut floored = false;
    for (i, e) in state.second_moments().into_iter().enumerate() {
        let e = if e < opts.moment_floor {
            floored = true;
            opts.moment_floor
        } else {
            e
        };
        let (mean, mean_inv) = gig_half_means(state.mean_gamma[i], e);
        state.mean_lambda[i] = mean;
        state.mean_inv_lambda[i] = mean_inv;
    }
    floored
}

/// Step 3: `⟨γ_i⟩ = (a + 3/2)/(b + ⟨λ_i⟩/4)`.
pub fn update_q_gamma(state: &mut PosteriorState, hp: &Hyperpriors) {
    let shape = hp.a + 1.5;
    for (g, &lam) in state.mean_gamma.iter_mut().zip(&state.mean_lambda) {
        *g = shape / (hp.b + 0.25 * lam);
    }
}

/// `(a + NT) / (b + ‖y − Sm‖² + tr(C SᴴS))` before floors.
fn beta_shape_rate(gram: &CMatrix, s: &CMatrix, y: &CVector, state: &PosteriorState, hp: &Hyperpriors) -> (f64, f64) {
    let residual = (y - s * &state.m_alpha).norm_squared();
    let trace: f64 = state.c_alpha.component_mul(&gram.transpose()).iter().map(|z| z.re).sum();
    (hp.a + y.len() as f64, hp.b + residual + trace)
}

fn apply_beta(state: &mut PosteriorState, shape: f64, rate: f64, opts: &ViOptions) -> bool {
    let mut clipped = false;
    let rate = if rate < opts.rate_floor {
        clipped = true;
        opts.rate_floor
    } else {
        rate
    };
    let mut beta = shape / rate;
    if beta > opts.beta_cap {
        clipped = true;
        beta = opts.beta_cap;
    }
    state.mean_beta = beta;
    clipped
}

/// Step 4: Gamma `q(β)`. Returns whether a floor or the cap was active.
pub fn update_q_beta(state: &mut PosteriorState, s: &CMatrix, y: &CVector, hp: &Hyperpriors, opts: &ViOptions) -> Result<bool> {
    check_state(state, s)?;
    let gram = s.adjoint() * s;
    let (shape, rate) = beta_shape_rate(&gram, s, y, state, hp);
    Ok(apply_beta(state, shape, rate, opts))
}

/// Power normalization: `y' = y/σ_y`, `S' = S/σ_S` so that `α' = α σ_S/σ_y`
/// and `β' = β σ_y²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub y: CVector,
    pub s: CMatrix,
    /// RMS of the entries of `y`.
    pub y_scale: f64,
    /// RMS column norm of `S`.
    pub s_scale: f64,
}

/// The VI estimators' internal rescaling of `(y, S)`.
pub fn normalize(y: &CVector, s: &CMatrix) -> Normalized {
    let y_rms = if y.is_empty() { 0.0 } else { (y.norm_squared() / y.len() as f64).sqrt() };
    let s_rms = if s.ncols() == 0 { 0.0 } else { s.norm() / (s.ncols() as f64).sqrt() };
    let y_scale = if y_rms > 0.0 { y_rms } else { 1.0 };
    let s_scale = if s_rms > 0.0 { s_rms } else { 1.0 };
    Normalized {
        y: y.unscale(y_scale),
        s: s.unscale(s_scale),
        y_scale,
        s_scale,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Prior {
    Laplace,
    Student,
}

impl Prior {
    fn name(self) -> &'static str {
        match self {
            Prior::Laplace => "vi-laplace",
            Prior::Student => "vi-s",
        }
    }
}

fn relative_change(new: &CVector, old: &CVector) -> f64 {
    let denom = old.norm().max(f64::MIN_POSITIVE);
    let diff = (new - old).norm();
    if diff == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

fn state_finite(state: &PosteriorState) -> bool {
    state.m_alpha.iter().all(|z| z.re.is_finite() && z.im.is_finite())
        && state.mean_beta.is_finite()
        && state.mean_inv_lambda.iter().all(|v| v.is_finite())
        && state.mean_gamma.iter().all(|v| v.is_finite())
}

fn run_vi(
    prior: Prior,
    y: &CVector,
    s: &CMatrix,
    w: &CMatrix,
    hp: &Hyperpriors,
    opts: &ViOptions,
    observer: &mut dyn FnMut(&PosteriorState),
) -> Result<EstimatorOutput> {
    check_dims(y, s, w)?;
    opts.validate()?;
    let norm = normalize(y, s);
    let gram = norm.s.adjoint() * &norm.s;
    let sh_y = norm.s.adjoint() * &norm.y;
    let mut state = PosteriorState::initial(&norm.y, s.ncols());
    let precision_of = |st: &PosteriorState| match prior {
        Prior::Laplace => st.mean_inv_lambda.clone(),
        Prior::Student => st.mean_gamma.clone(),
    };

    for it in 1..=opts.max_iters {
        let previous = state.m_alpha.clone();
        let (m, c) = gaussian_posterior(&gram, &sh_y, state.mean_beta, &precision_of(&state))
            .map_err(|_| Error::NonFinite { estimator: prior.name(), iteration: it })?;
        state.m_alpha = m;
        state.c_alpha = c;

        let mut clipped = false;
        match prior {
            Prior::Laplace => {
                clipped |= update_q_lambda(&mut state, opts);
                update_q_gamma(&mut state, hp);
            }
            Prior::Student => {
                let shape = hp.a + 1.0;
                for (i, e) in state.second_moments().into_iter().enumerate() {
                    let e = if e < opts.moment_floor {
                        clipped = true;
                        opts.moment_floor
                    } else {
                        e
                    };
                    state.mean_gamma[i] = shape / (hp.b + e);
                }
            }
        }
        let (shape, rate) = beta_shape_rate(&gram, &norm.s, &norm.y, &state, hp);
        clipped |= apply_beta(&mut state, shape, rate, opts);

        state.iteration = it;
        state.last_change = relative_change(&state.m_alpha, &previous);
        if clipped {
            state.floor_hits += 1;
        }
        if !state_finite(&state) {
            return Err(Error::NonFinite { estimator: prior.name(), iteration: it });
        }
        observer(&state);
        if state.last_change < opts.tol {
            break;
        }
    }

    let alpha_hat = state.m_alpha.scale(norm.y_scale / norm.s_scale);
    Ok(EstimatorOutput {
        c_hat: w * &alpha_hat,
        alpha_hat,
        iterations: state.iteration,
        last_change: state.last_change,
        noise_precision: Some(state.mean_beta / (norm.y_scale * norm.y_scale)),
        floor_hits: state.floor_hits,
    })
}

/// Proposed estimator: steps α, λ, γ, β until the relative change of `m_α`
/// drops below `opts.tol`. Returns `ĉ = W m_α`.
pub fn estimate_vi_laplace(y: &CVector, s: &CMatrix, w: &CMatrix, hp: &Hyperpriors, opts: &ViOptions) -> Result<EstimatorOutput> {
    run_vi(Prior::Laplace, y, s, w, hp, opts, &mut |_| {})
}

/// As [`estimate_vi_laplace`], calling `observer` with the normalized-unit
/// state after every iteration.
pub fn estimate_vi_laplace_observed(
    y: &CVector,
    s: &CMatrix,
    w: &CMatrix,
    hp: &Hyperpriors,
    opts: &ViOptions,
    observer: &mut dyn FnMut(&PosteriorState),
) -> Result<EstimatorOutput> {
    run_vi(Prior::Laplace, y, s, w, hp, opts, observer)
}

/// Student's-t (RVM) baseline: `⟨γ_i⟩ = (a + 1)/(b + ⟨|α_i|²⟩)`.
pub fn estimate_vi_student(y: &CVector, s: &CMatrix, w: &CMatrix, hp: &Hyperpriors, opts: &ViOptions) -> Result<EstimatorOutput> {
    run_vi(Prior::Student, y, s, w, hp, opts, &mut |_| {})
}

pub fn estimate_vi_student_observed(
    y: &CVector,
    s: &CMatrix,
    w: &CMatrix,
    hp: &Hyperpriors,
    opts: &ViOptions,
    observer: &mut dyn FnMut(&PosteriorState),
) -> Result<EstimatorOutput> {
    run_vi(Prior::Student, y, s, w, hp, opts, observer)
}

/// Minimum-norm least squares, singular values below `1e-10 σ_max` dropped.
pub fn estimate_ls(y: &CVector, s: &CMatrix, w: &CMatrix) -> Result<EstimatorOutput> {
    check_dims(y, s, w)?;
    let alpha_hat = lstsq_min_norm(s, y, 1e-10)?;
    Ok(EstimatorOutput {
        c_hat: w * &alpha_hat,
        alpha_hat,
        iterations: 1,
        last_change: 0.0,
        noise_precision: None,
        floor_hits: 0,
    })
}

/// `α̂ = D Sᴴ(S D Sᴴ + σ² I)⁻¹ y` with `D = diag(prior_var)`.
///
/// Tall problems use the equivalent `(SᴴS + σ² D⁻¹)⁻¹ Sᴴ y`, which stays
/// well posed at `σ² = 0`.
pub fn estimate_lmmse(y: &CVector, s: &CMatrix, w: &CMatrix, prior_var: &[f64], noise_var: f64) -> Result<EstimatorOutput> {
    check_dims(y, s, w)?;
    if prior_var.len() != s.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} prior variances for {} unknowns",
            prior_var.len(),
            s.ncols()
        )));
    }
    if !(noise_var >= 0.0) || prior_var.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "LMMSE needs positive prior variances and noise_var >= 0, got noise_var={noise_var}"
        )));
    }
    let y_col = CMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let alpha_hat = if s.nrows() >= s.ncols() {
        let mut a = s.adjoint() * s;
        for (i, &d) in prior_var.iter().enumerate() {
            a[(i, i)] += Complex64::from(noise_var / d);
        }
        hermitian_solve(&a, &(s.adjoint() * &y_col))?.column(0).into_owned()
    } else {
        let d = CVector::from_iterator(prior_var.len(), prior_var.iter().map(|&v| Complex64::from(v)));
        let sd = s * CMatrix::from_diagonal(&d);
        let mut a = &sd * s.adjoint();
        for i in 0..a.nrows() {
            a[(i, i)] += Complex64::from(noise_var);
        }
        let z = hermitian_solve(&a, &y_col)?;
        (sd.adjoint() * z).column(0).into_owned()
    };
    Ok(EstimatorOutput {
        c_hat: w * &alpha_hat,
        alpha_hat,
        iterations: 1,
        last_change: 0.0,
        noise_precision: None,
        floor_hits: 0,
    })
}

/// Single-component complex adaptive Laplace density `γ/(2π) e^{−√γ|α|}`.
pub fn marginal_laplace_pdf(alpha: Complex64, gamma: f64) -> f64 {
    gamma / (2.0 * PI) * (-gamma.sqrt() * alpha.norm()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{sample_circ_gauss_matrix, RngStream};
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::from(re)
    }

    fn dense_ridge(s: &CMatrix, y: &CVector, beta: f64, d: &[f64]) -> CVector {
        // independent path: real-embedded LU solve of the normal equations
        let mut a = s.adjoint() * s * c(beta);
        for (i, &v) in d.iter().enumerate() {
            a[(i, i)] += c(v);
        }
        let rhs = s.adjoint() * y * c(beta);
        a.lu().solve(&rhs).unwrap()
    }

    fn random_problem(seed: u64, rows: usize, cols: usize) -> (CMatrix, CVector) {
        let mut rng = RngStream::new(seed, 0);
        let s = sample_circ_gauss_matrix(&mut rng, rows, cols, 1.0).unwrap();
        let y = sample_circ_gauss_matrix(&mut rng, rows, 1, 1.0).unwrap().column(0).into_owned();
        (s, y)
    }

    #[test]
    fn q_alpha_scalar_ridge() {
        let s = CMatrix::identity(3, 3);
        let y = CVector::from_vec(vec![c(1.0), Complex64::new(0.0, 2.0), c(-4.0)]);
        let mut st = PosteriorState::initial(&y, 3);
        st.mean_beta = 1.0;
        update_q_alpha(&mut st, &s, &y).unwrap();
        assert!((&st.c_alpha - CMatrix::identity(3, 3).scale(0.5)).norm() < 1e-15);
        assert!((&st.m_alpha - y.scale(0.5)).norm() < 1e-15);
    }

    #[test]
    fn q_alpha_ls_limit() {
        let (s, y) = random_problem(1, 4, 4);
        let mut st = PosteriorState::initial(&y, 4);
        st.mean_beta = 1.0;
        st.mean_inv_lambda = vec![1e-12; 4];
        update_q_alpha(&mut st, &s, &y).unwrap();
        let exact = s.clone().lu().solve(&y).unwrap();
        assert!((&st.m_alpha - &exact).norm() / exact.norm() < 1e-6);
    }

    #[test]
    fn q_alpha_matches_ridge_oracle() {
        for seed in 0..20 {
            let (s, y) = random_problem(100 + seed, 12, 5);
            let mut st = PosteriorState::initial(&y, 5);
            st.mean_beta = 0.3 + seed as f64;
            st.mean_inv_lambda = (0..5).map(|i| 0.1 + i as f64 * 0.7).collect();
            update_q_alpha(&mut st, &s, &y).unwrap();
            let oracle = dense_ridge(&s, &y, st.mean_beta, &st.mean_inv_lambda);
            assert!((&st.m_alpha - &oracle).norm() / oracle.norm() < 1e-10);
            assert!((&st.c_alpha - st.c_alpha.adjoint()).norm() < 1e-12);
        }
    }

    #[test]
    fn q_lambda_closed_forms() {
        let mut st = PosteriorState::initial(&CVector::zeros(1), 1);
        st.m_alpha[0] = c(1.0);
        st.c_alpha[(0, 0)] = c(0.0);
        st.mean_gamma[0] = 4.0;
        assert!(!update_q_lambda(&mut st, &ViOptions::default()));
        assert!((st.mean_lambda[0] - 1.5).abs() < 1e-15);
        assert!((st.mean_inv_lambda[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn q_lambda_floor_on_zero_moment() {
        let mut st = PosteriorState::initial(&CVector::zeros(2), 2);
        st.c_alpha = CMatrix::zeros(2, 2);
        assert!(update_q_lambda(&mut st, &ViOptions::default()));
        assert!(st.mean_inv_lambda.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    /// GIG(p, a, b) ∝ x^{p−1} exp(−(a x + b/x)/2); mean by quadrature on
    /// x = u/(1−u).
    fn gig_mean_quadrature(a: f64, b: f64, p: f64) -> f64 {
        let scale = (b / a).sqrt();
        let density = |x: f64| x.powf(p - 1.0) * (-(a * x + b / x) / 2.0).exp();
        let integrand = |u: f64, k: i32| {
            if u <= 0.0 || u >= 1.0 {
                return 0.0;
            }
            let x = scale * u / (1.0 - u);
            let jac = scale / ((1.0 - u) * (1.0 - u));
            x.powi(k) * density(x) * jac
        };
        let z = quadrature::integrate(|u| integrand(u, 0), 0.0, 1.0, 1e-14).integral;
        let m = quadrature::integrate(|u| integrand(u, 1), 0.0, 1.0, 1e-14).integral;
        m / z
    }

    #[test]
    fn gig_mean_matches_quadrature() {
        for &(g, e) in &[(4.0, 1.0), (0.3, 2.5), (10.0, 0.01), (1.0, 1.0), (2e-3, 7.0)] {
            let (mean, _) = gig_half_means(g, e);
            let oracle = gig_mean_quadrature(g / 2.0, 2.0 * e, 0.5);
            assert!(((mean - oracle) / oracle).abs() < 1e-6, "γ={g}, E={e}: {mean} vs {oracle}");
        }
    }

    #[test]
    fn q_gamma_cases() {
        let mut st = PosteriorState::initial(&CVector::zeros(2), 2);
        st.mean_lambda = vec![4.0, 8.0];
        update_q_gamma(&mut st, &Hyperpriors { a: 0.0, b: 0.0 });
        assert!((st.mean_gamma[0] - 1.5).abs() < 1e-15);
        update_q_gamma(&mut st, &Hyperpriors::default());
        assert!((st.mean_gamma[0] - 1.500001 / 1.000001).abs() < 1e-15);
        assert!(st.mean_gamma[1] < st.mean_gamma[0]);
    }

    #[test]
    fn q_beta_degenerate_fit_hits_cap() {
        let (s, _) = random_problem(3, 6, 2);
        let m = CVector::from_vec(vec![c(1.0), c(-2.0)]);
        let y = &s * &m;
        let mut st = PosteriorState::initial(&y, 2);
        st.m_alpha = m;
        st.c_alpha = CMatrix::zeros(2, 2);
        let opts = ViOptions::default();
        assert!(update_q_beta(&mut st, &s, &y, &Hyperpriors { a: 0.0, b: 0.0 }, &opts).unwrap());
        assert_eq!(st.mean_beta, opts.beta_cap);
    }

    #[test]
    fn q_beta_pure_noise() {
        let (_, y) = random_problem(4, 9, 1);
        let s = CMatrix::zeros(9, 2);
        let mut st = PosteriorState::initial(&y, 2);
        let hp = Hyperpriors { a: 0.5, b: 0.25 };
        update_q_beta(&mut st, &s, &y, &hp, &ViOptions::default()).unwrap();
        let power: f64 = y.iter().map(|z| z.re * z.re + z.im * z.im).sum();
        assert!((st.mean_beta - 9.5 / (0.25 + power)).abs() < 1e-12);
        update_q_beta(&mut st, &s, &y, &Hyperpriors { a: 0.0, b: 0.0 }, &ViOptions::default()).unwrap();
        assert!((st.mean_beta - 9.0 / power).abs() < 1e-12);
    }

    #[test]
    fn q_beta_trace_term() {
        let (s, y) = random_problem(5, 7, 3);
        let mut st = PosteriorState::initial(&y, 3);
        let b = sample_circ_gauss_matrix(&mut RngStream::new(5, 1), 3, 3, 1.0).unwrap();
        st.c_alpha = &b * b.adjoint();
        st.m_alpha = CVector::from_vec(vec![c(0.1), c(0.2), c(-0.3)]);
        update_q_beta(&mut st, &s, &y, &Hyperpriors { a: 0.0, b: 0.0 }, &ViOptions::default()).unwrap();
        let trace = (&st.c_alpha * s.adjoint() * &s).trace().re;
        let rate = (&y - &s * &st.m_alpha).norm_squared() + trace;
        assert!((st.mean_beta - 7.0 / rate).abs() < 1e-12 * st.mean_beta);
    }

    #[test]
    fn zero_observation_stays_zero() {
        let (s, _) = random_problem(6, 10, 3);
        let w = CMatrix::identity(3, 3);
        let y = CVector::zeros(10);
        let mut seen = 0;
        let out = estimate_vi_laplace_observed(&y, &s, &w, &Hyperpriors::default(), &ViOptions::default(), &mut |st| {
            assert!(st.m_alpha.iter().all(|z| *z == Complex64::ZERO));
            seen += 1;
        })
        .unwrap();
        assert!(seen >= 1);
        assert!(out.c_hat.iter().all(|z| *z == Complex64::ZERO));
        let out = estimate_vi_student(&y, &s, &w, &Hyperpriors::default(), &ViOptions::default()).unwrap();
        assert!(out.alpha_hat.iter().all(|z| *z == Complex64::ZERO));
    }

    #[test]
    fn noiseless_recovery_both_priors() {
        let (s, _) = random_problem(7, 32, 6);
        let w = sample_circ_gauss_matrix(&mut RngStream::new(7, 5), 40, 6, 1.0).unwrap();
        let alpha = CVector::from_vec((0..6).map(|i| Complex64::new(1.0 + i as f64, -0.5 * i as f64)).collect());
        let y = &s * &alpha;
        let truth = &w * &alpha;
        for out in [
            estimate_vi_laplace(&y, &s, &w, &Hyperpriors::default(), &ViOptions::default()).unwrap(),
            estimate_vi_student(&y, &s, &w, &Hyperpriors::default(), &ViOptions::default()).unwrap(),
        ] {
            assert!((&out.c_hat - &truth).norm() / truth.norm() < 1e-3);
            assert!((&out.c_hat - &w * &out.alpha_hat).norm() <= 1e-12 * out.c_hat.norm());
        }
    }

    #[test]
    fn gig_inequality_every_iteration() {
        let (s, y) = random_problem(8, 24, 6);
        let w = CMatrix::identity(6, 6);
        estimate_vi_laplace_observed(&y, &s, &w, &Hyperpriors::default(), &ViOptions::default(), &mut |st| {
            for (l, il) in st.mean_lambda.iter().zip(&st.mean_inv_lambda) {
                assert!(l * il >= 1.0 - 1e-12);
            }
        })
        .unwrap();
    }

    #[test]
    fn vi_scale_invariance() {
        let (s, y) = random_problem(9, 24, 4);
        let w = CMatrix::identity(4, 4);
        let hp = Hyperpriors::default();
        let opts = ViOptions::default();
        let base = estimate_vi_laplace(&y, &s, &w, &hp, &opts).unwrap();
        let scaled = estimate_vi_laplace(&y.scale(1e-5), &s, &w, &hp, &opts).unwrap();
        assert!((scaled.c_hat.unscale(1e-5) - &base.c_hat).norm() / base.c_hat.norm() < 1e-6);
        let b0 = base.noise_precision.unwrap();
        let b1 = scaled.noise_precision.unwrap();
        assert!((b1 * 1e-10 / b0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn student_frozen_gamma_is_ridge() {
        let (s, y) = random_problem(10, 15, 4);
        let beta = 2.0;
        let gamma = [0.5, 1.0, 3.0, 0.01];
        let gram = s.adjoint() * &s;
        let (m, _) = gaussian_posterior(&gram, &(s.adjoint() * &y), beta, &gamma).unwrap();
        let oracle = dense_ridge(&s, &y, beta, &gamma);
        assert!((m - &oracle).norm() / oracle.norm() < 1e-10);
    }

    #[test]
    fn ls_cases() {
        let y = CVector::from_vec(vec![c(1.0), Complex64::new(2.0, -1.0)]);
        let eye = CMatrix::identity(2, 2);
        assert!((estimate_ls(&y, &eye, &eye).unwrap().alpha_hat - &y).norm() < 1e-14);

        let (s, y) = random_problem(11, 20, 5);
        let out = estimate_ls(&y, &s, &CMatrix::identity(5, 5)).unwrap();
        let normal = s.adjoint() * (&y - &s * &out.alpha_hat);
        assert!(normal.norm() < 1e-8);

        let alpha = CVector::from_fn(5, |i, _| Complex64::new(i as f64, 1.0));
        let out = estimate_ls(&(&s * &alpha), &s, &CMatrix::identity(5, 5)).unwrap();
        assert!((out.alpha_hat - alpha).norm() < 1e-10);
    }

    #[test]
    fn lmmse_cases() {
        let w1 = CMatrix::identity(1, 1);
        let s = CMatrix::from_element(1, 1, Complex64::new(0.6, -0.8));
        let y = CVector::from_element(1, Complex64::new(1.5, 0.2));
        let (d, n2) = (2.0, 0.5);
        let out = estimate_lmmse(&y, &s, &w1, &[d], n2).unwrap();
        let want = c(d) * s[(0, 0)].conj() * y[0] / (s[(0, 0)].norm_sqr() * d + n2);
        assert!((out.alpha_hat[0] - want).norm() < 1e-14);

        let (s, y) = random_problem(12, 4, 4);
        let w = CMatrix::identity(4, 4);
        let big = estimate_lmmse(&y, &s, &w, &[1.0; 4], 1e12).unwrap();
        assert!(big.alpha_hat.norm() < 1e-10);
        let small = estimate_lmmse(&y, &s, &w, &[1.0; 4], 1e-12).unwrap();
        let exact = s.clone().lu().solve(&y).unwrap();
        assert!((small.alpha_hat - &exact).norm() / exact.norm() < 1e-6);
    }

    #[test]
    fn lmmse_wide_and_tall_forms_agree() {
        let (s, y) = random_problem(13, 3, 5);
        let w = CMatrix::identity(5, 5);
        let d = [0.5, 1.0, 2.0, 0.1, 3.0];
        let wide = estimate_lmmse(&y, &s, &w, &d, 0.3).unwrap();
        // tall-form oracle on the same data
        let mut a = s.adjoint() * &s;
        for (i, &v) in d.iter().enumerate() {
            a[(i, i)] += c(0.3 / v);
        }
        let oracle = a.lu().solve(&(s.adjoint() * &y)).unwrap();
        assert!((wide.alpha_hat - oracle).norm() < 1e-10);
    }

    #[test]
    fn linear_estimators_scale_exactly() {
        let (s, y) = random_problem(14, 12, 3);
        let w = CMatrix::identity(3, 3);
        let k = 1e-4;
        let ls0 = estimate_ls(&y, &s, &w).unwrap().c_hat;
        let ls1 = estimate_ls(&y.scale(k), &s, &w).unwrap().c_hat;
        assert!((ls1 - ls0.scale(k)).norm() <= 1e-12 * ls0.norm() * k);
        let l0 = estimate_lmmse(&y, &s, &w, &[1.0; 3], 0.1).unwrap().c_hat;
        let l1 = estimate_lmmse(&y.scale(k), &s, &w, &[k * k; 3], 0.1 * k * k).unwrap().c_hat;
        assert!((l1 - l0.scale(k)).norm() <= 1e-10 * l0.norm() * k);
    }

    #[test]
    fn marginal_pdf_values_and_mass() {
        assert!((marginal_laplace_pdf(Complex64::ZERO, 3.0) - 3.0 / (2.0 * PI)).abs() < 1e-15);
        for gamma in [0.1f64, 1.0, 10.0] {
            let rate = gamma.sqrt();
            // x = r·rate; the radial integrand becomes x e^{−x}
            let mass = quadrature::integrate(
                |u: f64| {
                    if u >= 1.0 {
                        return 0.0;
                    }
                    let x = u / (1.0 - u);
                    let r = x / rate;
                    2.0 * PI * r * marginal_laplace_pdf(c(r), gamma) / rate / ((1.0 - u) * (1.0 - u))
                },
                0.0,
                1.0,
                1e-13,
            )
            .integral;
            assert!((mass - 1.0).abs() < 1e-8, "γ={gamma}: {mass}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (s, y) = random_problem(15, 5, 2);
        assert!(estimate_ls(&y, &s, &CMatrix::identity(3, 3)).is_err());
        assert!(estimate_vi_laplace(&CVector::zeros(4), &s, &CMatrix::identity(2, 2), &Hyperpriors::default(), &ViOptions::default()).is_err());
        assert!(estimate_lmmse(&y, &s, &CMatrix::identity(2, 2), &[1.0], 0.1).is_err());
        assert!(Hyperpriors::new(0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn gig_product_at_least_one(g in 1e-6f64..1e6, e in 1e-12f64..1e6) {
            let (m, mi) = gig_half_means(g, e);
            prop_assert!(m * mi >= 1.0 - 1e-12);
            prop_assert!(m > 0.0 && mi > 0.0);
        }
    }
}
