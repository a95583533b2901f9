//! Geometric mmWave channels for the RIS-BS and UE-RIS links.
//!
//! The RIS-BS channel is `G = A_B diag(α_RB) A_Rᴴ` and the UE-RIS channel is
//! `f_k = A_R,k α_UR,k`, where the path-gain vectors carry the array-size
//! scalings `√(NL/M_RB)` and `√(L/M_UR,k)`. The cascaded channel
//! `c_k = vec(G diag(f_k))` factors as `W_k (α_RB ⊗ α_UR,k)` with a dictionary
//! built from steering vectors only; [`build_dictionary`] constructs it with
//! Khatri-Rao products.
//!
//! Steering vectors use a half-wavelength (configurable) ULA at the BS with
//! phase `2π d i sin φ`, and a UPA at the RIS formed as the Kronecker product
//! of a horizontal factor (`sin az · cos el`) and a vertical factor
//! (`sin el`). All steering vectors have unit norm.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{khatri_rao, kron, kron_vec, sample_circ_gauss, vec, CMatrix, CVector};
use crate::special::{bessel_k0, bessel_k1};

/// Minimum separation (in every angle coordinate) between two paths of a link.
const MIN_PATH_SEPARATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub bs_antennas: usize,
    pub ris_horizontal: usize,
    pub ris_vertical: usize,
    /// Element spacing in wavelengths.
    pub spacing: f64,
}

impl ArrayGeometry {
    pub fn new(bs_antennas: usize, ris_horizontal: usize, ris_vertical: usize, spacing: f64) -> Result<Self> {
        let geom = Self {
            bs_antennas,
            ris_horizontal,
            ris_vertical,
            spacing,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bs_antennas == 0 || self.ris_horizontal == 0 || self.ris_vertical == 0 {
            return Err(Error::InvalidArgument("array dimensions must be >= 1".into()));
        }
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "element spacing must be positive, got {}",
                self.spacing
            )));
        }
        Ok(())
    }

    /// Number of RIS elements `L`.
    pub fn ris_elements(&self) -> usize {
        self.ris_horizontal * self.ris_vertical
    }
}

/// Half-widths of the uniform angle priors, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSectors {
    pub azimuth: f64,
    pub elevation: f64,
    pub bs_aoa: f64,
}

impl Default for AngleSectors {
    fn default() -> Self {
        Self {
            azimuth: FRAC_PI_3,
            elevation: FRAC_PI_6,
            bs_aoa: FRAC_PI_3,
        }
    }
}

/// Angles and complex gains of the paths of one link.
///
/// `gains` are the raw CN(0, σ²) path gains, without the array-size scaling.
/// `bs_aoa` is present only for the RIS-BS link.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub azimuth: Vec<f64>,
    pub elevation: Vec<f64>,
    pub bs_aoa: Option<Vec<f64>>,
    pub gains: CVector,
}

impl PathSet {
    pub fn new(azimuth: Vec<f64>, elevation: Vec<f64>, bs_aoa: Option<Vec<f64>>, gains: CVector) -> Result<Self> {
        let paths = Self {
            azimuth,
            elevation,
            bs_aoa,
            gains,
        };
        paths.validate()?;
        Ok(paths)
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.gains.len();
        if m == 0 {
            return Err(Error::InvalidArgument("a link needs at least one path".into()));
        }
        let bs_len = self.bs_aoa.as_ref().map_or(m, Vec::len);
        if self.azimuth.len() != m || self.elevation.len() != m || bs_len != m {
            return Err(Error::DimensionMismatch(format!(
                "path set with {m} gains has {} azimuths, {} elevations, {bs_len} BS angles",
                self.azimuth.len(),
                self.elevation.len()
            )));
        }
        let in_range = |a: &f64| (-FRAC_PI_2..=FRAC_PI_2).contains(a);
        let all_ok = self.azimuth.iter().all(in_range)
            && self.elevation.iter().all(in_range)
            && self.bs_aoa.iter().flatten().all(in_range);
        if !all_ok {
            return Err(Error::InvalidArgument("path angles must lie in [-π/2, π/2]".into()));
        }
        Ok(())
    }

    fn coordinates(&self, i: usize) -> [f64; 3] {
        [
            self.azimuth[i],
            self.elevation[i],
            self.bs_aoa.as_ref().map_or(0.0, |b| b[i]),
        ]
    }

    /// True when two paths coincide to within the separation guard in every
    /// angle coordinate.
    fn has_degenerate_pair(&self) -> bool {
        (0..self.len()).any(|i| {
            (0..i).any(|j| {
                let (a, b) = (self.coordinates(i), self.coordinates(j));
                a.iter().zip(&b).all(|(x, y)| (x - y).abs() < MIN_PATH_SEPARATION)
            })
        })
    }
}

/// ULA response `(1/√n) exp(j 2π d i sin φ)`, `i = 0..n`.
pub fn steer_ula(n: usize, phi: f64, spacing: f64) -> CVector {
    let norm = 1.0 / (n as f64).sqrt();
    let phase = 2.0 * PI * spacing * phi.sin();
    CVector::from_fn(n, |i, _| Complex64::from_polar(norm, phase * i as f64))
}

fn ula_with_phase(n: usize, unit_phase: f64) -> CVector {
    let norm = 1.0 / (n as f64).sqrt();
    CVector::from_fn(n, |i, _| Complex64::from_polar(norm, unit_phase * i as f64))
}

/// Horizontal and vertical factors of the UPA response.
pub fn upa_factors(lh: usize, lv: usize, az: f64, el: f64, spacing: f64) -> (CVector, CVector) {
    let k = 2.0 * PI * spacing;
    (
        ula_with_phase(lh, k * az.sin() * el.cos()),
        ula_with_phase(lv, k * el.sin()),
    )
}

/// UPA response, `horizontal ⊗ vertical`, unit norm.
pub fn steer_upa(lh: usize, lv: usize, az: f64, el: f64, spacing: f64) -> CVector {
    let (h, v) = upa_factors(lh, lv, az, el, spacing);
    kron_vec(&h, &v)
}

/// `PL = μ₀ (d/d₀)^(-η)` with `μ₀` given in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    pub reference_db: f64,
    pub reference_distance: f64,
    pub exponent: f64,
}

/// Linear power gain of the path-loss model at distance `d` meters.
pub fn path_loss(model: &PathLossModel, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidArgument(format!("link distance must be positive, got {d}")));
    }
    if !(model.reference_distance > 0.0) {
        return Err(Error::InvalidArgument("reference distance must be positive".into()));
    }
    Ok(10f64.powf(model.reference_db / 10.0) * (d / model.reference_distance).powf(-model.exponent))
}

/// BS-side steering matrix `A_B` (N × M) of the RIS-BS link.
pub fn bs_steering(geom: &ArrayGeometry, paths: &PathSet) -> Result<CMatrix> {
    let aoa = paths
        .bs_aoa
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("path set has no BS angles".into()))?;
    let cols: Vec<CVector> = aoa
        .iter()
        .map(|&phi| steer_ula(geom.bs_antennas, phi, geom.spacing))
        .collect();
    Ok(CMatrix::from_columns(&cols))
}

/// RIS-side steering matrix `A_R` (L × M).
pub fn ris_steering(geom: &ArrayGeometry, paths: &PathSet) -> CMatrix {
    let cols: Vec<CVector> = paths
        .azimuth
        .iter()
        .zip(&paths.elevation)
        .map(|(&az, &el)| steer_upa(geom.ris_horizontal, geom.ris_vertical, az, el, geom.spacing))
        .collect();
    CMatrix::from_columns(&cols)
}

/// `α_RB = √(NL/M_RB) · gains`.
pub fn scaled_gains_rb(geom: &ArrayGeometry, paths: &PathSet) -> CVector {
    let scale = ((geom.bs_antennas * geom.ris_elements()) as f64 / paths.len() as f64).sqrt();
    paths.gains.scale(scale)
}

/// `α_UR = √(L/M_UR) · gains`.
pub fn scaled_gains_ur(geom: &ArrayGeometry, paths: &PathSet) -> CVector {
    let scale = (geom.ris_elements() as f64 / paths.len() as f64).sqrt();
    paths.gains.scale(scale)
}

/// `G = A_B diag(α_RB) A_Rᴴ`.
pub fn ris_bs_channel(geom: &ArrayGeometry, paths: &PathSet) -> Result<CMatrix> {
    let a_b = bs_steering(geom, paths)?;
    let a_r = ris_steering(geom, paths);
    let alpha = scaled_gains_rb(geom, paths);
    Ok(a_b * CMatrix::from_diagonal(&alpha) * a_r.adjoint())
}

/// `f = A_R α_UR`.
pub fn ue_ris_channel(geom: &ArrayGeometry, paths: &PathSet) -> CVector {
    ris_steering(geom, paths) * scaled_gains_ur(geom, paths)
}

fn draw_paths<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    sigma2: f64,
    sectors: &AngleSectors,
    with_bs: bool,
) -> Result<PathSet> {
    if count == 0 {
        return Err(Error::InvalidArgument("a link needs at least one path".into()));
    }
    let uniform = |half: f64| {
        Uniform::new_inclusive(-half, half)
            .map_err(|e| Error::InvalidArgument(format!("angle sector {half}: {e}")))
    };
    let az_dist = uniform(sectors.azimuth)?;
    let el_dist = uniform(sectors.elevation)?;
    let bs_dist = uniform(sectors.bs_aoa)?;
    let angles = loop {
        let mut az = Vec::with_capacity(count);
        let mut el = Vec::with_capacity(count);
        let mut bs = Vec::with_capacity(count);
        for _ in 0..count {
            if with_bs {
                bs.push(bs_dist.sample(rng));
            }
            az.push(az_dist.sample(rng));
            el.push(el_dist.sample(rng));
        }
        let probe = PathSet {
            azimuth: az,
            elevation: el,
            bs_aoa: with_bs.then_some(bs),
            gains: CVector::zeros(count),
        };
        if !probe.has_degenerate_pair() {
            break probe;
        }
    };
    let gains = sample_circ_gauss(rng, count, sigma2)?;
    PathSet::new(angles.azimuth, angles.elevation, angles.bs_aoa, gains)
}

/// Draws the RIS-BS link: uniform angles in the configured sectors and
/// i.i.d. CN(0, σ²_RB) gains.
pub fn draw_ris_bs_channel<R: Rng + ?Sized>(
    rng: &mut R,
    geom: &ArrayGeometry,
    paths: usize,
    sigma2: f64,
    sectors: &AngleSectors,
) -> Result<(CMatrix, PathSet)> {
    let set = draw_paths(rng, paths, sigma2, sectors, true)?;
    Ok((ris_bs_channel(geom, &set)?, set))
}

/// Draws one UE-RIS link.
pub fn draw_ue_ris_channel<R: Rng + ?Sized>(
    rng: &mut R,
    geom: &ArrayGeometry,
    paths: usize,
    sigma2: f64,
    sectors: &AngleSectors,
) -> Result<(CVector, PathSet)> {
    let set = draw_paths(rng, paths, sigma2, sectors, false)?;
    Ok((ue_ris_channel(geom, &set), set))
}

/// Cascaded dictionary `W_k = ((A_R,RBᴴ ⋄ A_R,URᵀ)ᵀ ⋄ Ã_B)` with
/// `Ã_B = A_B (I_{M_RB} ⊗ 1ᵀ_{M_UR})`; NL × (M_RB·M_UR).
///
/// Column `m·M_UR + m'` pairs RIS-BS path `m` with UE-RIS path `m'`, matching
/// the ordering of `α_RB ⊗ α_UR`.
pub fn build_dictionary(paths_rb: &PathSet, paths_ur: &PathSet, geom: &ArrayGeometry) -> Result<CMatrix> {
    let a_b = bs_steering(geom, paths_rb)?;
    let a_r_rb = ris_steering(geom, paths_rb);
    let a_r_ur = ris_steering(geom, paths_ur);
    let ones = CMatrix::from_element(1, paths_ur.len(), Complex64::ONE);
    let expand = kron(&CMatrix::identity(paths_rb.len(), paths_rb.len()), &ones);
    let a_b_tilde = a_b * expand;
    let ris_part = khatri_rao(&a_r_rb.adjoint(), &a_r_ur.transpose())?.transpose();
    khatri_rao(&ris_part, &a_b_tilde)
}

/// `α_k = α_RB ⊗ α_UR,k` (scaled gains).
pub fn cascaded_gains(geom: &ArrayGeometry, paths_rb: &PathSet, paths_ur: &PathSet) -> CVector {
    kron_vec(&scaled_gains_rb(geom, paths_rb), &scaled_gains_ur(geom, paths_ur))
}

/// `c = vec(G diag(f))`.
pub fn cascaded_channel(g: &CMatrix, f: &CVector) -> Result<CVector> {
    if g.ncols() != f.len() {
        return Err(Error::DimensionMismatch(format!(
            "G has {} columns, f has {} entries",
            g.ncols(),
            f.len()
        )));
    }
    Ok(vec(&(g * CMatrix::from_diagonal(f))))
}

fn check_scales(sigma1: f64, sigma2: f64) -> Result<()> {
    if !(sigma1 > 0.0 && sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "product density needs positive scales, got {sigma1}, {sigma2}"
        )));
    }
    Ok(())
}

/// Density over the complex plane of `z = x₁x₂`, `x_i ~ CN(0, σ_i²)`
/// independent:
///
/// `p(z) = 2/(π σ₁² σ₂²) · K₀(2|z|/(σ₁σ₂))`.
///
/// Integrates to one against the area element. At `z = 0` the density
/// diverges logarithmically and `+∞` is returned.
pub fn product_gaussian_pdf(z: Complex64, sigma1: f64, sigma2: f64) -> Result<f64> {
    check_scales(sigma1, sigma2)?;
    let s = sigma1 * sigma2;
    let r = z.norm();
    if r == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(2.0 / (PI * s * s) * bessel_k0(2.0 * r / s))
}

/// The same law written against the polar element `dr dθ`:
/// `2|z|/(π σ₁² σ₂²) · K₀(2|z|/(σ₁σ₂))`. Equals `|z|` times
/// [`product_gaussian_pdf`]; vanishes at the origin.
pub fn product_gaussian_polar_pdf(z: Complex64, sigma1: f64, sigma2: f64) -> Result<f64> {
    check_scales(sigma1, sigma2)?;
    let s = sigma1 * sigma2;
    let r = z.norm();
    if r == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * r / (PI * s * s) * bessel_k0(2.0 * r / s))
}

/// Density of the modulus `|z|`: `4r/(σ₁σ₂)² · K₀(2r/(σ₁σ₂))`.
pub fn product_gaussian_modulus_pdf(r: f64, sigma1: f64, sigma2: f64) -> Result<f64> {
    check_scales(sigma1, sigma2)?;
    if r <= 0.0 {
        return Ok(0.0);
    }
    let s = sigma1 * sigma2;
    Ok(4.0 * r / (s * s) * bessel_k0(2.0 * r / s))
}

/// CDF of the modulus, `1 - u K₁(u)` with `u = 2r/(σ₁σ₂)`.
pub fn product_gaussian_modulus_cdf(r: f64, sigma1: f64, sigma2: f64) -> Result<f64> {
    check_scales(sigma1, sigma2)?;
    if r <= 0.0 {
        return Ok(0.0);
    }
    let u = 2.0 * r / (sigma1 * sigma2);
    Ok((1.0 - u * bessel_k1(u)).clamp(0.0, 1.0))
}

/// Reflects an angle back into `[-π/2, π/2]`; `sin` is unchanged.
fn reflect_half_plane(a: f64) -> f64 {
    let mut a = a;
    // |a| > 3π/2 would need more than one reflection
    while !(-FRAC_PI_2..=FRAC_PI_2).contains(&a) {
        if a > FRAC_PI_2 {
            a = PI - a;
        } else {
            a = -PI - a;
        }
    }
    a
}

/// Adds independent N(0, δ²) errors to every angle; gains are copied as-is.
///
/// Perturbed angles that leave `[-π/2, π/2]` are reflected back about the
/// array broadside boundary.
pub fn perturb_angles<R: Rng + ?Sized>(paths: &PathSet, rng: &mut R, delta2: f64) -> Result<PathSet> {
    if !(delta2 >= 0.0) || !delta2.is_finite() {
        return Err(Error::InvalidArgument(format!("angle error variance must be >= 0, got {delta2}")));
    }
    if delta2 == 0.0 {
        return Ok(paths.clone());
    }
    let normal = Normal::new(0.0, delta2.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut jitter = |v: &[f64]| -> Vec<f64> { v.iter().map(|a| reflect_half_plane(a + normal.sample(rng))).collect() };
    let bs_aoa = paths.bs_aoa.as_deref().map(&mut jitter);
    let azimuth = jitter(&paths.azimuth);
    let elevation = jitter(&paths.elevation);
    Ok(PathSet {
        azimuth,
        elevation,
        bs_aoa,
        gains: paths.gains.clone(),
    })
}

/// Node placement in the horizontal plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub bs: [f64; 2],
    pub ris: [f64; 2],
    pub ue_center: [f64; 2],
    pub ue_radius: f64,
}

impl Deployment {
    /// UEs at uniform angles on the circle perimeter.
    pub fn draw_ue_positions<R: Rng + ?Sized>(&self, rng: &mut R, users: usize) -> Vec<[f64; 2]> {
        (0..users)
            .map(|_| {
                let theta: f64 = rng.random_range(0.0..2.0 * PI);
                [
                    self.ue_center[0] + self.ue_radius * theta.cos(),
                    self.ue_center[1] + self.ue_radius * theta.sin(),
                ]
            })
            .collect()
    }

    pub fn ris_bs_distance(&self) -> f64 {
        distance(self.bs, self.ris)
    }

    pub fn ue_ris_distance(&self, ue: [f64; 2]) -> f64 {
        distance(ue, self.ris)
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Everything needed to draw one multi-user realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub geometry: ArrayGeometry,
    pub paths_rb: usize,
    pub paths_ur: Vec<usize>,
    pub sigma2_rb: f64,
    pub sigma2_ur: Vec<f64>,
    pub sectors: AngleSectors,
}

impl ChannelParams {
    pub fn users(&self) -> usize {
        self.paths_ur.len()
    }

    /// Prior variance of every entry of `α_k`:
    /// `(NL/M_RB)(L/M_UR,k) σ²_RB σ²_UR,k`.
    pub fn cascaded_gain_variance(&self, user: usize) -> f64 {
        let n = self.geometry.bs_antennas as f64;
        let l = self.geometry.ris_elements() as f64;
        (n * l / self.paths_rb as f64) * (l / self.paths_ur[user] as f64) * self.sigma2_rb * self.sigma2_ur[user]
    }
}

/// Ground truth for one trial.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub geometry: ArrayGeometry,
    pub g: CMatrix,
    pub f: Vec<CVector>,
    pub dictionaries: Vec<CMatrix>,
    pub alpha: Vec<CVector>,
    pub cascaded: Vec<CVector>,
    pub paths_rb: PathSet,
    pub paths_ur: Vec<PathSet>,
    pub sigma2_rb: f64,
    pub sigma2_ur: Vec<f64>,
}

impl ChannelRealization {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, params: &ChannelParams) -> Result<Self> {
        params.geometry.validate()?;
        if params.sigma2_ur.len() != params.paths_ur.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} UE path counts but {} UE gain variances",
                params.paths_ur.len(),
                params.sigma2_ur.len()
            )));
        }
        let (_, paths_rb) = draw_ris_bs_channel(rng, &params.geometry, params.paths_rb, params.sigma2_rb, &params.sectors)?;
        let mut paths_ur = Vec::with_capacity(params.users());
        for (&m, &s2) in params.paths_ur.iter().zip(&params.sigma2_ur) {
            let (_, set) = draw_ue_ris_channel(rng, &params.geometry, m, s2, &params.sectors)?;
            paths_ur.push(set);
        }
        Self::from_paths(params.geometry, paths_rb, paths_ur, params.sigma2_rb, params.sigma2_ur.clone())
    }

    pub fn from_paths(
        geometry: ArrayGeometry,
        paths_rb: PathSet,
        paths_ur: Vec<PathSet>,
        sigma2_rb: f64,
        sigma2_ur: Vec<f64>,
    ) -> Result<Self> {
        let g = ris_bs_channel(&geometry, &paths_rb)?;
        let mut f = Vec::with_capacity(paths_ur.len());
        let mut dictionaries = Vec::with_capacity(paths_ur.len());
        let mut alpha = Vec::with_capacity(paths_ur.len());
        let mut cascaded = Vec::with_capacity(paths_ur.len());
        for ur in &paths_ur {
            let fk = ue_ris_channel(&geometry, ur);
            cascaded.push(cascaded_channel(&g, &fk)?);
            f.push(fk);
            dictionaries.push(build_dictionary(&paths_rb, ur, &geometry)?);
            alpha.push(cascaded_gains(&geometry, &paths_rb, ur));
        }
        Ok(Self {
            geometry,
            g,
            f,
            dictionaries,
            alpha,
            cascaded,
            paths_rb,
            paths_ur,
            sigma2_rb,
            sigma2_ur,
        })
    }

    pub fn users(&self) -> usize {
        self.f.len()
    }

    /// Dictionaries rebuilt from (possibly perturbed) path sets.
    pub fn dictionaries_for(&self, paths_rb: &PathSet, paths_ur: &[PathSet]) -> Result<Vec<CMatrix>> {
        paths_ur
            .iter()
            .map(|ur| build_dictionary(paths_rb, ur, &self.geometry))
            .collect()
    }

    /// Largest relative mismatch between `vec(G diag f_k)` and `W_k α_k`.
    pub fn cascade_identity_error(&self) -> f64 {
        self.cascaded
            .iter()
            .zip(&self.dictionaries)
            .zip(&self.alpha)
            .map(|((c, w), a)| (c - w * a).norm() / c.norm())
            .fold(0.0, f64::max)
    }
}
