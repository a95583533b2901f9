//! Uplink pilot protocol through the RIS.
//!
//! A coherence block holds `T` subblocks of `τ` slots. The RIS profile is
//! fixed within a subblock and every UE repeats its pilot `x_k` in each
//! subblock. Correlating the `N × τ` subblock observation with `x_k*` and
//! stacking the `T` results gives `Y_k = √P G diag(f_k) S + N_k`, whose
//! vectorization is `y_k = S̄ c_k + n_k` with `S̄ = √P (Sᵀ ⊗ I_N)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::numeric::{kron, sample_circ_gauss, vec, CMatrix, CVector};

/// Orthogonal pilots, one column per UE, with `x_kᵀ x_g* = τ δ_kg`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook {
    pub tau: usize,
    pub pilots: CMatrix,
}

impl PilotBook {
    pub fn users(&self) -> usize {
        self.pilots.ncols()
    }

    pub fn pilot(&self, user: usize) -> CVector {
        self.pilots.column(user).into_owned()
    }
}

/// DFT pilots `x_k[u] = exp(j 2π k u / τ)`.
pub fn gen_pilots(tau: usize, users: usize) -> Result<PilotBook> {
    if users == 0 || tau < users {
        return Err(Error::InvalidArgument(format!(
            "need tau >= K >= 1 for orthogonal pilots, got tau={tau}, K={users}"
        )));
    }
    let pilots = CMatrix::from_fn(tau, users, |u, k| {
        // reduce the exponent first so the phase stays small and exact
        let idx = (k * u) % tau;
        Complex64::from_polar(1.0, 2.0 * PI * idx as f64 / tau as f64)
    });
    Ok(PilotBook { tau, pilots })
}

/// RIS phase profile `S = [s[1], …, s[T]]`, unit-modulus entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RisProfile {
    pub s: CMatrix,
}

impl RisProfile {
    pub fn subblocks(&self) -> usize {
        self.s.ncols()
    }

    pub fn elements(&self) -> usize {
        self.s.nrows()
    }
}

/// I.i.d. phases uniform on `[0, 2π)`.
pub fn gen_ris_profile<R: Rng + ?Sized>(rng: &mut R, elements: usize, subblocks: usize) -> Result<RisProfile> {
    if elements == 0 || subblocks == 0 {
        return Err(Error::InvalidArgument(format!(
            "RIS profile needs L, T >= 1, got L={elements}, T={subblocks}"
        )));
    }
    // column-major fill: all elements of subblock 0 first
    let s = CMatrix::from_fn(elements, subblocks, |_, _| {
        Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))
    });
    Ok(RisProfile { s })
}

/// `S̄ = √P (Sᵀ ⊗ I_N)`.
pub fn sensing_matrix(profile: &RisProfile, power: f64, bs_antennas: usize) -> CMatrix {
    kron(&profile.s.transpose(), &CMatrix::identity(bs_antennas, bs_antennas)).scale(power.sqrt())
}

fn check_protocol(chan: &ChannelRealization, profile: &RisProfile, pilots: &PilotBook) -> Result<()> {
    if profile.elements() != chan.geometry.ris_elements() {
        return Err(Error::DimensionMismatch(format!(
            "RIS profile has {} elements, channel has {}",
            profile.elements(),
            chan.geometry.ris_elements()
        )));
    }
    if pilots.users() != chan.users() {
        return Err(Error::DimensionMismatch(format!(
            "{} pilots for {} users",
            pilots.users(),
            chan.users()
        )));
    }
    Ok(())
}

/// Received vector in slot `u` of subblock `t` (both 0-based):
/// `√P Σ_k G diag(s[t]) f_k x_k[u] + n`, with fresh CN(0, σ²_B) noise.
#[allow(clippy::too_many_arguments)]
pub fn simulate_slot<R: Rng + ?Sized>(
    chan: &ChannelRealization,
    profile: &RisProfile,
    pilots: &PilotBook,
    power: f64,
    rng: &mut R,
    noise_power: f64,
    t: usize,
    u: usize,
) -> Result<CVector> {
    check_protocol(chan, profile, pilots)?;
    if t >= profile.subblocks() || u >= pilots.tau {
        return Err(Error::InvalidArgument(format!(
            "slot ({t}, {u}) outside {} subblocks of {} slots",
            profile.subblocks(),
            pilots.tau
        )));
    }
    let mut incident = CVector::zeros(chan.geometry.ris_elements());
    for (k, fk) in chan.f.iter().enumerate() {
        incident.axpy(pilots.pilots[(u, k)], fk, Complex64::ONE);
    }
    let reflected = incident.component_mul(&profile.s.column(t));
    let signal = (&chan.g * reflected).scale(power.sqrt());
    let noise = sample_circ_gauss(rng, chan.geometry.bs_antennas, noise_power)?;
    Ok(signal + noise)
}

/// `(1/τ) Y[t] x_k*` for an `N × τ` subblock observation.
pub fn decorrelate(subblock: &CMatrix, pilots: &PilotBook, user: usize) -> Result<CVector> {
    if user >= pilots.users() {
        return Err(Error::InvalidArgument(format!(
            "user {user} out of range for {} pilots",
            pilots.users()
        )));
    }
    if subblock.ncols() != pilots.tau {
        return Err(Error::DimensionMismatch(format!(
            "subblock has {} slots, pilots have {}",
            subblock.ncols(),
            pilots.tau
        )));
    }
    let x_conj = pilots.pilots.column(user).map(|z| z.conj());
    Ok((subblock * x_conj).unscale(pilots.tau as f64))
}

/// Stacked per-UE observations and the matrices of the linear model.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    /// `y_k = vec(Y_k)`, length `N T`.
    pub y: Vec<CVector>,
    /// `S̄`, `N T × N L`.
    pub sensing: CMatrix,
    /// `S_c,k = S̄ W_k`, `N T × M_k`.
    pub effective: Vec<CMatrix>,
    /// Per-slot noise power `σ²_B`.
    pub noise_power: f64,
    pub power: f64,
    pub tau: usize,
}

impl MeasurementSet {
    /// Noise variance per entry of `y_k`: decorrelation averages `τ` slots.
    pub fn effective_noise_variance(&self) -> f64 {
        self.noise_power / self.tau as f64
    }

    /// `S̄ W` for an arbitrary (e.g. angle-perturbed) dictionary.
    pub fn effective_for(&self, dictionary: &CMatrix) -> Result<CMatrix> {
        if dictionary.nrows() != self.sensing.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "dictionary has {} rows, sensing matrix has {} columns",
                dictionary.nrows(),
                self.sensing.ncols()
            )));
        }
        Ok(&self.sensing * dictionary)
    }
}

/// Runs the full slot-level protocol: `T τ` slots, per-subblock
/// decorrelation, stacking and vectorization.
pub fn assemble<R: Rng + ?Sized>(
    chan: &ChannelRealization,
    profile: &RisProfile,
    pilots: &PilotBook,
    power: f64,
    rng: &mut R,
    noise_power: f64,
) -> Result<MeasurementSet> {
    check_protocol(chan, profile, pilots)?;
    let n = chan.geometry.bs_antennas;
    let t_blocks = profile.subblocks();
    let users = chan.users();
    let mut stacked = vec![CMatrix::zeros(n, t_blocks); users];
    for t in 0..t_blocks {
        let mut subblock = CMatrix::zeros(n, pilots.tau);
        for u in 0..pilots.tau {
            let slot = simulate_slot(chan, profile, pilots, power, rng, noise_power, t, u)?;
            subblock.set_column(u, &slot);
        }
        for (k, yk) in stacked.iter_mut().enumerate() {
            yk.set_column(t, &decorrelate(&subblock, pilots, k)?);
        }
    }
    finish(chan, profile, pilots, power, noise_power, stacked.iter().map(vec).collect())
}

/// Builds `y_k = S̄ c_k + vec(N_k)` directly. The slot noise is drawn in the
/// same order as [`assemble`], so both paths agree under a shared noise
/// stream.
pub fn assemble_direct<R: Rng + ?Sized>(
    chan: &ChannelRealization,
    profile: &RisProfile,
    pilots: &PilotBook,
    power: f64,
    rng: &mut R,
    noise_power: f64,
) -> Result<MeasurementSet> {
    check_protocol(chan, profile, pilots)?;
    let n = chan.geometry.bs_antennas;
    let t_blocks = profile.subblocks();
    let users = chan.users();
    let mut noise = vec![CMatrix::zeros(n, t_blocks); users];
    for t in 0..t_blocks {
        let mut subblock = CMatrix::zeros(n, pilots.tau);
        for u in 0..pilots.tau {
            subblock.set_column(u, &sample_circ_gauss(rng, n, noise_power)?);
        }
        for (k, nk) in noise.iter_mut().enumerate() {
            nk.set_column(t, &decorrelate(&subblock, pilots, k)?);
        }
    }
    let sensing = sensing_matrix(profile, power, n);
    let y = chan
        .cascaded
        .iter()
        .zip(&noise)
        .map(|(c, nk)| &sensing * c + vec(nk))
        .collect();
    build_set(chan, pilots, power, noise_power, y, sensing)
}

fn finish(
    chan: &ChannelRealization,
    profile: &RisProfile,
    pilots: &PilotBook,
    power: f64,
    noise_power: f64,
    y: Vec<CVector>,
) -> Result<MeasurementSet> {
    let sensing = sensing_matrix(profile, power, chan.geometry.bs_antennas);
    build_set(chan, pilots, power, noise_power, y, sensing)
}

fn build_set(
    chan: &ChannelRealization,
    pilots: &PilotBook,
    power: f64,
    noise_power: f64,
    y: Vec<CVector>,
    sensing: CMatrix,
) -> Result<MeasurementSet> {
    let effective = chan.dictionaries.iter().map(|w| &sensing * w).collect();
    Ok(MeasurementSet {
        y,
        sensing,
        effective,
        noise_power,
        power,
        tau: pilots.tau,
    })
}
