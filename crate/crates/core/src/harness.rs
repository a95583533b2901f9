//! Scenario configuration, seeded Monte Carlo trials and CSV output.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::hash::{DefaultHasher, Hasher};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    path_loss, perturb_angles, AngleSectors, ArrayGeometry, ChannelParams, ChannelRealization, Deployment, PathLossModel,
};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_lmmse, estimate_ls, estimate_vi_laplace, estimate_vi_student, EstimatorOutput, Hyperpriors, ViOptions,
};
use crate::measurement::{assemble, assemble_direct, gen_pilots, gen_ris_profile, MeasurementSet};
use crate::numeric::{derive_seed, CMatrix, CVector, RngStream};

// RNG stream ids inside one trial
const STREAM_CHANNEL: u64 = 0;
const STREAM_RIS: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_ANGLES: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// NMSE versus number of subblocks, exact angles.
    Blocks,
    /// Dictionaries built from perturbed angles.
    Angle,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Blocks => "blocks",
            Mode::Angle => "angle",
        }
    }

    fn id(self) -> u64 {
        match self {
            Mode::Blocks => 0,
            Mode::Angle => 1,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "blocks" => Ok(Mode::Blocks),
            "angle" => Ok(Mode::Angle),
            other => Err(Error::Config(format!("unknown mode '{other}' (expected blocks or angle)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "ls")]
    Ls,
    #[serde(rename = "lmmse")]
    Lmmse,
    #[serde(rename = "vi-s")]
    ViStudent,
    #[serde(rename = "vi-laplace")]
    ViLaplace,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Ls, Estimator::Lmmse, Estimator::ViStudent, Estimator::ViLaplace];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ls => "ls",
            Estimator::Lmmse => "lmmse",
            Estimator::ViStudent => "vi-s",
            Estimator::ViLaplace => "vi-laplace",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}' (expected ls, lmmse, vi-s or vi-laplace)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub bs_antennas: usize,
    pub users: usize,
    pub ris_horizontal: usize,
    pub ris_vertical: usize,
    /// Element spacing in wavelengths, both arrays.
    pub spacing: f64,
    /// Pilot length; defaults to the number of users.
    pub pilot_length: Option<usize>,
    pub paths_rb: usize,
    pub paths_ur: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            bs_antennas: 16,
            users: 3,
            ris_horizontal: 10,
            ris_vertical: 10,
            spacing: 0.5,
            pilot_length: None,
            paths_rb: 2,
            paths_ur: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub tx_power_dbm: f64,
    pub bandwidth_hz: f64,
    pub noise_density_dbm_hz: f64,
    pub noise_figure_db: f64,
    /// Replaces the thermal noise power (watts per slot) when set.
    pub noise_power_w: Option<f64>,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 23.0,
            bandwidth_hz: 8e7,
            noise_density_dbm_hz: -174.0,
            noise_figure_db: 7.0,
            noise_power_w: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub bs: [f64; 2],
    pub ris: [f64; 2],
    pub ue_center: [f64; 2],
    pub ue_radius: f64,
    pub reference_db: f64,
    pub reference_distance: f64,
    pub exponent_rb: f64,
    pub exponent_ur: f64,
    /// Half-widths of the angle sectors, radians.
    pub azimuth_sector: f64,
    pub elevation_sector: f64,
    pub bs_aoa_sector: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let sectors = AngleSectors::default();
        Self {
            bs: [0.0, 0.0],
            ris: [350.0, 10.0],
            ue_center: [400.0, 0.0],
            ue_radius: 5.0,
            reference_db: -20.0,
            reference_distance: 1.0,
            exponent_rb: 2.2,
            exponent_ur: 2.1,
            azimuth_sector: sectors.azimuth,
            elevation_sector: sectors.elevation,
            bs_aoa_sector: sectors.bs_aoa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub a: f64,
    pub b: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub moment_floor: f64,
    pub rate_floor: f64,
    pub beta_cap: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        let hp = Hyperpriors::default();
        let o = ViOptions::default();
        Self {
            a: hp.a,
            b: hp.b,
            tol: o.tol,
            max_iters: o.max_iters,
            moment_floor: o.moment_floor,
            rate_floor: o.rate_floor,
            beta_cap: o.beta_cap,
        }
    }
}

impl InferenceConfig {
    pub fn hyperpriors(&self) -> Hyperpriors {
        Hyperpriors { a: self.a, b: self.b }
    }

    pub fn options(&self) -> ViOptions {
        ViOptions {
            tol: self.tol,
            max_iters: self.max_iters,
            moment_floor: self.moment_floor,
            rate_floor: self.rate_floor,
            beta_cap: self.beta_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub mode: Mode,
    pub t_list: Vec<usize>,
    pub delta2_list: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    /// Build `y_k = S̄ c_k + n_k` directly instead of simulating every slot.
    pub fast_path: bool,
    /// Record wall-clock time per estimate; off keeps the CSV reproducible.
    pub timing: bool,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Blocks,
            t_list: vec![2, 4, 6, 8, 10, 12],
            delta2_list: vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1],
            trials: 100,
            seed: 20_240_601,
            estimators: Estimator::ALL.to_vec(),
            fast_path: true,
            timing: false,
            threads: 0,
        }
    }
}

/// Full experiment description. Every field has a default, so an empty file
/// is a valid configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemConfig,
    pub power: PowerConfig,
    pub geometry: GeometryConfig,
    pub inference: InferenceConfig,
    pub sweep: SweepConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn pilot_length(&self) -> usize {
        self.system.pilot_length.unwrap_or(self.system.users)
    }

    /// Transmit power in watts.
    pub fn tx_power(&self) -> f64 {
        10f64.powf((self.power.tx_power_dbm - 30.0) / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        let bad = |msg: String| Err(Error::Config(msg));
        if s.bs_antennas == 0 || s.users == 0 || s.ris_horizontal == 0 || s.ris_vertical == 0 {
            return bad("array sizes and user count must be >= 1".into());
        }
        if s.paths_rb == 0 || s.paths_ur == 0 {
            return bad("path counts must be >= 1".into());
        }
        if self.pilot_length() < s.users {
            return bad(format!("pilot length {} is shorter than the {} users", self.pilot_length(), s.users));
        }
        if !(s.spacing > 0.0 && s.spacing.is_finite()) {
            return bad(format!("element spacing must be positive, got {}", s.spacing));
        }
        let p = &self.power;
        for (name, v) in [
            ("tx_power_dbm", p.tx_power_dbm),
            ("bandwidth_hz", p.bandwidth_hz),
            ("noise_density_dbm_hz", p.noise_density_dbm_hz),
            ("noise_figure_db", p.noise_figure_db),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if !(p.bandwidth_hz > 0.0) {
            return bad("bandwidth must be positive".into());
        }
        if let Some(n) = p.noise_power_w {
            if !(n >= 0.0 && n.is_finite()) {
                return bad(format!("noise_power_w must be finite and >= 0, got {n}"));
            }
        }
        let g = &self.geometry;
        if !(g.ue_radius >= 0.0 && g.reference_distance > 0.0) {
            return bad("UE radius must be >= 0 and reference distance > 0".into());
        }
        let i = &self.inference;
        if !(i.a > 0.0 && i.b > 0.0) {
            return bad(format!("hyperpriors need a, b > 0, got a={}, b={}", i.a, i.b));
        }
        i.options().validate().map_err(|e| Error::Config(e.to_string()))?;
        let w = &self.sweep;
        if w.t_list.is_empty() || w.t_list.contains(&0) {
            return bad("t_list must be non-empty with entries >= 1".into());
        }
        if w.delta2_list.is_empty() || w.delta2_list.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return bad("delta2_list must be non-empty with finite entries >= 0".into());
        }
        if w.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if w.estimators.is_empty() {
            return bad("at least one estimator is required".into());
        }
        Ok(())
    }

    /// `δ²` values swept in the configured mode; exact angles use `0` only.
    pub fn delta2_points(&self) -> Vec<f64> {
        match self.sweep.mode {
            Mode::Blocks => vec![0.0],
            Mode::Angle => self.sweep.delta2_list.clone(),
        }
    }
}

/// Thermal noise power per slot in watts: `W N₀ NF`.
pub fn noise_variance(cfg: &ScenarioConfig) -> f64 {
    let p = &cfg.power;
    let dbm = p.noise_density_dbm_hz + 10.0 * p.bandwidth_hz.log10() + p.noise_figure_db;
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Noise power actually used in trials, honouring the override.
pub fn slot_noise_power(cfg: &ScenarioConfig) -> f64 {
    cfg.power.noise_power_w.unwrap_or_else(|| noise_variance(cfg))
}

/// `(1/K) Σ ‖c_k − ĉ_k‖² / ‖c_k‖²`.
pub fn nmse(truth: &[CVector], estimates: &[CVector]) -> Result<f64> {
    if truth.len() != estimates.len() || truth.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} truths vs {} estimates",
            truth.len(),
            estimates.len()
        )));
    }
    let mut acc = 0.0;
    for (c, e) in truth.iter().zip(estimates) {
        if c.len() != e.len() {
            return Err(Error::DimensionMismatch(format!("vector lengths {} and {}", c.len(), e.len())));
        }
        let norm = c.norm_squared();
        if !(norm > 0.0) {
            return Err(Error::InvalidArgument("NMSE of a zero-norm channel".into()));
        }
        acc += (c - e).norm_squared() / norm;
    }
    Ok(acc / truth.len() as f64)
}

/// Per-realization channel statistics from the deployment.
pub fn draw_channel_params(cfg: &ScenarioConfig, rng: &mut RngStream) -> Result<ChannelParams> {
    let s = &cfg.system;
    let g = &cfg.geometry;
    let deployment = Deployment {
        bs: g.bs,
        ris: g.ris,
        ue_center: g.ue_center,
        ue_radius: g.ue_radius,
    };
    let model = |exponent| PathLossModel {
        reference_db: g.reference_db,
        reference_distance: g.reference_distance,
        exponent,
    };
    let sigma2_rb = path_loss(&model(g.exponent_rb), deployment.ris_bs_distance())?;
    let sigma2_ur = deployment
        .draw_ue_positions(rng, s.users)
        .into_iter()
        .map(|ue| path_loss(&model(g.exponent_ur), deployment.ue_ris_distance(ue)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelParams {
        geometry: ArrayGeometry::new(s.bs_antennas, s.ris_horizontal, s.ris_vertical, s.spacing)?,
        paths_rb: s.paths_rb,
        paths_ur: vec![s.paths_ur; s.users],
        sigma2_rb,
        sigma2_ur,
        sectors: AngleSectors {
            azimuth: g.azimuth_sector,
            elevation: g.elevation_sector,
            bs_aoa: g.bs_aoa_sector,
        },
    })
}

/// One estimate of one UE's channel.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub ue: usize,
    pub estimator: Estimator,
    pub sq_err: f64,
    pub truth_sq_norm: f64,
    pub iters: usize,
    pub wall_ms: f64,
    /// Learned noise precision, caller units.
    pub noise_precision: Option<f64>,
    pub floor_hits: usize,
    /// Hash of the `(y_k, S_c,k, W_k)` handed to the estimator.
    pub input_checksum: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub mode: Mode,
    pub t: usize,
    pub delta2: f64,
    pub trial: usize,
    pub seed: u64,
    /// `τ/σ²_B`, the precision of each entry of `y_k`.
    pub true_noise_precision: f64,
    pub records: Vec<EstimateRecord>,
}

impl TrialResult {
    /// NMSE of one estimator over the UEs of this trial.
    pub fn nmse(&self, estimator: Estimator) -> Option<f64> {
        let rows: Vec<_> = self.records.iter().filter(|r| r.estimator == estimator).collect();
        if rows.is_empty() {
            return None;
        }
        Some(rows.iter().map(|r| r.sq_err / r.truth_sq_norm).sum::<f64>() / rows.len() as f64)
    }
}

fn hash_matrix(h: &mut DefaultHasher, m: &CMatrix) {
    h.write_usize(m.nrows());
    h.write_usize(m.ncols());
    for z in m.iter() {
        h.write_u64(z.re.to_bits());
        h.write_u64(z.im.to_bits());
    }
}

/// Hash of an estimator's inputs.
pub fn input_checksum(y: &CVector, s: &CMatrix, w: &CMatrix) -> u64 {
    let mut h = DefaultHasher::new();
    h.write_usize(y.len());
    for z in y.iter() {
        h.write_u64(z.re.to_bits());
        h.write_u64(z.im.to_bits());
    }
    hash_matrix(&mut h, s);
    hash_matrix(&mut h, w);
    h.finish()
}

/// Everything a trial hands to the estimators, exposed for inspection.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub channel: ChannelRealization,
    pub measurements: MeasurementSet,
    /// Dictionaries given to the estimators (perturbed in angle mode).
    pub dictionaries: Vec<CMatrix>,
    /// `S̄ W_k` for those dictionaries.
    pub effective: Vec<CMatrix>,
    pub prior_var: Vec<f64>,
}

/// Draws channel, RIS profile, noise and (for `δ² > 0`) angle errors.
pub fn trial_data(cfg: &ScenarioConfig, t: usize, delta2: f64, trial_seed: u64) -> Result<TrialData> {
    let mut chan_rng = RngStream::new(trial_seed, STREAM_CHANNEL);
    let params = draw_channel_params(cfg, &mut chan_rng)?;
    let channel = ChannelRealization::draw(&mut chan_rng, &params)?;

    let profile = gen_ris_profile(&mut RngStream::new(trial_seed, STREAM_RIS), params.geometry.ris_elements(), t)?;
    let pilots = gen_pilots(cfg.pilot_length(), cfg.system.users)?;
    let noise_power = slot_noise_power(cfg);
    let mut noise_rng = RngStream::new(trial_seed, STREAM_NOISE);
    let measurements = if cfg.sweep.fast_path {
        assemble_direct(&channel, &profile, &pilots, cfg.tx_power(), &mut noise_rng, noise_power)?
    } else {
        assemble(&channel, &profile, &pilots, cfg.tx_power(), &mut noise_rng, noise_power)?
    };

    let (dictionaries, effective) = if delta2 > 0.0 {
        let mut angle_rng = RngStream::new(trial_seed, STREAM_ANGLES);
        let rb = perturb_angles(&channel.paths_rb, &mut angle_rng, delta2)?;
        let ur = channel
            .paths_ur
            .iter()
            .map(|p| perturb_angles(p, &mut angle_rng, delta2))
            .collect::<Result<Vec<_>>>()?;
        let dicts = channel.dictionaries_for(&rb, &ur)?;
        let eff = dicts.iter().map(|w| measurements.effective_for(w)).collect::<Result<Vec<_>>>()?;
        (dicts, eff)
    } else {
        (channel.dictionaries.clone(), measurements.effective.clone())
    };
    let prior_var = (0..params.users()).map(|k| params.cascaded_gain_variance(k)).collect();
    Ok(TrialData {
        channel,
        measurements,
        dictionaries,
        effective,
        prior_var,
    })
}

fn run_estimator(
    cfg: &ScenarioConfig,
    est: Estimator,
    y: &CVector,
    s: &CMatrix,
    w: &CMatrix,
    prior_var: f64,
    noise_var: f64,
) -> Result<EstimatorOutput> {
    let hp = cfg.inference.hyperpriors();
    let opts = cfg.inference.options();
    match est {
        Estimator::Ls => estimate_ls(y, s, w),
        Estimator::Lmmse => estimate_lmmse(y, s, w, &vec![prior_var; s.ncols()], noise_var),
        Estimator::ViStudent => estimate_vi_student(y, s, w, &hp, &opts),
        Estimator::ViLaplace => estimate_vi_laplace(y, s, w, &hp, &opts),
    }
}

/// One Monte Carlo trial: every configured estimator on every UE, all fed
/// the same realization.
pub fn run_trial(cfg: &ScenarioConfig, t: usize, delta2: f64, trial_seed: u64) -> Result<TrialResult> {
    let data = trial_data(cfg, t, delta2, trial_seed)?;
    let finite = |v: &CVector| v.iter().all(|z| z.re.is_finite() && z.im.is_finite());
    if !data.measurements.y.iter().all(finite) {
        return Err(Error::NonFinite {
            estimator: "measurement",
            iteration: 0,
        });
    }
    let noise_var = data.measurements.effective_noise_variance();
    let mut records = Vec::new();
    for k in 0..data.channel.users() {
        let y = &data.measurements.y[k];
        let s = &data.effective[k];
        let w = &data.dictionaries[k];
        let truth = &data.channel.cascaded[k];
        for &est in &cfg.sweep.estimators {
            let checksum = input_checksum(y, s, w);
            let start = Instant::now();
            let out = run_estimator(cfg, est, y, s, w, data.prior_var[k], noise_var)?;
            let wall_ms = if cfg.sweep.timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
            records.push(EstimateRecord {
                ue: k,
                estimator: est,
                sq_err: (truth - &out.c_hat).norm_squared(),
                truth_sq_norm: truth.norm_squared(),
                iters: out.iterations,
                wall_ms,
                noise_precision: out.noise_precision,
                floor_hits: out.floor_hits,
                input_checksum: checksum,
            });
        }
    }
    Ok(TrialResult {
        mode: cfg.sweep.mode,
        t,
        delta2,
        trial: 0,
        seed: trial_seed,
        true_noise_precision: if noise_var > 0.0 { 1.0 / noise_var } else { f64::INFINITY },
        records,
    })
}

/// `hash(master, mode, T, δ² index, trial)`.
pub fn trial_seed(master: u64, mode: Mode, t: usize, delta2_index: usize, trial: usize) -> u64 {
    derive_seed(&[master, mode.id(), t as u64, delta2_index as u64, trial as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub mode: Mode,
    #[serde(rename = "T")]
    pub t: usize,
    pub delta2: f64,
    pub estimator: Estimator,
    pub mean_nmse: f64,
    pub median_nmse: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct TrialRow {
    mode: Mode,
    #[serde(rename = "T")]
    t: usize,
    delta2: f64,
    trial: usize,
    ue: usize,
    estimator: Estimator,
    sq_err: f64,
    truth_sq_norm: f64,
    iters: usize,
    wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    /// Ordered by `(T, δ², trial)`.
    pub trials: Vec<TrialResult>,
    pub aggregates: Vec<AggregateRow>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Mean and median NMSE per `(T, δ², estimator)`, in sweep order.
pub fn aggregate(trials: &[TrialResult], estimators: &[Estimator]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(usize, usize), (Mode, usize, f64, Vec<&TrialResult>)> = BTreeMap::new();
    let mut order = Vec::new();
    for tr in trials {
        let key = (tr.t, tr.delta2.to_bits() as usize);
        let entry = groups.entry(key).or_insert_with(|| {
            order.push(key);
            (tr.mode, tr.t, tr.delta2, Vec::new())
        });
        entry.3.push(tr);
    }
    let mut rows = Vec::new();
    for key in order {
        let (mode, t, delta2, members) = &groups[&key];
        for &est in estimators {
            let mut values: Vec<f64> = members.iter().filter_map(|tr| tr.nmse(est)).collect();
            if values.is_empty() {
                continue;
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            rows.push(AggregateRow {
                mode: *mode,
                t: *t,
                delta2: *delta2,
                estimator: est,
                mean_nmse: mean,
                median_nmse: median(&mut values),
                trials: values.len(),
            });
        }
    }
    rows
}

/// Cartesian sweep over `T`, `δ²` and trials, run in parallel and merged in
/// deterministic order.
pub fn sweep(cfg: &ScenarioConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let delta2s = cfg.delta2_points();
    let mut points = Vec::new();
    for &t in &cfg.sweep.t_list {
        for (di, &d2) in delta2s.iter().enumerate() {
            for trial in 0..cfg.sweep.trials {
                points.push((t, di, d2, trial));
            }
        }
    }
    let mode = cfg.sweep.mode;
    let work = || {
        points
            .par_iter()
            .map(|&(t, di, d2, trial)| {
                let seed = trial_seed(cfg.sweep.seed, mode, t, di, trial);
                run_trial(cfg, t, d2, seed)
                    .map(|mut r| {
                        r.trial = trial;
                        r
                    })
                    .map_err(|e| Error::Trial {
                        context: format!("mode={mode} T={t} delta2={d2} trial={trial} seed={seed}"),
                        source: Box::new(e),
                    })
            })
            .collect::<Result<Vec<_>>>()
    };
    let trials = if cfg.sweep.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.sweep.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)?
    } else {
        work()?
    };
    let aggregates = aggregate(&trials, &cfg.sweep.estimators);
    Ok(SweepOutput { trials, aggregates })
}

pub fn write_trials_csv<W: std::io::Write>(out: W, trials: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for tr in trials {
        for r in &tr.records {
            w.serialize(TrialRow {
                mode: tr.mode,
                t: tr.t,
                delta2: tr.delta2,
                trial: tr.trial,
                ue: r.ue,
                estimator: r.estimator,
                sq_err: r.sq_err,
                truth_sq_norm: r.truth_sq_norm,
                iters: r.iters,
                wall_ms: r.wall_ms,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate_csv<W: std::io::Write>(out: W, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Resolved configuration followed by derived quantities, as TOML.
pub fn manifest(cfg: &ScenarioConfig) -> String {
    let sigma2 = slot_noise_power(cfg);
    format!(
        "# derived: tx_power_w = {}, slot_noise_power_w = {}, slot_noise_power_dbm = {:.4}, pilot_length = {}\n{}",
        cfg.tx_power(),
        sigma2,
        10.0 * sigma2.log10() + 30.0,
        cfg.pilot_length(),
        cfg.to_toml()
    )
}

/// Writes `trials.csv`, `aggregate.csv` and `manifest.toml` into `dir`.
pub fn write_outputs(dir: &Path, cfg: &ScenarioConfig, output: &SweepOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_trials_csv(fs::File::create(dir.join("trials.csv"))?, &output.trials)?;
    write_aggregate_csv(fs::File::create(dir.join("aggregate.csv"))?, &output.aggregates)?;
    fs::write(dir.join("manifest.toml"), manifest(cfg))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn small_cfg() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.system.bs_antennas = 4;
        cfg.system.ris_horizontal = 3;
        cfg.system.ris_vertical = 3;
        cfg.sweep.t_list = vec![4];
        cfg.sweep.trials = 2;
        cfg
    }

    #[test]
    fn noise_variance_values() {
        let mut cfg = ScenarioConfig::default();
        let dbm = |c: &ScenarioConfig| 10.0 * noise_variance(c).log10() + 30.0;
        assert!((dbm(&cfg) + 87.97).abs() < 0.01, "{}", dbm(&cfg));
        let base = dbm(&cfg);
        cfg.power.noise_figure_db = 0.0;
        assert!((dbm(&cfg) + 94.97).abs() < 0.01);
        cfg.power.noise_figure_db = 7.0;
        cfg.power.bandwidth_hz *= 10.0;
        assert!((dbm(&cfg) - base - 10.0).abs() < 1e-9);
    }

    #[test]
    fn nmse_cases() {
        let c = vec![CVector::from_vec(vec![Complex64::new(1.0, 2.0), Complex64::new(-3.0, 0.5)])];
        assert_eq!(nmse(&c, &c).unwrap(), 0.0);
        assert!((nmse(&c, &[CVector::zeros(2)]).unwrap() - 1.0).abs() < 1e-15);
        assert!((nmse(&c, &[c[0].scale(2.0)]).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&[CVector::zeros(2)], &[CVector::zeros(2)]).is_err());
    }

    #[test]
    fn empty_config_is_reference_setup() {
        let cfg = ScenarioConfig::from_toml("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.pilot_length(), 3);
        assert!((cfg.tx_power() - 0.199_526_231_496_887_97).abs() < 1e-15);
        let round = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(ScenarioConfig::from_toml("[system]\nusers = 0").is_err());
        assert!(ScenarioConfig::from_toml("[system]\npilot_length = 2").is_err());
        assert!(ScenarioConfig::from_toml("[sweep]\nt_list = []").is_err());
        assert!(ScenarioConfig::from_toml("[sweep]\nbogus = 1").is_err());
        assert!(ScenarioConfig::from_toml("[sweep]\nestimators = [\"mle\"]").is_err());
        assert!(ScenarioConfig::from_toml("[sweep]\nmode = \"angle\"\nestimators = [\"vi-s\"]").is_ok());
    }

    #[test]
    fn trial_is_deterministic_and_zero_delta_matches_blocks() {
        let cfg = small_cfg();
        let a = run_trial(&cfg, 4, 0.0, 99).unwrap();
        let b = run_trial(&cfg, 4, 0.0, 99).unwrap();
        assert_eq!(a, b);
        let mut angle = cfg.clone();
        angle.sweep.mode = Mode::Angle;
        let c = run_trial(&angle, 4, 0.0, 99).unwrap();
        assert_eq!(a.records, c.records);
    }

    #[test]
    fn estimators_share_inputs() {
        let mut cfg = small_cfg();
        cfg.sweep.mode = Mode::Angle;
        let r = run_trial(&cfg, 4, 1e-2, 5).unwrap();
        for ue in 0..3 {
            let sums: Vec<_> = r.records.iter().filter(|x| x.ue == ue).map(|x| x.input_checksum).collect();
            assert_eq!(sums.len(), 4);
            assert!(sums.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn single_point_sweep_counts() {
        let mut cfg = small_cfg();
        cfg.sweep.trials = 1;
        let out = sweep(&cfg).unwrap();
        assert_eq!(out.aggregates.len(), 4);
        assert_eq!(out.trials[0].records.len(), 12);
    }

    #[test]
    fn aggregates_bracketed_by_trials() {
        let mut cfg = small_cfg();
        cfg.sweep.trials = 5;
        let out = sweep(&cfg).unwrap();
        for row in &out.aggregates {
            let v: Vec<f64> = out.trials.iter().filter_map(|t| t.nmse(row.estimator)).collect();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(row.mean_nmse >= lo && row.mean_nmse <= hi);
            assert!(row.median_nmse >= lo && row.median_nmse <= hi);
        }
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
