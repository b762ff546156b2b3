//! Phenomenological GEO pattern-of-life generator: a Markov script over PoL
//! classes drives longitude/drift dynamics (EW) and inclination dynamics
//! (NS), with class-specific correction signatures, a daily-period
//! oscillation, rare glitch bursts, and Gaussian observation noise. The
//! emitted script IS the ground truth.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{DatasetObject, FEATURES_ALL};
use crate::domain::{LabelSeq, OrbitSeries, PoLVocab};
use crate::error::{Error, Result};
use crate::nn::rng_for;

pub const GRID_HOURS: f64 = 2.0;
pub const STEPS_PER_DAY: f64 = 24.0 / GRID_HOURS;
const BASE_EPOCH: i64 = 1_672_531_200; // 2023-01-01T00:00:00Z
const GEO_SMA_KM: f64 = 42_164.0;
const EARTH_RADIUS_KM: f64 = 6_378.137;
/// Longitude drift rate per km of semi-major-axis offset (deg/day/km).
const DRIFT_PER_KM: f64 = 0.0128;
/// Natural inclination growth from lunisolar perturbation (deg/day).
const INCL_GROWTH_DEG_DAY: f64 = 0.00219;
/// Lunar cycle in grid steps (~13.6 days).
const LUNAR_PERIOD_STEPS: f64 = 163.2;
/// Finite-burn ramp length at segment transitions (steps).
const RAMP_STEPS: usize = 6;

/// Per-feature observation-noise scales in natural units; the config's
/// `noise_std` multiplies these.
const NOISE_SCALES: [f64; 9] = [
    0.3,    // semi_major_axis_km
    1.5e-5, // eccentricity
    0.002,  // inclination_deg
    0.05,   // raan_deg
    0.08,   // arg_perigee_deg
    0.08,   // mean_anomaly_deg
    0.0015, // latitude_deg
    0.008,  // longitude_deg
    0.3,    // altitude_km
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_objects: usize,
    pub t_len: usize,
    pub seed: u64,
    /// Multiplier on the per-feature natural noise scales; 0 disables noise.
    pub noise_std: f64,
    /// Station-keeping longitude deadband width (degrees).
    pub deadband_deg: f64,
    pub drift_rate_min_deg_day: f64,
    pub drift_rate_max_deg_day: f64,
    /// Amplitude of the daily (12-step) sinusoid superposed on longitude.
    pub daily_amp_deg: f64,
    /// Per-step probability of a short glitch burst on one feature.
    pub glitch_rate: f64,
    /// Glitch amplitude in units of the feature's noise scale.
    pub glitch_amp: f64,
    /// Mean segment duration per class name (steps).
    pub mean_seg_len: BTreeMap<String, f64>,
    pub min_seg_len: usize,
    /// Probability an object starts in station-keeping rather than drift.
    pub p_start_sk: f64,
    /// Probability a drift phase returns to station-keeping after a segment.
    pub p_recapture: f64,
    /// Fixed class scripts (name, length) applied to every object; lengths
    /// must sum to `t_len`.
    pub forced_script_ew: Option<Vec<(String, usize)>>,
    pub forced_script_ns: Option<Vec<(String, usize)>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let mut mean_seg_len = BTreeMap::new();
        for (name, len) in [
            ("ID", 84.0),
            ("AD", 84.0),
            ("EK", 192.0),
            ("CK", 192.0),
            ("HK", 192.0),
        ] {
            mean_seg_len.insert(name.to_string(), len);
        }
        SynthConfig {
            n_objects: 250,
            t_len: 720,
            seed: 0,
            noise_std: 1.0,
            deadband_deg: 0.1,
            drift_rate_min_deg_day: 0.4,
            drift_rate_max_deg_day: 2.5,
            daily_amp_deg: 0.02,
            glitch_rate: 0.02,
            glitch_amp: 6.0,
            mean_seg_len,
            min_seg_len: 12,
            p_start_sk: 0.65,
            p_recapture: 0.55,
            forced_script_ew: None,
            forced_script_ns: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_objects == 0 {
            return Err(Error::InvalidConfig("n_objects must be positive".into()));
        }
        if self.min_seg_len < 12 {
            return Err(Error::InvalidConfig(format!(
                "segment durations must be at least 12 timesteps (1 day), got min_seg_len {}",
                self.min_seg_len
            )));
        }
        if self.t_len < self.min_seg_len {
            return Err(Error::InvalidConfig(format!(
                "t_len {} shorter than the minimum segment length {}",
                self.t_len, self.min_seg_len
            )));
        }
        for (name, &len) in &self.mean_seg_len {
            if len < self.min_seg_len as f64 {
                return Err(Error::InvalidConfig(format!(
                    "mean segment length for {name} is {len}, below the minimum {}",
                    self.min_seg_len
                )));
            }
        }
        if !(0.0..1.0).contains(&self.glitch_rate) {
            return Err(Error::InvalidConfig("glitch_rate must be in [0,1)".into()));
        }
        if self.drift_rate_min_deg_day <= 0.0
            || self.drift_rate_max_deg_day < self.drift_rate_min_deg_day
        {
            return Err(Error::InvalidConfig("bad drift rate range".into()));
        }
        for script in [&self.forced_script_ew, &self.forced_script_ns].into_iter().flatten() {
            let total: usize = script.iter().map(|(_, l)| l).sum();
            if total != self.t_len {
                return Err(Error::InvalidConfig(format!(
                    "forced script lengths sum to {total}, expected t_len {}",
                    self.t_len
                )));
            }
            if script.iter().any(|(_, l)| *l < self.min_seg_len) {
                return Err(Error::InvalidConfig(
                    "forced script has a segment below the minimum duration".into(),
                ));
            }
        }
        Ok(())
    }
}

/// How a class steers the dynamics. Derived from class names so vocabularies
/// stay configurable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    InitialDrift,
    AdjustDrift,
    SmoothSk,    // continuous low-amplitude corrections (electric)
    ImpulsiveSk, // sparse impulsive burns (chemical)
    HybridSk,    // mixture
}

fn class_role(name: &str) -> Role {
    match name {
        "ID" => Role::InitialDrift,
        "AD" => Role::AdjustDrift,
        "CK" => Role::ImpulsiveSk,
        "HK" => Role::HybridSk,
        _ => Role::SmoothSk,
    }
}

/// A sampled drift-rate interval (diagnostics for tests and plots).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftInterval {
    pub start: usize,
    pub end: usize,
    pub rate_deg_day: f64,
}

/// Generator byproducts for one object.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SynthMeta {
    pub drift_intervals_ew: Vec<DriftInterval>,
}

fn sample_duration(rng: &mut ChaCha8Rng, mean: f64, min_len: usize) -> usize {
    let sigma = 0.4f64;
    let mu = mean.ln() - sigma * sigma / 2.0;
    let z: f64 = StandardNormal.sample(rng);
    let dur = (mu + sigma * z).exp().round() as usize;
    dur.clamp(min_len, (3.0 * mean) as usize)
}

fn mean_len_for(cfg: &SynthConfig, name: &str) -> f64 {
    cfg.mean_seg_len
        .get(name)
        .copied()
        .unwrap_or(150.0)
        .max(cfg.min_seg_len as f64)
}

/// Sample a class script (index, length) tiling `[0, t_len)`.
fn sample_script(
    rng: &mut ChaCha8Rng,
    vocab: &PoLVocab,
    cfg: &SynthConfig,
    forced: &Option<Vec<(String, usize)>>,
) -> Result<Vec<(usize, usize)>> {
    if let Some(forced) = forced {
        return forced
            .iter()
            .map(|(name, len)| Ok((vocab.class_index(name)?, *len)))
            .collect();
    }
    let id_idx = vocab.class_index("ID").map_err(|_| {
        Error::InvalidVocab("generator vocabulary must contain class 'ID'".into())
    })?;
    let ad_idx = vocab.class_index("AD").map_err(|_| {
        Error::InvalidVocab("generator vocabulary must contain class 'AD'".into())
    })?;
    let sk_classes: Vec<usize> = (0..vocab.num_classes())
        .filter(|&i| i != id_idx && i != ad_idx)
        .collect();
    if sk_classes.is_empty() {
        return Err(Error::InvalidVocab(
            "generator vocabulary needs at least one station-keeping class".into(),
        ));
    }
    // satellites keep one propulsion type for their whole window
    let propulsion = sk_classes[rng.random_range(0..sk_classes.len())];
    let mut in_sk = rng.random::<f64>() < cfg.p_start_sk;
    let mut first_drift = true;
    let mut filled = 0usize;
    let mut script = Vec::new();
    while filled < cfg.t_len {
        let class = if in_sk {
            propulsion
        } else if first_drift {
            id_idx
        } else {
            ad_idx
        };
        let mean = mean_len_for(cfg, vocab.class_name(class)?);
        let mut dur = sample_duration(rng, mean, cfg.min_seg_len);
        let remaining = cfg.t_len - filled;
        if remaining < dur + cfg.min_seg_len {
            dur = remaining;
        }
        script.push((class, dur));
        filled += dur;
        if in_sk {
            in_sk = false;
            first_drift = true;
        } else if rng.random::<f64>() < cfg.p_recapture {
            in_sk = true;
        } else {
            first_drift = false;
        }
    }
    Ok(script)
}

fn script_labels(script: &[(usize, usize)]) -> Vec<usize> {
    let mut labels = Vec::new();
    for &(class, len) in script {
        labels.extend(std::iter::repeat(class).take(len));
    }
    labels
}

struct EwState {
    lon: Vec<f64>,
    sma_off: Vec<f64>,
    ecc: Vec<f64>,
    drift_intervals: Vec<DriftInterval>,
}

/// Synthesize the EW-driven channels from the EW script.
fn synth_ew(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    vocab: &PoLVocab,
    script: &[(usize, usize)],
    slot_lon: f64,
    ecc0: f64,
) -> Result<EwState> {
    let t_len = cfg.t_len;
    let mut lon = vec![0.0f64; t_len];
    let mut sma_off = vec![0.0f64; t_len];
    let mut ecc = vec![ecc0; t_len];
    let mut drift_intervals = Vec::new();

    let mut cur_lon = slot_lon;
    let mut prev_rate = 0.0f64; // deg/day
    let mut ecc_dev = 0.0f64;
    let ecc_decay = (-1.0f64 / 48.0).exp();
    let mut t0 = 0usize;

    for &(class, len) in script {
        let t1 = t0 + len;
        let role = class_role(vocab.class_name(class)?);
        match role {
            Role::InitialDrift | Role::AdjustDrift => {
                let mag = rng
                    .random_range(cfg.drift_rate_min_deg_day..=cfg.drift_rate_max_deg_day);
                let mut rate = if rng.random::<f64>() < 0.5 { mag } else { -mag };
                // adjust-drift must visibly change rate or direction
                let mut guard = 0;
                while (rate - prev_rate).abs() < cfg.drift_rate_min_deg_day && guard < 16 {
                    let mag = rng
                        .random_range(cfg.drift_rate_min_deg_day..=cfg.drift_rate_max_deg_day);
                    rate = if rng.random::<f64>() < 0.5 { mag } else { -mag };
                    guard += 1;
                }
                let ramp = if t0 == 0 { 0 } else { RAMP_STEPS.min(len) };
                for t in t0..t1 {
                    let step_rate = if t - t0 < ramp {
                        let w = (t - t0 + 1) as f64 / ramp as f64;
                        prev_rate + w * (rate - prev_rate)
                    } else {
                        rate
                    };
                    cur_lon += step_rate / STEPS_PER_DAY;
                    lon[t] = cur_lon;
                    sma_off[t] = -step_rate / DRIFT_PER_KM;
                    ecc_dev *= ecc_decay;
                    ecc[t] = ecc0 + ecc_dev;
                }
                drift_intervals.push(DriftInterval {
                    start: t0 + ramp,
                    end: t1,
                    rate_deg_day: rate,
                });
                prev_rate = rate;
            }
            Role::SmoothSk | Role::ImpulsiveSk | Role::HybridSk => {
                let period = rng.random_range(180.0..360.0);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let amp = cfg.deadband_deg / 2.0;
                let ramp = if t0 == 0 { 0 } else { (2 * RAMP_STEPS).min(len) };
                let entry_lon = cur_lon;
                // station-keeping correction texture
                let (smooth_amp, smooth_period, burn_every, burn_amp) = match role {
                    Role::SmoothSk => (0.4, 24.0, usize::MAX, 0.0),
                    Role::ImpulsiveSk => (0.0, 24.0, rng.random_range(48..84), rng.random_range(2.0..4.0)),
                    Role::HybridSk => (0.2, 24.0, rng.random_range(96..144), rng.random_range(1.0..2.0)),
                    _ => unreachable!(),
                };
                let smooth_phase = rng.random_range(0.0..std::f64::consts::TAU);
                let mut level = if burn_every != usize::MAX {
                    burn_amp / 2.0
                } else {
                    0.0
                };
                let decay = if burn_every != usize::MAX {
                    burn_amp / burn_every as f64
                } else {
                    0.0
                };
                let mut since_burn = 0usize;
                for t in t0..t1 {
                    let target = slot_lon
                        + amp * ((t - t0) as f64 / period * std::f64::consts::TAU + phase).sin();
                    cur_lon = if t - t0 < ramp {
                        let w = (t - t0 + 1) as f64 / ramp as f64;
                        (1.0 - w) * entry_lon + w * target
                    } else {
                        target
                    };
                    lon[t] = cur_lon;
                    let mut off = smooth_amp
                        * ((t - t0) as f64 / smooth_period * std::f64::consts::TAU + smooth_phase)
                            .sin();
                    if burn_every != usize::MAX {
                        since_burn += 1;
                        level -= decay;
                        if since_burn >= burn_every {
                            level += burn_amp;
                            since_burn = 0;
                            // chemical burns kick the eccentricity
                            ecc_dev += rng.random_range(-1.5e-4..1.5e-4);
                        }
                        off += level;
                    }
                    sma_off[t] = off;
                    ecc_dev *= ecc_decay;
                    ecc[t] = ecc0 + ecc_dev;
                }
                prev_rate = 0.0;
            }
        }
        t0 = t1;
    }
    Ok(EwState {
        lon,
        sma_off,
        ecc,
        drift_intervals,
    })
}

/// Synthesize the inclination channel from the NS script.
fn synth_ns(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    vocab: &PoLVocab,
    script: &[(usize, usize)],
    incl_base: f64,
) -> Result<Vec<f64>> {
    let t_len = cfg.t_len;
    let mut incl = vec![0.0f64; t_len];
    let growth_step = INCL_GROWTH_DEG_DAY / STEPS_PER_DAY;
    let mut cur = incl_base;
    let mut prev_growth = 0.0f64;
    let mut t0 = 0usize;
    for &(class, len) in script {
        let t1 = t0 + len;
        let role = class_role(vocab.class_name(class)?);
        match role {
            Role::InitialDrift | Role::AdjustDrift => {
                let mut g = rng.random_range(0.8..1.6) * growth_step;
                let mut guard = 0;
                while (g - prev_growth).abs() < 0.3 * growth_step && guard < 16 {
                    g = rng.random_range(0.8..1.6) * growth_step;
                    guard += 1;
                }
                for t in t0..t1 {
                    cur += g;
                    incl[t] = cur;
                }
                prev_growth = g;
            }
            Role::ImpulsiveSk => {
                let burn_every = rng.random_range(144..192);
                let mut since = rng.random_range(0..burn_every);
                for t in t0..t1 {
                    cur += growth_step;
                    since += 1;
                    if since >= burn_every {
                        cur = incl_base;
                        since = 0;
                    }
                    incl[t] = cur;
                }
                prev_growth = 0.0;
            }
            Role::SmoothSk | Role::HybridSk => {
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                // continuous correction holds inclination at the base with a
                // small residual oscillation; re-acquire the base over a ramp
                let ramp = if t0 == 0 { 0 } else { (4 * RAMP_STEPS).min(len) };
                let entry = cur;
                for t in t0..t1 {
                    let held = incl_base
                        + 0.004 * ((t - t0) as f64 / 96.0 * std::f64::consts::TAU + phase).sin();
                    cur = if t - t0 < ramp {
                        let w = (t - t0 + 1) as f64 / ramp as f64;
                        (1.0 - w) * entry + w * held
                    } else {
                        held
                    };
                    incl[t] = cur;
                }
                prev_growth = 0.0;
            }
        }
        t0 = t1;
    }
    Ok(incl)
}

fn wrap_180(x: f64) -> f64 {
    let mut v = (x + 180.0).rem_euclid(360.0) - 180.0;
    if v == -180.0 {
        v = 180.0;
    }
    v
}

/// Generate labeled synthetic objects. Deterministic in `cfg.seed`.
pub fn synth_generate(
    cfg: &SynthConfig,
    vocab_ew: &PoLVocab,
    vocab_ns: &PoLVocab,
) -> Result<Vec<DatasetObject>> {
    Ok(synth_generate_detailed(cfg, vocab_ew, vocab_ns)?
        .into_iter()
        .map(|(obj, _)| obj)
        .collect())
}

/// Generate objects along with per-object generator diagnostics.
pub fn synth_generate_detailed(
    cfg: &SynthConfig,
    vocab_ew: &PoLVocab,
    vocab_ns: &PoLVocab,
) -> Result<Vec<(DatasetObject, SynthMeta)>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.n_objects);
    for i in 0..cfg.n_objects {
        let object_id = format!("synth-{i:04}");
        let mut rng = rng_for(cfg.seed, &[0x53594e, i as u64]); // "SYN"

        let script_ew = sample_script(&mut rng, vocab_ew, cfg, &cfg.forced_script_ew)?;
        let script_ns = sample_script(&mut rng, vocab_ns, cfg, &cfg.forced_script_ns)?;

        let slot_lon = rng.random_range(-180.0..180.0);
        let incl_base = rng.random_range(0.01..0.06);
        let ecc0 = rng.random_range(1.0e-4..4.0e-4);
        let raan0 = rng.random_range(0.0..360.0);
        let argp0 = rng.random_range(0.0..360.0);
        let ma0 = rng.random_range(0.0..360.0);
        let daily_phase = rng.random_range(0.0..std::f64::consts::TAU);
        let lat_phase = rng.random_range(0.0..std::f64::consts::TAU);
        let lunar_phase = rng.random_range(0.0..std::f64::consts::TAU);

        let ew = synth_ew(&mut rng, cfg, vocab_ew, &script_ew, slot_lon, ecc0)?;
        let incl = synth_ns(&mut rng, cfg, vocab_ns, &script_ns, incl_base)?;

        let t_len = cfg.t_len;
        let mut values = Array2::zeros((t_len, 9));
        for t in 0..t_len {
            let tau_daily = t as f64 / STEPS_PER_DAY * std::f64::consts::TAU;
            let incl_vis = incl[t]
                + 0.002 * (t as f64 / LUNAR_PERIOD_STEPS * std::f64::consts::TAU + lunar_phase).sin();
            let sma = GEO_SMA_KM + ew.sma_off[t];
            let ecc = ew.ecc[t].max(1e-6);
            values[[t, 0]] = sma;
            values[[t, 1]] = ecc;
            values[[t, 2]] = incl_vis.max(0.001);
            values[[t, 3]] = (raan0 - 0.013 * t as f64 / STEPS_PER_DAY).rem_euclid(360.0);
            values[[t, 4]] = (argp0 + 0.01 * t as f64 / STEPS_PER_DAY).rem_euclid(360.0);
            values[[t, 5]] = (ma0 + 360.0 * t as f64 / STEPS_PER_DAY).rem_euclid(360.0);
            values[[t, 6]] = incl_vis.max(0.001) * (tau_daily + lat_phase).sin();
            values[[t, 7]] =
                wrap_180(ew.lon[t] + cfg.daily_amp_deg * (tau_daily + daily_phase).sin());
            values[[t, 8]] = sma - EARTH_RADIUS_KM - sma * ecc * (tau_daily + daily_phase).cos();
        }

        // glitch bursts: short excursions on a single feature, uncorrelated
        // with the labels
        if cfg.glitch_rate > 0.0 {
            let mut t = 0usize;
            while t < t_len {
                if rng.random::<f64>() < cfg.glitch_rate {
                    let j = rng.random_range(0..9usize);
                    let dur = 1 + usize::from(rng.random::<f64>() < 0.5);
                    let amp = cfg.glitch_amp
                        * NOISE_SCALES[j]
                        * if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
                    for k in 0..dur.min(t_len - t) {
                        values[[t + k, j]] += amp;
                    }
                    t += dur;
                } else {
                    t += 1;
                }
            }
        }

        if cfg.noise_std > 0.0 {
            for t in 0..t_len {
                for j in 0..9 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    values[[t, j]] += cfg.noise_std * NOISE_SCALES[j] * z;
                }
            }
        }

        let timestamps: Vec<i64> = (0..t_len as i64)
            .map(|t| BASE_EPOCH + t * (GRID_HOURS * 3600.0) as i64)
            .collect();
        let series = OrbitSeries::new(
            object_id.clone(),
            timestamps,
            values,
            FEATURES_ALL.iter().map(|s| s.to_string()).collect(),
        )?;
        let labels_ew = LabelSeq::new(
            object_id.clone(),
            vocab_ew.direction,
            script_labels(&script_ew),
        );
        let labels_ns = LabelSeq::new(
            object_id.clone(),
            vocab_ns.direction,
            script_labels(&script_ns),
        );
        labels_ew.validate(vocab_ew)?;
        labels_ns.validate(vocab_ns)?;
        out.push((
            DatasetObject {
                series,
                labels_ew,
                labels_ns,
            },
            SynthMeta {
                drift_intervals_ew: ew.drift_intervals,
            },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::unwrap_degrees;
    use crate::domain::rle_encode;

    fn vocabs() -> (PoLVocab, PoLVocab) {
        (PoLVocab::default_ew(), PoLVocab::default_ns())
    }

    #[test]
    fn forced_script_is_echoed_exactly() {
        let (ew, ns) = vocabs();
        let cfg = SynthConfig {
            n_objects: 1,
            t_len: 600,
            noise_std: 0.0,
            glitch_rate: 0.0,
            forced_script_ew: Some(vec![("ID".into(), 200), ("EK".into(), 400)]),
            forced_script_ns: Some(vec![("EK".into(), 600)]),
            ..SynthConfig::default()
        };
        let objs = synth_generate(&cfg, &ew, &ns).unwrap();
        assert_eq!(objs.len(), 1);
        let labels = &objs[0].labels_ew.labels;
        let id = ew.class_index("ID").unwrap();
        let ek = ew.class_index("EK").unwrap();
        assert!(labels[..200].iter().all(|&l| l == id));
        assert!(labels[200..].iter().all(|&l| l == ek));
    }

    #[test]
    fn drift_longitude_integrates_sampled_rate() {
        let (ew, ns) = vocabs();
        let cfg = SynthConfig {
            n_objects: 3,
            t_len: 240,
            noise_std: 0.0,
            glitch_rate: 0.0,
            daily_amp_deg: 0.02,
            forced_script_ew: Some(vec![("ID".into(), 240)]),
            forced_script_ns: Some(vec![("EK".into(), 240)]),
            ..SynthConfig::default()
        };
        let detailed = synth_generate_detailed(&cfg, &ew, &ns).unwrap();
        for (obj, meta) in detailed {
            assert_eq!(meta.drift_intervals_ew.len(), 1);
            let iv = &meta.drift_intervals_ew[0];
            assert_eq!((iv.start, iv.end), (0, 240));
            let mut lon: Vec<f64> = obj.series.values.column(7).to_vec();
            unwrap_degrees(&mut lon);
            // difference over k whole days equals k * rate (daily sinusoid
            // cancels at integer multiples of its period)
            for k in [1usize, 5, 10] {
                let steps = k * STEPS_PER_DAY as usize;
                let diff = lon[steps] - lon[0];
                let expect = k as f64 * iv.rate_deg_day;
                assert!(
                    (diff - expect).abs() < 1e-9,
                    "k={k}: diff {diff} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let (ew, ns) = vocabs();
        let cfg = SynthConfig {
            n_objects: 4,
            t_len: 96,
            mean_seg_len: [("ID", 24.0), ("AD", 24.0), ("EK", 36.0), ("CK", 36.0), ("HK", 36.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            ..SynthConfig::default()
        };
        let a = synth_generate(&cfg, &ew, &ns).unwrap();
        let b = synth_generate(&cfg, &ew, &ns).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.series.values, y.series.values);
            assert_eq!(x.labels_ew.labels, y.labels_ew.labels);
            assert_eq!(x.labels_ns.labels, y.labels_ns.labels);
        }
        let cfg2 = SynthConfig { seed: 1, ..cfg };
        let c = synth_generate(&cfg2, &ew, &ns).unwrap();
        assert_ne!(a[0].series.values, c[0].series.values);
    }

    #[test]
    fn segments_respect_duration_invariant() {
        let (ew, ns) = vocabs();
        let cfg = SynthConfig {
            n_objects: 20,
            t_len: 720,
            ..SynthConfig::default()
        };
        for obj in synth_generate(&cfg, &ew, &ns).unwrap() {
            for labels in [&obj.labels_ew, &obj.labels_ns] {
                let segs = rle_encode(labels).unwrap();
                assert!(!segs.segments.is_empty());
                for s in &segs.segments {
                    assert!(
                        s.len() >= 12,
                        "segment of class {} has length {}",
                        s.class_index,
                        s.len()
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let (ew, ns) = vocabs();
        let cfg = SynthConfig {
            min_seg_len: 6,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&cfg, &ew, &ns).is_err());
        let mut cfg = SynthConfig::default();
        cfg.mean_seg_len.insert("EK".into(), 4.0);
        assert!(synth_generate(&cfg, &ew, &ns).is_err());
        let cfg = SynthConfig {
            forced_script_ew: Some(vec![("ID".into(), 100)]),
            t_len: 720,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&cfg, &ew, &ns).is_err());
    }

    #[test]
    fn features_are_finite_and_named() {
        let (ew, ns) = vocabs();
        let cfg = SynthConfig {
            n_objects: 2,
            t_len: 300,
            ..SynthConfig::default()
        };
        for obj in synth_generate(&cfg, &ew, &ns).unwrap() {
            assert_eq!(obj.series.feature_names, FEATURES_ALL.to_vec());
            assert_eq!(obj.series.len(), 300);
            assert!(obj.series.values.iter().all(|v| v.is_finite()));
            // longitude stays wrapped
            for &v in obj.series.values.column(7).iter() {
                assert!((-180.0..=180.0).contains(&v));
            }
        }
    }
}
