//! Dataset plumbing: feature selection, train-statistics normalization,
//! object-level splits, and sampling-rate degradation via forward fill.

pub mod io;
pub mod synth;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{LabelSeq, OrbitSeries};
use crate::error::{Error, Result};
use crate::nn::rng_for;

/// Canonical 9-feature set: six Keplerian elements plus geodetic position.
pub const FEATURES_ALL: [&str; 9] = [
    "semi_major_axis_km",
    "eccentricity",
    "inclination_deg",
    "raan_deg",
    "arg_perigee_deg",
    "mean_anomaly_deg",
    "latitude_deg",
    "longitude_deg",
    "altitude_km",
];

/// The six Keplerian elements alone (the geodetic-ablation feature set).
pub const FEATURES_KEPLERIAN: [&str; 6] = [
    "semi_major_axis_km",
    "eccentricity",
    "inclination_deg",
    "raan_deg",
    "arg_perigee_deg",
    "mean_anomaly_deg",
];

/// Features measured on a circle (period 360 degrees); unwrapped before
/// standardization so the +-180 seam does not dominate the variance.
pub const CIRCULAR_FEATURES: [&str; 4] = [
    "raan_deg",
    "arg_perigee_deg",
    "mean_anomaly_deg",
    "longitude_deg",
];

pub fn feature_names(include_geodetic: bool) -> Vec<String> {
    if include_geodetic {
        FEATURES_ALL.iter().map(|s| s.to_string()).collect()
    } else {
        FEATURES_KEPLERIAN.iter().map(|s| s.to_string()).collect()
    }
}

/// One labeled object: positional series plus dense labels per direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetObject {
    pub series: OrbitSeries,
    pub labels_ew: LabelSeq,
    pub labels_ns: LabelSeq,
}

/// Object-level train/test partition.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<DatasetObject>,
    pub test: Vec<DatasetObject>,
    pub split_seed: u64,
}

/// Deterministic object-level split; `ratio` is the train fraction.
pub fn split(objects: Vec<DatasetObject>, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split ratio must be in (0,1), got {ratio}"
        )));
    }
    let n = objects.len();
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 objects to split, got {n}"
        )));
    }
    let n_train = ((n as f64 * ratio).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, &[0x53504c49]); // "SPLI"
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let train_set: std::collections::HashSet<usize> = idx[..n_train].iter().copied().collect();
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (i, obj) in objects.into_iter().enumerate() {
        if train_set.contains(&i) {
            train.push(obj);
        } else {
            test.push(obj);
        }
    }
    Ok(DatasetSplit {
        train,
        test,
        split_seed: seed,
    })
}

/// Per-feature standardization statistics fitted on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub circular: Vec<bool>,
}

/// Sequentially unwrap a circular signal (period 360) so that consecutive
/// differences never exceed half a period in magnitude.
pub fn unwrap_degrees(col: &mut [f64]) {
    for t in 1..col.len() {
        let mut d = col[t] - col[t - 1];
        while d > 180.0 {
            d -= 360.0;
        }
        while d < -180.0 {
            d += 360.0;
        }
        col[t] = col[t - 1] + d;
    }
}

impl NormStats {
    /// Fit on training series. Zero-variance features keep `std = 1` and are
    /// only centered; a warning is emitted for each.
    pub fn fit(train: &[OrbitSeries]) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::EmptyInput("normalize needs a nonempty train set".into()))?;
        let names = first.feature_names.clone();
        let d = names.len();
        let circular: Vec<bool> = names
            .iter()
            .map(|n| CIRCULAR_FEATURES.contains(&n.as_str()))
            .collect();
        let mut sum = vec![0.0f64; d];
        let mut sumsq = vec![0.0f64; d];
        let mut count = 0usize;
        for s in train {
            if s.feature_names != names {
                return Err(Error::ShapeMismatch(format!(
                    "series {} has different feature names",
                    s.object_id
                )));
            }
            let unwrapped = unwrap_features(&s.values, &circular);
            for row in unwrapped.rows() {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v;
                    sumsq[j] += v * v;
                }
            }
            count += s.len();
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std: Vec<f64> = sumsq
            .iter()
            .zip(&mean)
            .enumerate()
            .map(|(j, (sq, m))| {
                let var = (sq / n - m * m).max(0.0);
                let sd = var.sqrt();
                if sd < 1e-10 {
                    log::warn!(
                        "feature '{}' has zero variance on the train split; centering only",
                        names[j]
                    );
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(NormStats {
            feature_names: names,
            mean,
            std,
            circular,
        })
    }

    /// Apply to a series, selecting the fitted features by name first.
    pub fn apply(&self, s: &OrbitSeries) -> Result<OrbitSeries> {
        let selected = s.select_features(&self.feature_names)?;
        let mut values = unwrap_features(&selected.values, &self.circular);
        for mut row in values.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        OrbitSeries::new(
            selected.object_id,
            selected.timestamps,
            values,
            self.feature_names.clone(),
        )
    }
}

fn unwrap_features(values: &Array2<f64>, circular: &[bool]) -> Array2<f64> {
    let mut out = values.clone();
    for (j, &circ) in circular.iter().enumerate() {
        if circ {
            let mut col: Vec<f64> = out.column(j).to_vec();
            unwrap_degrees(&mut col);
            for (t, v) in col.into_iter().enumerate() {
                out[[t, j]] = v;
            }
        }
    }
    out
}

/// Standardize `apply_to` with statistics computed on `train` only.
pub fn normalize(
    train: &[OrbitSeries],
    apply_to: &[OrbitSeries],
) -> Result<(Vec<OrbitSeries>, NormStats)> {
    let stats = NormStats::fit(train)?;
    let out = apply_to
        .iter()
        .map(|s| stats.apply(s))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, stats))
}

/// Shape of the observation-interval distribution used when degrading the
/// sampling rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum IntervalDistribution {
    /// Lognormal with the configured mean and log-space sigma; heavy right
    /// tail reaching multi-day gaps.
    Lognormal { sigma_log: f64 },
    /// Empirical table of (interval hours, weight) rows loaded from a file.
    EmpiricalFile { intervals_hours: Vec<f64>, weights: Vec<f64> },
}

/// How observation instants are drawn when emulating a low-rate ephemerides
/// source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingProfile {
    pub mean_interval_hours: f64,
    pub max_interval_hours: f64,
    pub distribution: IntervalDistribution,
    pub seed: u64,
}

impl SamplingProfile {
    pub fn lognormal(mean_interval_hours: f64, seed: u64) -> Self {
        SamplingProfile {
            mean_interval_hours,
            max_interval_hours: 21.0 * 24.0,
            distribution: IntervalDistribution::Lognormal { sigma_log: 1.0 },
            seed,
        }
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Draw sparse observation instants per the profile and re-impute onto the
/// original grid by repeating the most recent observation (forward padding).
/// Output has identical length and timestamps.
pub fn downsample_forward_fill(
    series: &OrbitSeries,
    profile: &SamplingProfile,
) -> Result<OrbitSeries> {
    let t_len = series.len();
    if t_len < 2 {
        return Ok(series.clone());
    }
    let spacing_s = series.timestamps[1] - series.timestamps[0];
    for w in series.timestamps.windows(2) {
        if w[1] - w[0] != spacing_s {
            return Err(Error::InvalidConfig(format!(
                "series {} is not on a uniform grid",
                series.object_id
            )));
        }
    }
    let spacing_h = spacing_s as f64 / 3600.0;
    if profile.mean_interval_hours < spacing_h {
        return Err(Error::InvalidConfig(format!(
            "profile mean interval {}h is below the grid spacing {}h",
            profile.mean_interval_hours, spacing_h
        )));
    }
    // degenerate profile: every grid point observed, output equals input
    if (profile.mean_interval_hours - spacing_h).abs() < 1e-12 {
        return Ok(series.clone());
    }

    let mut rng = rng_for(profile.seed, &[0x44534d50, fnv1a(&series.object_id)]);
    let lognorm = match &profile.distribution {
        IntervalDistribution::Lognormal { sigma_log } => {
            let mu = profile.mean_interval_hours.ln() - sigma_log * sigma_log / 2.0;
            Some(LogNormal::new(mu, *sigma_log).map_err(|e| {
                Error::InvalidConfig(format!("bad lognormal parameters: {e}"))
            })?)
        }
        IntervalDistribution::EmpiricalFile { intervals_hours, weights } => {
            if intervals_hours.is_empty() || intervals_hours.len() != weights.len() {
                return Err(Error::InvalidConfig(
                    "empirical interval table is empty or ragged".into(),
                ));
            }
            None
        }
    };
    let total_weight: f64 = match &profile.distribution {
        IntervalDistribution::EmpiricalFile { weights, .. } => weights.iter().sum(),
        _ => 0.0,
    };

    let mut observed = vec![false; t_len];
    observed[0] = true;
    let mut cursor_h = 0.0f64;
    loop {
        let raw = match (&profile.distribution, &lognorm) {
            (IntervalDistribution::Lognormal { .. }, Some(d)) => d.sample(&mut rng),
            (IntervalDistribution::EmpiricalFile { intervals_hours, weights }, _) => {
                let mut target = rng.random::<f64>() * total_weight;
                let mut chosen = intervals_hours[intervals_hours.len() - 1];
                for (h, w) in intervals_hours.iter().zip(weights) {
                    if target < *w {
                        chosen = *h;
                        break;
                    }
                    target -= *w;
                }
                chosen
            }
            _ => unreachable!(),
        };
        let interval = raw.min(profile.max_interval_hours).max(0.0);
        cursor_h += interval;
        let idx = (cursor_h / spacing_h).round() as usize;
        if idx >= t_len {
            break;
        }
        observed[idx] = true;
    }

    let mut values = series.values.clone();
    let mut last = 0usize;
    for t in 0..t_len {
        if observed[t] {
            last = t;
        } else {
            let src = series.values.row(last).to_owned();
            values.row_mut(t).assign(&src);
        }
    }
    OrbitSeries::new(
        series.object_id.clone(),
        series.timestamps.clone(),
        values,
        series.feature_names.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Direction;
    use ndarray::Array2;

    fn series_with(values: Array2<f64>, names: Vec<&str>) -> OrbitSeries {
        let t = values.nrows();
        OrbitSeries::new(
            "obj".into(),
            (0..t as i64).map(|i| i * 7200).collect(),
            values,
            names.into_iter().map(String::from).collect(),
        )
        .unwrap()
    }

    fn dummy_object(id: &str, t: usize) -> DatasetObject {
        let values = Array2::from_shape_fn((t, 2), |(r, c)| (r + c) as f64);
        let series = OrbitSeries::new(
            id.into(),
            (0..t as i64).map(|i| i * 7200).collect(),
            values,
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        DatasetObject {
            labels_ew: LabelSeq::new(id.into(), Direction::EW, vec![0; t]),
            labels_ns: LabelSeq::new(id.into(), Direction::NS, vec![0; t]),
            series,
        }
    }

    #[test]
    fn split_counts_and_determinism() {
        let objects: Vec<_> = (0..10).map(|i| dummy_object(&format!("o{i}"), 4)).collect();
        let s1 = split(objects.clone(), 0.8, 7).unwrap();
        assert_eq!(s1.train.len(), 8);
        assert_eq!(s1.test.len(), 2);
        let s2 = split(objects.clone(), 0.8, 7).unwrap();
        let ids = |v: &[DatasetObject]| {
            v.iter().map(|o| o.series.object_id.clone()).collect::<Vec<_>>()
        };
        assert_eq!(ids(&s1.train), ids(&s2.train));
        assert_eq!(ids(&s1.test), ids(&s2.test));
        // disjoint
        for t in ids(&s1.test) {
            assert!(!ids(&s1.train).contains(&t));
        }
        assert!(split(objects[..1].to_vec(), 0.8, 7).is_err());
    }

    #[test]
    fn split_paper_scale_counts() {
        let objects: Vec<_> = (0..1900).map(|i| dummy_object(&format!("o{i}"), 2)).collect();
        let s = split(objects, 0.8, 0).unwrap();
        assert_eq!(s.train.len(), 1520);
        assert_eq!(s.test.len(), 380);
    }

    #[test]
    fn normalize_train_is_standardized() {
        let mut rng = rng_for(1, &[]);
        let train: Vec<OrbitSeries> = (0..3)
            .map(|i| {
                let mut values = crate::nn::randn(50, 2, &mut rng);
                values.column_mut(0).mapv_inplace(|v| 5.0 + 3.0 * v);
                values.column_mut(1).mapv_inplace(|v| -2.0 + 0.5 * v);
                let mut s = series_with(values, vec!["a", "b"]);
                s.object_id = format!("o{i}");
                s
            })
            .collect();
        let (normed, stats) = normalize(&train, &train).unwrap();
        for j in 0..2 {
            let vals: Vec<f64> = normed.iter().flat_map(|s| s.values.column(j).to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-10, "mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-10, "std {}", var.sqrt());
        }
        assert_eq!(stats.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn normalize_constant_feature_centered_only() {
        let values = Array2::from_shape_fn((10, 2), |(r, c)| if c == 0 { 4.2 } else { r as f64 });
        let train = vec![series_with(values, vec!["a", "b"])];
        let (normed, stats) = normalize(&train, &train).unwrap();
        assert_eq!(stats.std[0], 1.0);
        assert!(normed[0].values.column(0).iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn normalize_no_leakage() {
        let mut rng = rng_for(2, &[]);
        let train = vec![series_with(crate::nn::randn(40, 1, &mut rng), vec!["a"])];
        let test = vec![series_with(
            crate::nn::randn(40, 1, &mut rng).mapv(|v| v + 10.0),
            vec!["a"],
        )];
        let (normed_test, stats) = normalize(&train, &test).unwrap();
        // stats are a pure function of train: test mean far from 0
        let mean: f64 = normed_test[0].values.column(0).mean().unwrap();
        assert!(mean.abs() > 1.0, "test mean unexpectedly centered: {mean}");
        let stats2 = NormStats::fit(&train).unwrap();
        assert_eq!(stats, stats2);
    }

    #[test]
    fn unwrap_removes_seam() {
        let mut col = vec![179.0, -179.0, -177.0, 179.0];
        unwrap_degrees(&mut col);
        assert_eq!(col, vec![179.0, 181.0, 183.0, 179.0]);
    }

    #[test]
    fn downsample_identity_profile() {
        let s = series_with(Array2::from_shape_fn((20, 1), |(r, _)| r as f64), vec!["a"]);
        let p = SamplingProfile {
            mean_interval_hours: 2.0,
            max_interval_hours: 100.0,
            distribution: IntervalDistribution::Lognormal { sigma_log: 1.0 },
            seed: 0,
        };
        assert_eq!(downsample_forward_fill(&s, &p).unwrap(), s);
        let bad = SamplingProfile {
            mean_interval_hours: 1.0,
            ..p
        };
        assert!(downsample_forward_fill(&s, &bad).is_err());
    }

    #[test]
    fn downsample_forward_fill_semantics() {
        // observations at {0, 5} on v = 0..9 -> [v0 x5, v5 x5]
        let s = series_with(Array2::from_shape_fn((10, 1), |(r, _)| r as f64), vec!["a"]);
        let p = SamplingProfile {
            mean_interval_hours: 10.0,
            max_interval_hours: 10.0,
            // single 10h interval = 5 grid steps
            distribution: IntervalDistribution::EmpiricalFile {
                intervals_hours: vec![10.0],
                weights: vec![1.0],
            },
            seed: 0,
        };
        let out = downsample_forward_fill(&s, &p).unwrap();
        assert_eq!(
            out.values.column(0).to_vec(),
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 5.0, 5.0, 5.0, 5.0]
        );
        assert_eq!(out.timestamps, s.timestamps);
    }

    #[test]
    fn downsample_mean_run_length_tracks_profile() {
        // mean 13.7h on a 2h grid -> mean run length of repeated values
        // approx 6.85 samples, Monte Carlo over >= 1e4 intervals
        let t = 2000usize;
        let names = vec!["a"];
        let mut total_obs = 0usize;
        let mut total_steps = 0usize;
        for obj in 0..12 {
            let mut s = series_with(Array2::from_shape_fn((t, 1), |(r, _)| r as f64), names.clone());
            s.object_id = format!("o{obj}");
            let p = SamplingProfile::lognormal(13.7, 42);
            let out = downsample_forward_fill(&s, &p).unwrap();
            // count observation runs: value changes mark new observations
            let mut runs = 1usize;
            for w in 0..t - 1 {
                if out.values[[w + 1, 0]] != out.values[[w, 0]] {
                    runs += 1;
                }
            }
            total_obs += runs;
            total_steps += t;
        }
        let mean_run = total_steps as f64 / total_obs as f64;
        let expect = 13.7 / 2.0;
        assert!(
            (mean_run - expect).abs() / expect < 0.05,
            "mean run {mean_run}, expected about {expect}"
        );
    }

    #[test]
    fn downsample_deterministic_per_seed() {
        let s = series_with(Array2::from_shape_fn((300, 1), |(r, _)| r as f64), vec!["a"]);
        let p = SamplingProfile::lognormal(13.7, 9);
        let a = downsample_forward_fill(&s, &p).unwrap();
        let b = downsample_forward_fill(&s, &p).unwrap();
        assert_eq!(a, b);
        let p2 = SamplingProfile::lognormal(13.7, 10);
        let c = downsample_forward_fill(&s, &p2).unwrap();
        assert_ne!(a, c);
    }
}
