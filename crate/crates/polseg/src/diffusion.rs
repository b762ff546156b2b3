//! Noise schedule, forward corruption of label embeddings, deterministic
//! skipped-step reverse sampling, the label/continuous codec, and condition
//! masking.

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{onehot_indices, Direction, LabelSeq};
use crate::error::{Error, Result};
use crate::nn::Mat;

/// Shape of the beta schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
}

/// Variance schedule over `S` diffusion steps. `alpha_bar(s)` uses the
/// convention `alpha_bar(0) = 1` so step 0 is the clean state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub kind: ScheduleKind,
    pub beta_start: f64,
    pub beta_end: f64,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>, // index s in [0, S]; alpha_bar[0] = 1
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidConfig(format!(
                "schedule needs at least 2 steps, got {steps}"
            )));
        }
        let mut beta = Vec::with_capacity(steps);
        for i in 0..steps {
            let frac = i as f64 / (steps - 1) as f64;
            beta.push(beta_start + frac * (beta_end - beta_start));
        }
        if beta.iter().any(|&b| b <= 0.0 || b >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must stay in (0,1); got range [{beta_start}, {beta_end}]"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for &b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(NoiseSchedule {
            steps,
            kind: ScheduleKind::Linear,
            beta_start,
            beta_end,
            beta,
            alpha_bar,
        })
    }

    pub fn make(steps: usize, kind: ScheduleKind, beta_start: f64, beta_end: f64) -> Result<Self> {
        match kind {
            ScheduleKind::Linear => Self::linear(steps, beta_start, beta_end),
        }
    }

    pub fn beta(&self, s: usize) -> f64 {
        self.beta[s - 1]
    }

    /// Cumulative signal rate at step `s` (0 ..= S).
    pub fn alpha_bar(&self, s: usize) -> f64 {
        self.alpha_bar[s]
    }

    /// Check the structural invariants: beta in (0,1), alpha_bar strictly
    /// decreasing, near-1 at the first step, near-0 at the last.
    pub fn validate(&self) -> Result<()> {
        if self.beta.iter().any(|&b| b <= 0.0 || b >= 1.0) {
            return Err(Error::InvalidConfig("beta out of (0,1)".into()));
        }
        for s in 0..self.steps {
            if self.alpha_bar[s + 1] >= self.alpha_bar[s] {
                return Err(Error::InvalidConfig(format!(
                    "alpha_bar not strictly decreasing at step {}",
                    s + 1
                )));
            }
        }
        if self.alpha_bar(1) <= 0.99 {
            return Err(Error::InvalidConfig(format!(
                "alpha_bar(1) = {} too far from 1",
                self.alpha_bar(1)
            )));
        }
        if self.alpha_bar(self.steps) >= 0.01 {
            return Err(Error::InvalidConfig(format!(
                "alpha_bar(S) = {} not close to 0",
                self.alpha_bar(self.steps)
            )));
        }
        Ok(())
    }

    /// The descending step sequence visited by skipped-step inference:
    /// `S, S - stride, ..., stride` followed by a final hop to 0.
    pub fn skip_steps(&self, infer_steps: usize) -> Vec<usize> {
        let stride = (self.steps / infer_steps).max(1);
        let mut out = Vec::new();
        let mut s = self.steps;
        while s > 0 {
            out.push(s);
            s = s.saturating_sub(stride);
        }
        out
    }
}

/// Embed a label sequence as points in continuous space:
/// `x0 = scale * (2 * onehot - 1)`.
pub fn encode_labels(labels: &[usize], num_classes: usize, scale: f64) -> Result<Mat> {
    let oh = onehot_indices(labels, num_classes)?;
    Ok(oh.mapv(|v| scale * (2.0 * v - 1.0)))
}

/// Per-timestep argmax; ties break toward the lowest class index.
pub fn decode_labels(p: &Mat, object_id: String, direction: Direction) -> LabelSeq {
    let labels = p
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_v = row[0];
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            best
        })
        .collect();
    LabelSeq::new(object_id, direction, labels)
}

/// Closed-form forward corruption to step `s`:
/// `x_s = sqrt(alpha_bar_s) * x0 + eps * sqrt(1 - alpha_bar_s)`.
pub fn forward_diffuse(x0: &Mat, s: usize, sched: &NoiseSchedule, eps: &Mat) -> Mat {
    let ab = sched.alpha_bar(s);
    x0 * ab.sqrt() + eps * (1.0 - ab).sqrt()
}

/// One deterministic (or eta-noised) reverse hop from `s_from` down to
/// `s_to`, given the model's clean-state prediction `f_pred`:
///
/// `y_to = sqrt(ab_to) f_pred
///       + sqrt(1 - ab_to - sigma^2) * (y_from - sqrt(ab_from) f_pred) / sqrt(1 - ab_from)
///       + sigma * eps`
///
/// with `sigma = eta * sqrt((1-ab_to)/(1-ab_from)) * sqrt(1 - ab_from/ab_to)`.
pub fn ddim_step(
    y_from: &Mat,
    s_from: usize,
    s_to: usize,
    f_pred: &Mat,
    sched: &NoiseSchedule,
    eta: f64,
    noise: Option<&Mat>,
) -> Result<Mat> {
    if s_to >= s_from {
        return Err(Error::InvalidConfig(format!(
            "ddim step must move down: {s_from} -> {s_to}"
        )));
    }
    if f_pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ddim f_pred".into()));
    }
    let ab_from = sched.alpha_bar(s_from);
    let ab_to = sched.alpha_bar(s_to);
    let sigma = if eta == 0.0 {
        0.0
    } else {
        eta * ((1.0 - ab_to) / (1.0 - ab_from)).sqrt() * (1.0 - ab_from / ab_to).sqrt()
    };
    let dir_coef = (1.0 - ab_to - sigma * sigma).max(0.0).sqrt();
    let resid = (y_from - &(f_pred * ab_from.sqrt())) / (1.0 - ab_from).sqrt();
    let mut y_to = f_pred * ab_to.sqrt() + resid * dir_coef;
    if sigma > 0.0 {
        let eps = noise.ok_or_else(|| {
            Error::InvalidConfig("eta > 0 requires caller-supplied noise".into())
        })?;
        y_to = y_to + eps * sigma;
    }
    Ok(y_to)
}

/// Kinds of condition masking applied to the encoder embedding during
/// training (classifier-free-guidance style).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// Full conditioning: mask of all ones.
    None,
    /// All-zero mask that completely blocks the conditional embedding,
    /// forcing the unconditional label prior.
    PositionPrior,
    /// Zeros exactly in a window around ground-truth transitions, ones
    /// elsewhere.
    BoundaryPrior,
}

pub const MASK_KINDS: [MaskKind; 3] = [MaskKind::None, MaskKind::PositionPrior, MaskKind::BoundaryPrior];

/// A per-timestep {0,1} gate over the conditional embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMask {
    pub kind: MaskKind,
    pub mask: Array1<f64>, // length T, entries in {0, 1}
}

impl ConditionMask {
    /// Elementwise product, broadcasting the gate over channels; gated rows
    /// come out exactly zero.
    pub fn apply(&self, x_enc: &Mat) -> Mat {
        let mut out = x_enc.clone();
        for (mut row, &m) in out.rows_mut().into_iter().zip(self.mask.iter()) {
            if m == 0.0 {
                row.fill(0.0);
            }
        }
        out
    }

    /// Backward of [`apply`]: gradients through gated rows are zero.
    pub fn apply_backward(&self, d_out: &Mat) -> Mat {
        let mut d = d_out.clone();
        for (mut row, &m) in d.rows_mut().into_iter().zip(self.mask.iter()) {
            if m == 0.0 {
                row.fill(0.0);
            }
        }
        d
    }
}

/// Build a condition mask of the given kind for a length-`t_len` sequence.
/// `BoundaryPrior` needs ground-truth labels (training only) and zeroes the
/// `window` timesteps on each side of every label transition.
pub fn make_mask(
    kind: MaskKind,
    t_len: usize,
    gt_labels: Option<&LabelSeq>,
    window: usize,
) -> Result<ConditionMask> {
    let mask = match kind {
        MaskKind::None => Array1::ones(t_len),
        MaskKind::PositionPrior => Array1::zeros(t_len),
        MaskKind::BoundaryPrior => {
            let labels = gt_labels.ok_or_else(|| {
                Error::InvalidConfig("boundary_prior mask requires ground-truth labels".into())
            })?;
            if labels.len() != t_len {
                return Err(Error::LengthMismatch {
                    expected: t_len,
                    got: labels.len(),
                });
            }
            let mut m = Array1::ones(t_len);
            for t in 0..t_len.saturating_sub(1) {
                if labels.labels[t] != labels.labels[t + 1] {
                    // transition sits between t and t+1; blank `window` steps
                    // on each side of that edge
                    let lo = (t + 1).saturating_sub(window);
                    let hi = (t + window).min(t_len - 1);
                    for i in lo..=hi {
                        m[i] = 0.0;
                    }
                }
            }
            m
        }
    };
    Ok(ConditionMask { kind, mask })
}

/// Uniform draw over the three mask kinds (training only; inference always
/// uses `MaskKind::None`).
pub fn sample_mask_kind(rng: &mut ChaCha8Rng) -> MaskKind {
    MASK_KINDS[rng.random_range(0..MASK_KINDS.len())]
}
