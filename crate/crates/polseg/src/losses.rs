//! Training losses over row-stochastic predictions: point-wise cross
//! entropy, adjacent-frame log-likelihood smoothing, boundary alignment, and
//! their weighted sum (plus the auxiliary encoder cross entropy).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mat;

pub const LOG_EPS: f64 = 1e-12;

fn log_clamped(x: f64) -> f64 {
    x.max(LOG_EPS).ln()
}

fn inv_clamped(x: f64) -> f64 {
    if x > LOG_EPS {
        1.0 / x
    } else {
        0.0
    }
}

/// Loss weights and shaping parameters. All weights must be non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_ce: f64,
    pub w_smo: f64,
    pub w_bd: f64,
    pub w_aux: f64,
    /// Per-pair clamp on the squared log-likelihood difference.
    pub smooth_clamp: f64,
    /// Gaussian std (timesteps) of the smoothed boundary target.
    pub boundary_sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_ce: 1.0,
            w_smo: 0.15,
            w_bd: 1.0,
            w_aux: 1.0,
            smooth_clamp: 16.0,
            boundary_sigma: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_ce", self.w_ce),
            ("w_smo", self.w_smo),
            ("w_bd", self.w_bd),
            ("w_aux", self.w_aux),
        ] {
            if v < 0.0 {
                return Err(Error::InvalidConfig(format!("negative loss weight {name} = {v}")));
            }
        }
        if self.smooth_clamp <= 0.0 {
            return Err(Error::InvalidConfig("smooth_clamp must be positive".into()));
        }
        if self.boundary_sigma < 0.0 {
            return Err(Error::InvalidConfig("boundary_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Point-wise cross entropy, `-(1/(T*C)) sum_t log p[t, y_t]`, with the log
/// clamped at `ln(1e-12)`.
pub fn ce_loss(p: &Mat, labels: &[usize]) -> Result<f64> {
    check_labels(p, labels)?;
    let (t_len, c) = (p.nrows(), p.ncols());
    let mut sum = 0.0;
    for (t, &y) in labels.iter().enumerate() {
        sum += log_clamped(p[[t, y]]);
    }
    Ok(-sum / (t_len * c) as f64)
}

/// dL/dp for [`ce_loss`].
pub fn ce_loss_backward(p: &Mat, labels: &[usize]) -> Result<Mat> {
    check_labels(p, labels)?;
    let (t_len, c) = (p.nrows(), p.ncols());
    let norm = (t_len * c) as f64;
    let mut dp = Array2::zeros(p.raw_dim());
    for (t, &y) in labels.iter().enumerate() {
        dp[[t, y]] = -inv_clamped(p[[t, y]]) / norm;
    }
    Ok(dp)
}

fn check_labels(p: &Mat, labels: &[usize]) -> Result<()> {
    if labels.len() != p.nrows() {
        return Err(Error::LengthMismatch {
            expected: p.nrows(),
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= p.ncols()) {
        return Err(Error::ClassOutOfRange {
            index: bad,
            size: p.ncols(),
        });
    }
    Ok(())
}

/// Temporal smoothing loss: mean over adjacent frame pairs and classes of
/// the squared log-likelihood difference, each squared term clamped at
/// `clamp`.
pub fn smooth_loss(p: &Mat, clamp: f64) -> Result<f64> {
    let (t_len, c) = (p.nrows(), p.ncols());
    if t_len < 2 {
        return Err(Error::EmptyInput("smooth loss needs T >= 2".into()));
    }
    let mut sum = 0.0;
    for t in 0..t_len - 1 {
        for j in 0..c {
            let d = log_clamped(p[[t, j]]) - log_clamped(p[[t + 1, j]]);
            sum += (d * d).min(clamp);
        }
    }
    Ok(sum / ((t_len - 1) * c) as f64)
}

/// dL/dp for [`smooth_loss`]; clamped pairs contribute zero gradient.
pub fn smooth_loss_backward(p: &Mat, clamp: f64) -> Result<Mat> {
    let (t_len, c) = (p.nrows(), p.ncols());
    if t_len < 2 {
        return Err(Error::EmptyInput("smooth loss needs T >= 2".into()));
    }
    let norm = ((t_len - 1) * c) as f64;
    let mut dp = Array2::zeros(p.raw_dim());
    for t in 0..t_len - 1 {
        for j in 0..c {
            let d = log_clamped(p[[t, j]]) - log_clamped(p[[t + 1, j]]);
            if d * d >= clamp {
                continue;
            }
            let base = 2.0 * d / norm;
            dp[[t, j]] += base * inv_clamped(p[[t, j]]);
            dp[[t + 1, j]] -= base * inv_clamped(p[[t + 1, j]]);
        }
    }
    Ok(dp)
}

/// Smoothed boundary target: the binary transition indicator (1 where the
/// label changes between t and t+1) convolved with a peak-normalized
/// Gaussian kernel of std `sigma` truncated at 4 sigma, clamped to [0,1].
/// Index `t` refers to the pair `(t, t+1)`; the final slot is unused padding.
pub fn boundary_target(labels: &[usize], sigma: f64) -> Vec<f64> {
    let t_len = labels.len();
    let mut indicator = vec![0.0f64; t_len];
    for t in 0..t_len.saturating_sub(1) {
        if labels[t] != labels[t + 1] {
            indicator[t] = 1.0;
        }
    }
    if sigma <= 0.0 {
        return indicator;
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut out = vec![0.0f64; t_len];
    for (t, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in -radius..=radius {
            let src = t as isize - j;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let k = (-(j * j) as f64 / (2.0 * sigma * sigma)).exp();
            acc += k * indicator[src as usize];
        }
        *o = acc.clamp(0.0, 1.0);
    }
    out
}

/// Boundary alignment loss over adjacent-frame probability inner products:
///
/// `L = (1/(T-1)) sum_t [ -B_t log(1 - p_t . p_{t+1})
///                        - (1 - B_t) log(p_t . p_{t+1}) ]`
pub fn boundary_loss(p: &Mat, bbar: &[f64]) -> Result<f64> {
    let t_len = p.nrows();
    if t_len < 2 {
        return Err(Error::EmptyInput("boundary loss needs T >= 2".into()));
    }
    if bbar.len() < t_len - 1 {
        return Err(Error::LengthMismatch {
            expected: t_len - 1,
            got: bbar.len(),
        });
    }
    let mut sum = 0.0;
    for t in 0..t_len - 1 {
        let dot = p.row(t).dot(&p.row(t + 1));
        sum += -bbar[t] * log_clamped(1.0 - dot) - (1.0 - bbar[t]) * log_clamped(dot);
    }
    Ok(sum / (t_len - 1) as f64)
}

/// dL/dp for [`boundary_loss`].
pub fn boundary_loss_backward(p: &Mat, bbar: &[f64]) -> Result<Mat> {
    let t_len = p.nrows();
    if t_len < 2 {
        return Err(Error::EmptyInput("boundary loss needs T >= 2".into()));
    }
    let norm = (t_len - 1) as f64;
    let mut dp = Array2::zeros(p.raw_dim());
    for t in 0..t_len - 1 {
        let dot = p.row(t).dot(&p.row(t + 1));
        // d/d(dot) of the pair term, respecting the log clamps
        let mut dterm = 0.0;
        if 1.0 - dot > LOG_EPS {
            dterm += bbar[t] / (1.0 - dot);
        }
        if dot > LOG_EPS {
            dterm -= (1.0 - bbar[t]) / dot;
        }
        let coef = dterm / norm;
        let row_next = p.row(t + 1).to_owned();
        let row_cur = p.row(t).to_owned();
        dp.row_mut(t).scaled_add(coef, &row_next);
        dp.row_mut(t + 1).scaled_add(coef, &row_cur);
    }
    Ok(dp)
}

/// Weighted total loss. Components with zero weight are skipped entirely, so
/// degenerate shapes only error when they are actually used.
pub fn total_loss(
    p_dec: &Mat,
    p_aux: &Mat,
    labels: &[usize],
    bbar: &[f64],
    w: &LossWeights,
) -> Result<f64> {
    w.validate()?;
    let mut loss = 0.0;
    if w.w_ce > 0.0 {
        loss += w.w_ce * ce_loss(p_dec, labels)?;
    }
    if w.w_smo > 0.0 {
        loss += w.w_smo * smooth_loss(p_dec, w.smooth_clamp)?;
    }
    if w.w_bd > 0.0 {
        loss += w.w_bd * boundary_loss(p_dec, bbar)?;
    }
    if w.w_aux > 0.0 {
        loss += w.w_aux * ce_loss(p_aux, labels)?;
    }
    Ok(loss)
}

/// Total loss plus gradients w.r.t. both probability inputs.
pub fn total_loss_grad(
    p_dec: &Mat,
    p_aux: &Mat,
    labels: &[usize],
    bbar: &[f64],
    w: &LossWeights,
) -> Result<(f64, Mat, Mat)> {
    let loss = total_loss(p_dec, p_aux, labels, bbar, w)?;
    let mut dp_dec = Array2::zeros(p_dec.raw_dim());
    if w.w_ce > 0.0 {
        dp_dec += &(ce_loss_backward(p_dec, labels)? * w.w_ce);
    }
    if w.w_smo > 0.0 {
        dp_dec += &(smooth_loss_backward(p_dec, w.smooth_clamp)? * w.w_smo);
    }
    if w.w_bd > 0.0 {
        dp_dec += &(boundary_loss_backward(p_dec, bbar)? * w.w_bd);
    }
    let mut dp_aux = Array2::zeros(p_aux.raw_dim());
    if w.w_aux > 0.0 {
        dp_aux += &(ce_loss_backward(p_aux, labels)? * w.w_aux);
    }
    Ok((loss, dp_dec, dp_aux))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{randn, rng_for, softmax_rows, softmax_rows_backward};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn ce_perfect_prediction_is_zero() {
        let p = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let l = ce_loss(&p, &[0, 1]).unwrap();
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ce_uniform_closed_form() {
        for c in [2usize, 3, 5] {
            let p = Array2::from_elem((7, c), 1.0 / c as f64);
            let labels: Vec<usize> = (0..7).map(|t| t % c).collect();
            let l = ce_loss(&p, &labels).unwrap();
            assert_abs_diff_eq!(l, (c as f64).ln() / c as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn ce_matches_double_loop_oracle() {
        let mut rng = rng_for(10, &[]);
        let p = softmax_rows(&randn(9, 4, &mut rng));
        let labels: Vec<usize> = (0..9).map(|_| rng.random_range(0..4)).collect();
        // independent oracle: full Y_{t,c} double loop over the one-hot target
        let mut acc = 0.0;
        for t in 0..9 {
            for c in 0..4 {
                let y = if labels[t] == c { 1.0 } else { 0.0 };
                acc -= y * p[[t, c]].ln();
            }
        }
        let oracle = acc / (9.0 * 4.0);
        assert_abs_diff_eq!(ce_loss(&p, &labels).unwrap(), oracle, epsilon = 1e-10);
    }

    #[test]
    fn smooth_constant_is_zero() {
        let row = vec![0.2, 0.3, 0.5];
        let p = Array2::from_shape_vec((4, 3), row.iter().cycle().take(12).copied().collect())
            .unwrap();
        assert_abs_diff_eq!(smooth_loss(&p, 16.0).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn smooth_degenerate_single_class() {
        let p = Array2::from_elem((2, 1), 1.0);
        assert_abs_diff_eq!(smooth_loss(&p, 16.0).unwrap(), 0.0, epsilon = 1e-15);
        assert!(smooth_loss(&Array2::from_elem((1, 2), 0.5), 16.0).is_err());
    }

    #[test]
    fn smooth_matches_loop_oracle() {
        let mut rng = rng_for(11, &[]);
        let p = softmax_rows(&randn(8, 3, &mut rng));
        let mut acc = 0.0;
        for t in 0..7 {
            for c in 0..3 {
                let d = p[[t, c]].ln() - p[[t + 1, c]].ln();
                acc += d * d;
            }
        }
        let oracle = acc / (7.0 * 3.0);
        assert_abs_diff_eq!(smooth_loss(&p, 16.0).unwrap(), oracle, epsilon = 1e-10);
    }

    #[test]
    fn smooth_invariant_to_class_permutation() {
        let mut rng = rng_for(12, &[]);
        let p = softmax_rows(&randn(10, 4, &mut rng));
        let perm = [2usize, 0, 3, 1];
        let mut q = Array2::zeros(p.raw_dim());
        for t in 0..10 {
            for c in 0..4 {
                q[[t, perm[c]]] = p[[t, c]];
            }
        }
        assert_abs_diff_eq!(
            smooth_loss(&p, 16.0).unwrap(),
            smooth_loss(&q, 16.0).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn boundary_target_cases() {
        // single segment -> all zeros
        assert!(boundary_target(&[1, 1, 1, 1], 2.0).iter().all(|&v| v == 0.0));
        // sigma -> 0 gives the indicator itself
        let b = boundary_target(&[0, 0, 1, 1], 0.0);
        assert_eq!(b, vec![0.0, 1.0, 0.0, 0.0]);
        // one transition at t*, sigma=2: value at t* +- 1 is exp(-1/8)
        let labels = [vec![0usize; 20], vec![1usize; 20]].concat();
        let b = boundary_target(&labels, 2.0);
        let tstar = 19usize;
        assert_abs_diff_eq!(b[tstar], 1.0, epsilon = 1e-12);
        let expect = (-1.0f64 / 8.0).exp();
        assert_abs_diff_eq!(b[tstar - 1], expect, epsilon = 1e-12);
        assert_abs_diff_eq!(b[tstar + 1], expect, epsilon = 1e-12);
        // clamped to [0,1] even with close transitions
        let b = boundary_target(&[0, 1, 0, 1, 0, 1, 0, 1], 2.0);
        assert!(b.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn boundary_loss_confident_cases() {
        // identical adjacent one-hot rows, B=0 -> dot = 1 -> term ~ 0
        let p = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let l = boundary_loss(&p, &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-12);
        // orthogonal adjacent one-hot rows, B=1 -> dot = 0 -> term ~ 0
        let p = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let l = boundary_loss(&p, &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn boundary_matches_loop_oracle() {
        let mut rng = rng_for(13, &[]);
        let p = softmax_rows(&randn(8, 3, &mut rng));
        let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
        let bbar = boundary_target(&labels, 2.0);
        let mut acc = 0.0;
        for t in 0..7 {
            let mut dot = 0.0;
            for c in 0..3 {
                dot += p[[t, c]] * p[[t + 1, c]];
            }
            acc += -bbar[t] * (1.0 - dot).ln() - (1.0 - bbar[t]) * dot.ln();
        }
        let oracle = acc / 7.0;
        assert_abs_diff_eq!(boundary_loss(&p, &bbar).unwrap(), oracle, epsilon = 1e-10);
    }

    #[test]
    fn boundary_pair_terms_symmetric_in_adjacent_frames() {
        // with T=2 there is a single pair; swapping the two rows must leave
        // the loss unchanged
        let mut rng = rng_for(14, &[]);
        let p = softmax_rows(&randn(2, 4, &mut rng));
        let mut swapped = p.clone();
        let r0 = p.row(0).to_owned();
        let r1 = p.row(1).to_owned();
        swapped.row_mut(0).assign(&r1);
        swapped.row_mut(1).assign(&r0);
        let b = [0.37, 0.0];
        assert_abs_diff_eq!(
            boundary_loss(&p, &b).unwrap(),
            boundary_loss(&swapped, &b).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn total_loss_composition() {
        let mut rng = rng_for(15, &[]);
        let p_dec = softmax_rows(&randn(6, 3, &mut rng));
        let p_aux = softmax_rows(&randn(6, 3, &mut rng));
        let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
        let bbar = boundary_target(&labels, 2.0);
        let w = LossWeights::default();
        let total = total_loss(&p_dec, &p_aux, &labels, &bbar, &w).unwrap();
        let sum = w.w_ce * ce_loss(&p_dec, &labels).unwrap()
            + w.w_smo * smooth_loss(&p_dec, w.smooth_clamp).unwrap()
            + w.w_bd * boundary_loss(&p_dec, &bbar).unwrap()
            + w.w_aux * ce_loss(&p_aux, &labels).unwrap();
        assert_abs_diff_eq!(total, sum, epsilon = 1e-12);
        // all-zero weights give exactly zero
        let zero = LossWeights {
            w_ce: 0.0,
            w_smo: 0.0,
            w_bd: 0.0,
            w_aux: 0.0,
            ..w
        };
        assert_eq!(total_loss(&p_dec, &p_aux, &labels, &bbar, &zero).unwrap(), 0.0);
        // negative weights rejected
        let bad = LossWeights { w_ce: -1.0, ..w };
        assert!(total_loss(&p_dec, &p_aux, &labels, &bbar, &bad).is_err());
    }

    #[test]
    fn perfect_predictions_give_near_zero_total() {
        // composition of the individual zero cases: constant-in-time
        // prediction that exactly matches a single-segment ground truth with
        // a consistent (all-zero) boundary target
        let labels = vec![1usize; 6];
        let p = crate::domain::onehot_indices(&labels, 3).unwrap();
        let bbar = boundary_target(&labels, 2.0);
        let w = LossWeights::default();
        let total = total_loss(&p, &p, &labels, &bbar, &w).unwrap();
        assert!(total.abs() < 1e-9, "total {total}");
        // at a true boundary the clamped smoothing term is the only nonzero
        // component for a hard, exactly-correct prediction
        let labels2 = vec![0usize, 0, 0, 1, 1, 1];
        let p2 = crate::domain::onehot_indices(&labels2, 3).unwrap();
        let bbar2 = boundary_target(&labels2, 0.0);
        let w2 = LossWeights { w_smo: 0.0, ..w };
        let total2 = total_loss(&p2, &p2, &labels2, &bbar2, &w2).unwrap();
        assert!(total2.abs() < 1e-9, "total {total2}");
    }

    /// Finite-difference check of dL/dz through softmax for each loss.
    fn grad_check_through_softmax(
        loss: &dyn Fn(&Mat) -> f64,
        grad_p: &dyn Fn(&Mat) -> Mat,
        z: &Mat,
        tol: f64,
    ) {
        let p = softmax_rows(z);
        let dp = grad_p(&p);
        let dz = softmax_rows_backward(&p, &dp);
        let mut zp = z.clone();
        let eps = 1e-6;
        for idx in 0..z.len() {
            let (r, c) = (idx / z.ncols(), idx % z.ncols());
            let orig = zp[[r, c]];
            zp[[r, c]] = orig + eps;
            let fp = loss(&softmax_rows(&zp));
            zp[[r, c]] = orig - eps;
            let fm = loss(&softmax_rows(&zp));
            zp[[r, c]] = orig;
            let num = (fp - fm) / (2.0 * eps);
            let ana = dz[[r, c]];
            let denom = num.abs().max(ana.abs()).max(1e-8);
            assert!(
                ((num - ana) / denom).abs() < tol,
                "dL/dz mismatch at ({r},{c}): fd={num} analytic={ana}"
            );
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = rng_for(16, &[]);
        let z = randn(8, 4, &mut rng);
        let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..4)).collect();
        let bbar = boundary_target(&labels, 2.0);
        let l2 = labels.clone();
        grad_check_through_softmax(
            &move |p| ce_loss(p, &l2).unwrap(),
            &{
                let l = labels.clone();
                move |p| ce_loss_backward(p, &l).unwrap()
            },
            &z,
            1e-4,
        );
        grad_check_through_softmax(
            &|p| smooth_loss(p, 16.0).unwrap(),
            &|p| smooth_loss_backward(p, 16.0).unwrap(),
            &z,
            1e-4,
        );
        let b2 = bbar.clone();
        grad_check_through_softmax(
            &move |p| boundary_loss(p, &b2).unwrap(),
            &{
                let b = bbar.clone();
                move |p| boundary_loss_backward(p, &b).unwrap()
            },
            &z,
            1e-4,
        );
    }
}
