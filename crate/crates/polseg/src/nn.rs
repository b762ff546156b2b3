//! Minimal dense/convolutional layers with explicit forward and backward
//! passes in f64, plus the Adam optimizer and seeded rng plumbing.
//!
//! Activations are `(T, channels)` matrices. Gradients for a model are held
//! in a second instance of the same struct (`zeros_like`), visited in lock
//! step with the parameters.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Mat = Array2<f64>;

/// Fixed-order visitation over all parameter tensors of a model. Gradient
/// and optimizer state reuse the same ordering.
pub trait Params {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));
    fn zeros_like(&self) -> Self;
}

pub fn param_count<P: Params>(p: &P) -> usize {
    let mut n = 0;
    p.visit(&mut |_, s| n += s.len());
    n
}

/// Accumulate `other` into `acc`, entry-wise. Shapes must match.
pub fn accumulate<P: Params>(acc: &mut P, other: &P) {
    let mut sources: Vec<Vec<f64>> = Vec::new();
    other.visit(&mut |_, s| sources.push(s.to_vec()));
    let mut i = 0;
    acc.visit_mut(&mut |_, dst| {
        for (d, s) in dst.iter_mut().zip(&sources[i]) {
            *d += s;
        }
        i += 1;
    });
}

/// Scale all entries of a parameter container.
pub fn scale<P: Params>(p: &mut P, factor: f64) {
    p.visit_mut(&mut |_, s| {
        for v in s {
            *v *= factor;
        }
    });
}

/// splitmix64 step, used to fold seeds and stream tags together.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic rng derived from a base seed and a stream tag path. Each
/// (seed, tags) pair gets an independent stream, so parallel workers never
/// share rng state.
pub fn rng_for(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut acc = splitmix64(seed ^ 0xA076_1D64_78BD_642F);
    for &t in tags {
        acc = splitmix64(acc ^ splitmix64(t));
    }
    ChaCha8Rng::seed_from_u64(acc)
}

/// Standard-normal matrix.
pub fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    let mut m = Array2::zeros((rows, cols));
    for v in m.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    m
}

fn uniform_init(len: usize, bound: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Fully connected layer over the channel axis: `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f64>, // (out, in)
    pub b: Array1<f64>, // (out,)
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = Array2::from_shape_vec((d_out, d_in), uniform_init(d_out * d_in, bound, rng))
            .expect("shape");
        let b = Array1::from_vec(uniform_init(d_out, bound, rng));
        Linear { w, b }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        y
    }

    /// Returns dx; accumulates dw/db into `g`.
    pub fn backward(&self, x: &Mat, dy: &Mat, g: &mut Linear) -> Mat {
        general_mat_mul(1.0, &dy.t(), x, 1.0, &mut g.w);
        g.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&format!("{prefix}.w"), self.w.as_slice().expect("layout"));
        f(&format!("{prefix}.b"), self.b.as_slice().expect("layout"));
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.w"), self.w.as_slice_mut().expect("layout"));
        f(&format!("{prefix}.b"), self.b.as_slice_mut().expect("layout"));
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }
}

/// Bias-free channel projection `y = x W^T` (a learnable weight matrix with
/// no offset).
#[derive(Debug, Clone)]
pub struct MatMul {
    pub w: Array2<f64>, // (out, in)
}

impl MatMul {
    pub fn new(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = Array2::from_shape_vec((d_out, d_in), uniform_init(d_out * d_in, bound, rng))
            .expect("shape");
        MatMul { w }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        x.dot(&self.w.t())
    }

    pub fn backward(&self, x: &Mat, dy: &Mat, g: &mut MatMul) -> Mat {
        general_mat_mul(1.0, &dy.t(), x, 1.0, &mut g.w);
        dy.dot(&self.w)
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&format!("{prefix}.w"), self.w.as_slice().expect("layout"));
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.w"), self.w.as_slice_mut().expect("layout"));
    }

    pub fn zeros_like(&self) -> Self {
        MatMul {
            w: Array2::zeros(self.w.raw_dim()),
        }
    }
}

impl Params for Linear {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        Linear::visit(self, "linear", f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        Linear::visit_mut(self, "linear", f);
    }
    fn zeros_like(&self) -> Self {
        Linear::zeros_like(self)
    }
}

/// Padding behavior for [`Conv1d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvPadding {
    /// Taps reach backward in time only (offsets `0, -d, ..., -(K-1)d`).
    Causal,
    /// Same-length centered padding; tap offsets straddle the current step.
    Symmetric,
}

/// Dilated 1-D convolution over the time axis with same-length zero padding.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: Array3<f64>, // (K, out, in)
    pub b: Array1<f64>,
    pub dilation: usize,
    pub pad_left: usize,
}

impl Conv1d {
    pub fn new(
        d_in: usize,
        d_out: usize,
        kernel: usize,
        dilation: usize,
        padding: ConvPadding,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel >= 1 && dilation >= 1);
        let bound = 1.0 / ((d_in * kernel) as f64).sqrt();
        let w = Array3::from_shape_vec(
            (kernel, d_out, d_in),
            uniform_init(kernel * d_out * d_in, bound, rng),
        )
        .expect("shape");
        let b = Array1::from_vec(uniform_init(d_out, bound, rng));
        let pad_left = match padding {
            ConvPadding::Causal => (kernel - 1) * dilation,
            ConvPadding::Symmetric => (kernel - 1) * dilation / 2,
        };
        Conv1d {
            w,
            b,
            dilation,
            pad_left,
        }
    }

    pub fn kernel(&self) -> usize {
        self.w.shape()[0]
    }

    fn tap_offset(&self, i: usize) -> isize {
        (i * self.dilation) as isize - self.pad_left as isize
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let t_len = x.nrows();
        let out = self.w.shape()[1];
        let mut y = Array2::zeros((t_len, out));
        y += &self.b;
        for i in 0..self.kernel() {
            let off = self.tap_offset(i);
            let (y0, x0, n) = shifted_range(t_len, off);
            if n == 0 {
                continue;
            }
            let wi = self.w.index_axis(Axis(0), i); // (out, in)
            let xs = x.slice(s![x0..x0 + n, ..]);
            let mut ys = y.slice_mut(s![y0..y0 + n, ..]);
            general_mat_mul(1.0, &xs, &wi.t(), 1.0, &mut ys);
        }
        y
    }

    pub fn backward(&self, x: &Mat, dy: &Mat, g: &mut Conv1d) -> Mat {
        let t_len = x.nrows();
        let mut dx = Array2::zeros(x.raw_dim());
        g.b += &dy.sum_axis(Axis(0));
        for i in 0..self.kernel() {
            let off = self.tap_offset(i);
            let (y0, x0, n) = shifted_range(t_len, off);
            if n == 0 {
                continue;
            }
            let wi = self.w.index_axis(Axis(0), i);
            let xs = x.slice(s![x0..x0 + n, ..]);
            let dys = dy.slice(s![y0..y0 + n, ..]);
            {
                let mut gwi = g.w.index_axis_mut(Axis(0), i);
                general_mat_mul(1.0, &dys.t(), &xs, 1.0, &mut gwi);
            }
            let mut dxs = dx.slice_mut(s![x0..x0 + n, ..]);
            general_mat_mul(1.0, &dys, &wi, 1.0, &mut dxs);
        }
        dx
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&format!("{prefix}.w"), self.w.as_slice().expect("layout"));
        f(&format!("{prefix}.b"), self.b.as_slice().expect("layout"));
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.w"), self.w.as_slice_mut().expect("layout"));
        f(&format!("{prefix}.b"), self.b.as_slice_mut().expect("layout"));
    }

    pub fn zeros_like(&self) -> Self {
        Conv1d {
            w: Array3::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
            dilation: self.dilation,
            pad_left: self.pad_left,
        }
    }
}

/// For an output row range aligned with an input offset, return
/// (y_start, x_start, len) of the overlapping valid region.
fn shifted_range(t_len: usize, offset: isize) -> (usize, usize, usize) {
    let y0 = (-offset).max(0) as usize;
    let x0 = offset.max(0) as usize;
    if y0 >= t_len || x0 >= t_len {
        return (0, 0, 0);
    }
    let n = t_len - y0.max(x0);
    (y0, x0, n)
}

/// Dilated convolution of a multichannel sequence with a scalar-tap filter,
/// exactly `y(t) = sum_i w[i] * x(t - i*d)` with zero padding. This is the
/// reference form used by tests and by schedule-free call sites; the
/// learnable layer generalizes it to matrix taps.
pub fn dilated_conv(x: &Mat, w: &[f64], dilation: usize) -> Mat {
    assert!(dilation >= 1);
    let t_len = x.nrows();
    let mut y = Array2::zeros(x.raw_dim());
    for (i, &wi) in w.iter().enumerate() {
        let shift = i * dilation;
        for t in shift..t_len {
            let src = x.row(t - shift);
            let mut dst = y.row_mut(t);
            dst.scaled_add(wi, &src);
        }
    }
    y
}

pub fn relu(x: &Mat) -> Mat {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(y: &Mat, dy: &Mat) -> Mat {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &yy| {
        if yy <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y
}

/// Backward through a row-wise softmax: given y = softmax(x) and dL/dy,
/// return dL/dx.
pub fn softmax_rows_backward(y: &Mat, dy: &Mat) -> Mat {
    let mut dx = Array2::zeros(y.raw_dim());
    for ((mut dxr, yr), dyr) in dx
        .rows_mut()
        .into_iter()
        .zip(y.rows())
        .zip(dy.rows())
    {
        let dot = yr.dot(&dyr);
        for ((d, &yv), &dyv) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d = yv * (dyv - dot);
        }
    }
    dx
}

/// Inverted dropout mask with keep scaling; `None` when evaluating or when
/// the rate is zero.
pub fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Option<Mat> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let mut m = Array2::zeros(shape);
    for v in m.iter_mut() {
        *v = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
    }
    Some(m)
}

pub fn apply_mask(x: &Mat, mask: Option<&Mat>) -> Mat {
    match mask {
        Some(m) => x * m,
        None => x.clone(),
    }
}

/// Scaled dot-product attention cache for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub probs: Mat, // (T, T) row-stochastic
}

/// `softmax(Q K^T / sqrt(d_k)) V`.
pub fn attention_forward(q: &Mat, k: &Mat, v: &Mat) -> (Mat, AttentionCache) {
    let d_k = q.ncols() as f64;
    let scores = q.dot(&k.t()) / d_k.sqrt();
    let probs = softmax_rows(&scores);
    let out = probs.dot(v);
    (out, AttentionCache { probs })
}

/// Returns (dQ, dK, dV).
pub fn attention_backward(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    cache: &AttentionCache,
    d_out: &Mat,
) -> (Mat, Mat, Mat) {
    let d_k = q.ncols() as f64;
    let dv = cache.probs.t().dot(d_out);
    let dprobs = d_out.dot(&v.t());
    let dscores = softmax_rows_backward(&cache.probs, &dprobs);
    let dq = dscores.dot(k) / d_k.sqrt();
    let dk = dscores.t().dot(q) / d_k.sqrt();
    (dq, dk, dv)
}

/// Adam with optional L2 weight decay folded into the gradient and an
/// optional inverse-time learning-rate decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64, lr_decay: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            lr_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<P: Params>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let lr_t = self.lr / (1.0 + self.lr_decay * (self.t - 1) as f64);
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut gsl: Vec<Vec<f64>> = Vec::new();
        grads.visit(&mut |_, gslice| gsl.push(gslice.to_vec()));
        if self.m.is_empty() {
            self.m = gsl.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = gsl.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        let mut idx = 0usize;
        let (beta1, beta2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        params.visit_mut(&mut |_, p| {
            let g = &gsl[idx];
            let m = &mut m_all[idx];
            let v = &mut v_all[idx];
            for j in 0..p.len() {
                let grad = g[j] + wd * p[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * grad;
                v[j] = beta2 * v[j] + (1.0 - beta2) * grad * grad;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr_t * mh / (vh.sqrt() + eps);
            }
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dilated_conv_matches_hand_evaluation() {
        // w=[1,1], d=2, x=[1,2,3,4] -> y(t)=x(t)+x(t-2) = [1,2,4,6]
        let x = Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = dilated_conv(&x, &[1.0, 1.0], 2);
        assert_eq!(
            y.column(0).to_vec(),
            vec![1.0, 2.0, 4.0, 6.0]
        );
    }

    #[test]
    fn dilated_conv_identity_kernel() {
        let x = randn(7, 3, &mut rng_for(1, &[0]));
        let y = dilated_conv(&x, &[1.0, 0.0, 0.0], 3);
        assert_eq!(y, x);
    }

    #[test]
    fn dilated_conv_unit_dilation_is_standard() {
        let x = Array2::from_shape_vec((3, 1), vec![1.0, 2.0, 3.0]).unwrap();
        let y = dilated_conv(&x, &[0.5, 0.25], 1);
        assert_eq!(y.column(0).to_vec(), vec![0.5, 1.25, 2.0]);
    }

    #[test]
    fn conv_layer_identity() {
        // a kernel whose only nonzero tap is the identity at offset 0
        let mut rng = rng_for(2, &[]);
        let mut conv = Conv1d::new(2, 2, 3, 2, ConvPadding::Causal, &mut rng);
        conv.w.fill(0.0);
        conv.b.fill(0.0);
        // causal pad_left = (K-1)*d = 4 -> tap offset 0 is index K-1
        conv.w[[2, 0, 0]] = 1.0;
        conv.w[[2, 1, 1]] = 1.0;
        let x = randn(9, 2, &mut rng);
        let y = conv.forward(&x);
        assert_abs_diff_eq!(y, x, epsilon = 1e-14);
    }

    #[test]
    fn softmax_rows_are_stochastic() {
        let x = randn(5, 4, &mut rng_for(3, &[])) * 10.0;
        let y = softmax_rows(&x);
        for row in y.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    fn finite_diff_check(
        f: &mut dyn FnMut(&Mat) -> f64,
        x: &Mat,
        analytic: &Mat,
        eps: f64,
        tol: f64,
    ) {
        let mut x_pert = x.clone();
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let orig = x_pert[[r, c]];
            x_pert[[r, c]] = orig + eps;
            let fp = f(&x_pert);
            x_pert[[r, c]] = orig - eps;
            let fm = f(&x_pert);
            x_pert[[r, c]] = orig;
            let num = (fp - fm) / (2.0 * eps);
            let ana = analytic[[r, c]];
            let denom = num.abs().max(ana.abs()).max(1e-8);
            assert!(
                ((num - ana) / denom).abs() < tol,
                "grad mismatch at {idx}: fd={num} analytic={ana}"
            );
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = rng_for(4, &[]);
        let lin = Linear::new(3, 2, &mut rng);
        let x = randn(5, 3, &mut rng);
        // scalar objective: sum of squares of output
        let y = lin.forward(&x);
        let dy = 2.0 * &y;
        let mut g = lin.zeros_like();
        let dx = lin.backward(&x, &dy, &mut g);
        let lin2 = lin.clone();
        finite_diff_check(
            &mut |xp| lin2.forward(xp).iter().map(|v| v * v).sum(),
            &x,
            &dx,
            1e-6,
            1e-6,
        );
        // weight gradient check on a few entries
        let mut lin_pert = lin.clone();
        for &(r, c) in &[(0usize, 0usize), (1, 2)] {
            let orig = lin_pert.w[[r, c]];
            lin_pert.w[[r, c]] = orig + 1e-6;
            let fp: f64 = lin_pert.forward(&x).iter().map(|v| v * v).sum();
            lin_pert.w[[r, c]] = orig - 1e-6;
            let fm: f64 = lin_pert.forward(&x).iter().map(|v| v * v).sum();
            lin_pert.w[[r, c]] = orig;
            let num = (fp - fm) / 2e-6;
            assert_abs_diff_eq!(num, g.w[[r, c]], epsilon = 1e-5);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = rng_for(5, &[]);
        for padding in [ConvPadding::Causal, ConvPadding::Symmetric] {
            let conv = Conv1d::new(3, 2, 4, 2, padding, &mut rng);
            let x = randn(9, 3, &mut rng);
            let y = conv.forward(&x);
            let dy = 2.0 * &y;
            let mut g = conv.zeros_like();
            let dx = conv.backward(&x, &dy, &mut g);
            let conv2 = conv.clone();
            finite_diff_check(
                &mut |xp| conv2.forward(xp).iter().map(|v| v * v).sum(),
                &x,
                &dx,
                1e-6,
                1e-6,
            );
            let mut conv_pert = conv.clone();
            for &(k, o, i) in &[(0usize, 0usize, 0usize), (3, 1, 2)] {
                let orig = conv_pert.w[[k, o, i]];
                conv_pert.w[[k, o, i]] = orig + 1e-6;
                let fp: f64 = conv_pert.forward(&x).iter().map(|v| v * v).sum();
                conv_pert.w[[k, o, i]] = orig - 1e-6;
                let fm: f64 = conv_pert.forward(&x).iter().map(|v| v * v).sum();
                conv_pert.w[[k, o, i]] = orig;
                let num = (fp - fm) / 2e-6;
                assert_abs_diff_eq!(num, g.w[[k, o, i]], epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn attention_backward_matches_finite_differences() {
        let mut rng = rng_for(6, &[]);
        let q = randn(4, 3, &mut rng);
        let k = randn(4, 3, &mut rng);
        let v = randn(4, 3, &mut rng);
        let (o, cache) = attention_forward(&q, &k, &v);
        let d_out = 2.0 * &o;
        let (dq, dk, dv) = attention_backward(&q, &k, &v, &cache, &d_out);
        let obj = |qq: &Mat, kk: &Mat, vv: &Mat| -> f64 {
            attention_forward(qq, kk, vv).0.iter().map(|x| x * x).sum()
        };
        let (k2, v2) = (k.clone(), v.clone());
        finite_diff_check(&mut |qp| obj(qp, &k2, &v2), &q, &dq, 1e-6, 1e-5);
        let (q2, v3) = (q.clone(), v.clone());
        finite_diff_check(&mut |kp| obj(&q2, kp, &v3), &k, &dk, 1e-6, 1e-5);
        let (q3, k3) = (q.clone(), k.clone());
        finite_diff_check(&mut |vp| obj(&q3, &k3, vp), &v, &dv, 1e-6, 1e-5);
    }

    #[test]
    fn attention_rows_sum_to_one_and_single_key() {
        let mut rng = rng_for(7, &[]);
        let q = randn(6, 4, &mut rng);
        let k = randn(6, 4, &mut rng);
        let v = randn(6, 4, &mut rng);
        let (_, cache) = attention_forward(&q, &k, &v);
        for row in cache.probs.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
        }
        // T = 1: single key gets weight 1, output equals v
        let q1 = randn(1, 4, &mut rng);
        let k1 = randn(1, 4, &mut rng);
        let v1 = randn(1, 4, &mut rng);
        let (o1, c1) = attention_forward(&q1, &k1, &v1);
        assert_abs_diff_eq!(c1.probs[[0, 0]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o1, v1, epsilon = 1e-15);
    }

    #[test]
    fn dropout_scaling_preserves_expectation() {
        let mut rng = rng_for(8, &[]);
        let mask = dropout_mask((200, 50), 0.1, &mut rng).unwrap();
        let mean = mask.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.02, "mask mean {mean}");
        assert!(dropout_mask((3, 3), 0.0, &mut rng).is_none());
    }

    #[test]
    fn adam_reduces_quadratic() {
        // minimize ||w||^2 with Adam on a Linear's weights
        let mut rng = rng_for(9, &[]);
        let mut lin = Linear::new(4, 4, &mut rng);
        let mut opt = Adam::new(0.05, 0.0, 0.0);
        let start: f64 = lin.w.iter().map(|v| v * v).sum();
        for _ in 0..200 {
            let mut g = lin.zeros_like();
            g.w.assign(&(2.0 * &lin.w));
            g.b.assign(&(2.0 * &lin.b));
            opt.step(&mut lin, &g);
        }
        let end: f64 = lin.w.iter().map(|v| v * v).sum();
        assert!(end < start * 1e-3, "start {start}, end {end}");
    }

    #[test]
    fn rng_streams_are_independent_and_reproducible() {
        let a1: Vec<f64> = (0..4).map(|_| rng_for(1, &[2, 3]).random()).collect();
        let a2: Vec<f64> = (0..4).map(|_| rng_for(1, &[2, 3]).random()).collect();
        assert_eq!(a1, a2);
        let mut r1 = rng_for(1, &[2, 3]);
        let mut r2 = rng_for(1, &[2, 4]);
        let x1: f64 = r1.random();
        let x2: f64 = r2.random();
        assert_ne!(x1, x2);
    }
}
