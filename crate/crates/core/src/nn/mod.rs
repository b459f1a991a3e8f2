//! Hand-rolled feedforward networks: dense affine layers, elementwise tanh,
//! and batch normalization before the first affine map and before each
//! activation. Forward evaluation, parameter gradients and input gradients
//! are all written out explicitly; there is no autodiff dependency.
//!
//! Architecture (standard configuration, hidden width `d + 50`):
//!
//! ```text
//! input -> BN -> affine(d -> h) -> BN -> tanh -> affine(h -> h) -> BN -> tanh -> affine(h -> 1)
//! ```

mod backward;
mod forward;

pub use backward::{net_input_grad, net_param_grad};
pub use forward::{net_forward_infer, net_forward_train, ForwardCache};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RngStream;
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub batch_norm: bool,
}

impl NetworkShape {
    /// Standard experimental configuration: two hidden layers of width
    /// `d + 50` with batch normalization at all three sites.
    pub fn standard(input_dim: usize) -> Self {
        NetworkShape {
            input_dim,
            hidden_dim: input_dim + 50,
            batch_norm: true,
        }
    }

    /// Plain variant: hidden width `d`, no batch normalization.
    pub fn plain(input_dim: usize) -> Self {
        NetworkShape {
            input_dim,
            hidden_dim: input_dim,
            batch_norm: false,
        }
    }

    /// Length of the affine block: `h(d+1) + h(h+1) + (h+1)`.
    pub fn affine_len(&self) -> usize {
        let d = self.input_dim;
        let h = self.hidden_dim;
        h * (d + 1) + h * (h + 1) + (h + 1)
    }

    /// Per-feature dimensions of the batch-norm sites, in network order.
    pub fn bn_site_dims(&self) -> Vec<usize> {
        if self.batch_norm {
            vec![self.input_dim, self.hidden_dim, self.hidden_dim]
        } else {
            Vec::new()
        }
    }

    pub fn param_len(&self) -> usize {
        self.affine_len() + 2 * self.bn_site_dims().iter().sum::<usize>()
    }

    // Flat layout: [W1 | b1 | W2 | b2 | W3 | b3 | scale0 | shift0 | scale1 | ...].
    // Weights are row-major, matching the index scheme of the affine maps.

    pub fn w1(&self) -> Range<usize> {
        0..self.hidden_dim * self.input_dim
    }
    pub fn b1(&self) -> Range<usize> {
        let s = self.w1().end;
        s..s + self.hidden_dim
    }
    pub fn w2(&self) -> Range<usize> {
        let s = self.b1().end;
        s..s + self.hidden_dim * self.hidden_dim
    }
    pub fn b2(&self) -> Range<usize> {
        let s = self.w2().end;
        s..s + self.hidden_dim
    }
    pub fn w3(&self) -> Range<usize> {
        let s = self.b2().end;
        s..s + self.hidden_dim
    }
    pub fn b3(&self) -> Range<usize> {
        let s = self.w3().end;
        s..s + 1
    }
    pub fn bn_scale(&self, site: usize) -> Range<usize> {
        let dims = self.bn_site_dims();
        let mut s = self.affine_len();
        for d in &dims[..site] {
            s += 2 * d;
        }
        s..s + dims[site]
    }
    pub fn bn_shift(&self, site: usize) -> Range<usize> {
        let r = self.bn_scale(site);
        let len = r.end - r.start;
        r.end..r.end + len
    }
}

/// Flat trainable parameter vector for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(shape: &NetworkShape) -> Self {
        ParamVector(vec![0.0; shape.param_len()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Running statistics for one normalization site.
#[derive(Debug, Clone, PartialEq)]
pub struct BnSite {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Running batch-norm statistics for all sites of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub sites: Vec<BnSite>,
    pub momentum: f64,
    pub epsilon: f64,
    pub update_count: u64,
}

pub const BN_DEFAULT_MOMENTUM: f64 = 0.99;
pub const BN_DEFAULT_EPSILON: f64 = 1e-3;

impl BatchNormState {
    pub fn new(shape: &NetworkShape, momentum: f64, epsilon: f64) -> Self {
        let sites = shape
            .bn_site_dims()
            .into_iter()
            .map(|d| BnSite {
                running_mean: vec![0.0; d],
                running_var: vec![1.0; d],
            })
            .collect();
        BatchNormState {
            sites,
            momentum,
            epsilon,
            update_count: 0,
        }
    }

    pub fn with_defaults(shape: &NetworkShape) -> Self {
        Self::new(shape, BN_DEFAULT_MOMENTUM, BN_DEFAULT_EPSILON)
    }
}

/// Per-site statistics observed on one training batch.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// New state with `running <- momentum * running + (1 - momentum) * batch`.
pub fn batchnorm_update_state(state: &BatchNormState, stats: &[BnBatchStats]) -> BatchNormState {
    assert_eq!(state.sites.len(), stats.len(), "site count mismatch");
    let m = state.momentum;
    let sites = state
        .sites
        .iter()
        .zip(stats)
        .map(|(site, s)| BnSite {
            running_mean: site
                .running_mean
                .iter()
                .zip(&s.mean)
                .map(|(r, b)| m * r + (1.0 - m) * b)
                .collect(),
            running_var: site
                .running_var
                .iter()
                .zip(&s.var)
                .map(|(r, b)| m * r + (1.0 - m) * b)
                .collect(),
        })
        .collect();
    BatchNormState {
        sites,
        momentum: state.momentum,
        epsilon: state.epsilon,
        update_count: state.update_count + 1,
    }
}

/// `W x + b` where `slice = [W row-major | b]` has length `l*k + l`.
pub fn affine_apply(slice: &[f64], k: usize, l: usize, x: &[f64]) -> Result<Vec<f64>> {
    if slice.len() != l * k + l {
        return Err(Error::Shape(format!(
            "affine slice length {} != l*k + l = {}",
            slice.len(),
            l * k + l
        )));
    }
    if x.len() != k {
        return Err(Error::Shape(format!(
            "affine input length {} != k = {}",
            x.len(),
            k
        )));
    }
    let (w, b) = slice.split_at(l * k);
    let mut out = vec![0.0; l];
    for r in 0..l {
        let row = &w[r * k..(r + 1) * k];
        let mut acc = b[r];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        out[r] = acc;
    }
    Ok(out)
}

/// Elementwise tanh.
pub fn tanh_apply(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Train-mode batch normalization with the current batch's (biased) statistics.
/// Returns the normalized batch together with the batch mean and variance.
pub fn batchnorm_train(
    batch: &Matrix,
    scale: &[f64],
    shift: &[f64],
    epsilon: f64,
) -> (Matrix, Vec<f64>, Vec<f64>) {
    assert!(batch.rows >= 1, "batch must be nonempty");
    let n = batch.rows as f64;
    let cols = batch.cols;
    let mut mean = vec![0.0; cols];
    for row in batch.iter_rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; cols];
    for row in batch.iter_rows() {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    for v in var.iter_mut() {
        *v /= n;
    }
    let mut out = Matrix::zeros(batch.rows, cols);
    for i in 0..batch.rows {
        let src = batch.row(i);
        let dst = out.row_mut(i);
        for f in 0..cols {
            let xhat = (src[f] - mean[f]) / (var[f] + epsilon).sqrt();
            dst[f] = scale[f] * xhat + shift[f];
        }
    }
    (out, mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform on `[-sqrt(3/fan_in), sqrt(3/fan_in)]` (variance `1/fan_in`).
    Uniform,
    /// Normal with variance `1/fan_in`.
    Normal,
}

/// Fresh parameters: fan-in scaled weights, zero biases, BN scale 1 / shift 0.
pub fn init_params(
    stream: &mut RngStream,
    shape: &NetworkShape,
    scheme: InitScheme,
) -> ParamVector {
    let mut theta = vec![0.0; shape.param_len()];
    let fans = [
        (shape.w1(), shape.input_dim),
        (shape.w2(), shape.hidden_dim),
        (shape.w3(), shape.hidden_dim),
    ];
    for (range, fan_in) in fans {
        let sd = (1.0 / fan_in as f64).sqrt();
        let bound = (3.0f64 / fan_in as f64).sqrt();
        for v in &mut theta[range] {
            *v = match scheme {
                InitScheme::Uniform => stream.next_range(-bound, bound),
                InitScheme::Normal => sd * stream.next_std_normal(),
            };
        }
    }
    for site in 0..shape.bn_site_dims().len() {
        for v in &mut theta[shape.bn_scale(site)] {
            *v = 1.0;
        }
    }
    ParamVector(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_stream;

    #[test]
    fn param_len_matches_formula() {
        for d in [1usize, 5, 10] {
            let shape = NetworkShape::standard(d);
            let h = d + 50;
            let expected = h * (d + 1) + h * (h + 1) + (h + 1) + 2 * (d + 2 * h);
            assert_eq!(shape.param_len(), expected);
            assert_eq!(shape.b3().end, shape.affine_len());
            assert_eq!(shape.bn_shift(2).end, shape.param_len());
        }
    }

    #[test]
    fn affine_zero_slice() {
        let slice = vec![0.0; 2 * 3 + 2];
        let out = affine_apply(&slice, 3, 2, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn affine_identity() {
        // k = l = 2, W = I, b = 0
        let slice = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let out = affine_apply(&slice, 2, 2, &[3.0, -1.0]).unwrap();
        assert_eq!(out, vec![3.0, -1.0]);
    }

    #[test]
    fn affine_hand_computed() {
        // k = 2, l = 1: W = (1, 2), b = 5, x = (3, 4) -> 1*3 + 2*4 + 5 = 16
        let out = affine_apply(&[1.0, 2.0, 5.0], 2, 1, &[3.0, 4.0]).unwrap();
        assert_eq!(out, vec![16.0]);
    }

    #[test]
    fn affine_shape_error() {
        assert!(affine_apply(&[1.0, 2.0], 2, 1, &[3.0, 4.0]).is_err());
        assert!(affine_apply(&[1.0, 2.0, 5.0], 2, 1, &[3.0]).is_err());
    }

    #[test]
    fn tanh_values() {
        assert_eq!(tanh_apply(&[0.0, 0.0]), vec![0.0, 0.0]);
        let v = tanh_apply(&[1.0]);
        assert!((v[0] - 0.7615941559557649).abs() < 1e-15);
        for x in [0.3, 1.7, -2.4] {
            assert_eq!(tanh_apply(&[-x])[0], -tanh_apply(&[x])[0]);
        }
    }

    #[test]
    fn batchnorm_standardized_batch() {
        let batch = Matrix::from_rows(&[vec![-1.0], vec![1.0]]);
        let (out, mean, var) = batchnorm_train(&batch, &[1.0], &[0.0], 1e-12);
        assert_eq!(mean, vec![0.0]);
        assert_eq!(var, vec![1.0]);
        assert!((out.row(0)[0] + 1.0).abs() < 1e-6);
        assert!((out.row(1)[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn batchnorm_constant_batch() {
        let batch = Matrix::from_rows(&[vec![3.0, 3.0], vec![3.0, 3.0], vec![3.0, 3.0]]);
        let (out, _, var) = batchnorm_train(&batch, &[2.0, 5.0], &[7.0, -1.0], 1e-3);
        assert_eq!(var, vec![0.0, 0.0]);
        for i in 0..3 {
            assert_eq!(out.row(i), &[7.0, -1.0]);
        }
    }

    #[test]
    fn batchnorm_hand_computed() {
        // batch {1, 3}: mean 2, biased var 1; scale 2, shift 1 -> {-1, 3}
        let batch = Matrix::from_rows(&[vec![1.0], vec![3.0]]);
        let (out, mean, var) = batchnorm_train(&batch, &[2.0], &[1.0], 0.0);
        assert_eq!(mean, vec![2.0]);
        assert_eq!(var, vec![1.0]);
        assert!((out.row(0)[0] + 1.0).abs() < 1e-12);
        assert!((out.row(1)[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bn_state_update_extremes() {
        let shape = NetworkShape::standard(1);
        let state = BatchNormState::with_defaults(&shape);
        let stats: Vec<BnBatchStats> = shape
            .bn_site_dims()
            .into_iter()
            .map(|d| BnBatchStats {
                mean: vec![1.0; d],
                var: vec![2.0; d],
            })
            .collect();

        let mut zero_momentum = state.clone();
        zero_momentum.momentum = 0.0;
        let s0 = batchnorm_update_state(&zero_momentum, &stats);
        assert_eq!(s0.sites[0].running_mean, vec![1.0]);
        assert_eq!(s0.sites[0].running_var, vec![2.0]);
        assert_eq!(s0.update_count, 1);

        let mut one_momentum = state.clone();
        one_momentum.momentum = 1.0;
        let s1 = batchnorm_update_state(&one_momentum, &stats);
        assert_eq!(s1.sites, state.sites);

        let s99 = batchnorm_update_state(&state, &stats);
        assert!((s99.sites[0].running_mean[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn init_conventions() {
        let shape = NetworkShape::standard(10);
        let mut stream = make_stream(1, 0);
        let theta = init_params(&mut stream, &shape, InitScheme::Uniform);
        for site in 0..3 {
            assert!(theta.0[shape.bn_scale(site)].iter().all(|&v| v == 1.0));
            assert!(theta.0[shape.bn_shift(site)].iter().all(|&v| v == 0.0));
        }
        assert!(theta.0[shape.b1()].iter().all(|&v| v == 0.0));

        let mut other = make_stream(1, 1);
        let theta2 = init_params(&mut other, &shape, InitScheme::Uniform);
        assert_ne!(theta.0[shape.w1()], theta2.0[shape.w1()]);
    }

    #[test]
    fn init_variance_near_nominal() {
        let shape = NetworkShape::standard(10);
        for scheme in [InitScheme::Uniform, InitScheme::Normal] {
            let mut stream = make_stream(3, 9);
            let theta = init_params(&mut stream, &shape, scheme);
            // fan_in of the second affine block is hidden_dim = 60
            let w2 = &theta.0[shape.w2()];
            let nominal = 1.0 / shape.hidden_dim as f64;
            let var = w2.iter().map(|v| v * v).sum::<f64>() / w2.len() as f64;
            assert!(
                (var - nominal).abs() <= 0.2 * nominal,
                "{scheme:?}: var {var} vs nominal {nominal}"
            );
        }
    }
}
