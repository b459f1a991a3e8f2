use super::{BatchNormState, BnBatchStats, NetworkShape, ParamVector};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Intermediate quantities of one train-mode forward pass, sufficient for
/// exact reverse-mode differentiation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(super) bn: Vec<BnCache>,
    /// Input to the first affine map (post input-BN, or the raw batch).
    pub(super) a1_in: Matrix,
    /// tanh outputs of the first hidden layer (input to the second affine map).
    pub(super) u1: Matrix,
    /// tanh outputs of the second hidden layer (input to the output map).
    pub(super) u2: Matrix,
    pub outputs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(super) struct BnCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Normalized values before scale/shift.
    pub xhat: Matrix,
}

impl ForwardCache {
    /// Batch statistics at each normalization site, for the running-state update.
    pub fn bn_stats(&self) -> Vec<BnBatchStats> {
        self.bn
            .iter()
            .map(|c| BnBatchStats {
                mean: c.mean.clone(),
                var: c.var.clone(),
            })
            .collect()
    }
}

fn bn_train_cached(batch: &Matrix, scale: &[f64], shift: &[f64], eps: f64) -> (Matrix, BnCache) {
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
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = Matrix::zeros(batch.rows, cols);
    let mut out = Matrix::zeros(batch.rows, cols);
    for i in 0..batch.rows {
        let src = batch.row(i);
        for f in 0..cols {
            let h = (src[f] - mean[f]) * inv_std[f];
            xhat.row_mut(i)[f] = h;
            out.row_mut(i)[f] = scale[f] * h + shift[f];
        }
    }
    (out, BnCache { mean, var, xhat })
}

fn affine_batch(w: &[f64], b: &[f64], input: &Matrix, out_dim: usize) -> Matrix {
    let k = input.cols;
    let mut out = Matrix::zeros(input.rows, out_dim);
    for i in 0..input.rows {
        let x = input.row(i);
        let dst = out.row_mut(i);
        for r in 0..out_dim {
            let row = &w[r * k..(r + 1) * k];
            let mut acc = b[r];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            dst[r] = acc;
        }
    }
    out
}

fn check_finite(m: &Matrix, context: &str) -> Result<()> {
    if m.as_slice().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
        })
    }
}

/// Train-mode forward pass over a batch, normalizing with the batch's own
/// statistics at every site.
pub fn net_forward_train(
    shape: &NetworkShape,
    theta: &ParamVector,
    batch: &Matrix,
    epsilon: f64,
) -> Result<(Vec<f64>, ForwardCache)> {
    if batch.cols != shape.input_dim {
        return Err(Error::Shape(format!(
            "batch width {} != input_dim {}",
            batch.cols, shape.input_dim
        )));
    }
    if theta.len() != shape.param_len() {
        return Err(Error::Shape(format!(
            "param length {} != expected {}",
            theta.len(),
            shape.param_len()
        )));
    }
    let p = theta.as_slice();
    let mut bn = Vec::new();

    let a1_in = if shape.batch_norm {
        let (y, c) = bn_train_cached(batch, &p[shape.bn_scale(0)], &p[shape.bn_shift(0)], epsilon);
        bn.push(c);
        y
    } else {
        batch.clone()
    };

    let z1 = affine_batch(&p[shape.w1()], &p[shape.b1()], &a1_in, shape.hidden_dim);
    check_finite(&z1, "affine layer 1")?;
    let y1 = if shape.batch_norm {
        let (y, c) = bn_train_cached(&z1, &p[shape.bn_scale(1)], &p[shape.bn_shift(1)], epsilon);
        bn.push(c);
        y
    } else {
        z1
    };
    let mut u1 = y1;
    for v in u1.as_mut_slice() {
        *v = v.tanh();
    }

    let z2 = affine_batch(&p[shape.w2()], &p[shape.b2()], &u1, shape.hidden_dim);
    check_finite(&z2, "affine layer 2")?;
    let y2 = if shape.batch_norm {
        let (y, c) = bn_train_cached(&z2, &p[shape.bn_scale(2)], &p[shape.bn_shift(2)], epsilon);
        bn.push(c);
        y
    } else {
        z2
    };
    let mut u2 = y2;
    for v in u2.as_mut_slice() {
        *v = v.tanh();
    }

    let w3 = &p[shape.w3()];
    let b3 = p[shape.b3()][0];
    let mut outputs = Vec::with_capacity(batch.rows);
    for i in 0..batch.rows {
        let mut acc = b3;
        for (wi, xi) in w3.iter().zip(u2.row(i)) {
            acc += wi * xi;
        }
        outputs.push(acc);
    }
    if !outputs.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "output layer".to_string(),
        });
    }
    Ok((
        outputs.clone(),
        ForwardCache {
            bn,
            a1_in,
            u1,
            u2,
            outputs,
        },
    ))
}

/// Activations of an inference-mode pass at a single point, kept for the
/// input-gradient computation.
#[derive(Debug, Clone)]
pub(super) struct InferCache {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

pub(super) fn infer_with_activations(
    shape: &NetworkShape,
    theta: &ParamVector,
    state: &BatchNormState,
    x: &[f64],
) -> Result<(f64, InferCache)> {
    if x.len() != shape.input_dim {
        return Err(Error::Shape(format!(
            "input length {} != input_dim {}",
            x.len(),
            shape.input_dim
        )));
    }
    let p = theta.as_slice();
    let eps = state.epsilon;
    let bn_apply = |site: usize, v: &[f64]| -> Vec<f64> {
        let s = &state.sites[site];
        let scale = &p[shape.bn_scale(site)];
        let shift = &p[shape.bn_shift(site)];
        v.iter()
            .enumerate()
            .map(|(f, x)| {
                scale[f] * (x - s.running_mean[f]) / (s.running_var[f] + eps).sqrt() + shift[f]
            })
            .collect()
    };

    let y0 = if shape.batch_norm {
        bn_apply(0, x)
    } else {
        x.to_vec()
    };
    let z1 = super::affine_apply(
        &p[shape.w1().start..shape.b1().end],
        shape.input_dim,
        shape.hidden_dim,
        &y0,
    )?;
    let y1 = if shape.batch_norm {
        bn_apply(1, &z1)
    } else {
        z1
    };
    let u1: Vec<f64> = y1.iter().map(|v| v.tanh()).collect();
    let z2 = super::affine_apply(
        &p[shape.w2().start..shape.b2().end],
        shape.hidden_dim,
        shape.hidden_dim,
        &u1,
    )?;
    let y2 = if shape.batch_norm {
        bn_apply(2, &z2)
    } else {
        z2
    };
    let u2: Vec<f64> = y2.iter().map(|v| v.tanh()).collect();
    let w3 = &p[shape.w3()];
    let mut out = p[shape.b3()][0];
    for (wi, xi) in w3.iter().zip(&u2) {
        out += wi * xi;
    }
    if !out.is_finite() {
        return Err(Error::NonFinite {
            context: "output layer (inference)".to_string(),
        });
    }
    Ok((out, InferCache { u1, u2 }))
}

/// Single-point forward pass using the frozen running statistics.
pub fn net_forward_infer(
    shape: &NetworkShape,
    theta: &ParamVector,
    state: &BatchNormState,
    x: &[f64],
) -> Result<f64> {
    infer_with_activations(shape, theta, state, x).map(|(v, _)| v)
}
