use super::forward::{infer_with_activations, ForwardCache};
use super::{BatchNormState, NetworkShape, ParamVector};
use crate::error::Result;
use crate::linalg::Matrix;

/// Reverse-mode BN step: batch statistics are differentiated as functions of
/// the batch (full batch-norm backprop, no stop-gradient).
fn bn_backward(
    dy: &Matrix,
    xhat: &Matrix,
    var: &[f64],
    scale: &[f64],
    eps: f64,
    dscale: &mut [f64],
    dshift: &mut [f64],
) -> Matrix {
    let rows = dy.rows;
    let cols = dy.cols;
    let n = rows as f64;
    let mut dx = Matrix::zeros(rows, cols);
    for f in 0..cols {
        let inv_std = 1.0 / (var[f] + eps).sqrt();
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for b in 0..rows {
            let dxh = dy.row(b)[f] * scale[f];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat.row(b)[f];
            dscale[f] += dy.row(b)[f] * xhat.row(b)[f];
            dshift[f] += dy.row(b)[f];
        }
        for b in 0..rows {
            let dxh = dy.row(b)[f] * scale[f];
            dx.row_mut(b)[f] =
                inv_std / n * (n * dxh - sum_dxhat - xhat.row(b)[f] * sum_dxhat_xhat);
        }
    }
    dx
}

/// `dW[r][i] += sum_b dz[b][r] * input[b][i]`, `db[r] += sum_b dz[b][r]`,
/// returns `dinput[b][i] = sum_r dz[b][r] * W[r][i]`.
fn affine_backward(
    w: &[f64],
    input: &Matrix,
    dz: &Matrix,
    dw: &mut [f64],
    db: &mut [f64],
) -> Matrix {
    let k = input.cols;
    let l = dz.cols;
    let mut dinput = Matrix::zeros(input.rows, k);
    for b in 0..input.rows {
        let x = input.row(b);
        let g = dz.row(b);
        let dxr = dinput.row_mut(b);
        for r in 0..l {
            let gr = g[r];
            db[r] += gr;
            let wrow = &w[r * k..(r + 1) * k];
            let dwrow = &mut dw[r * k..(r + 1) * k];
            for i in 0..k {
                dwrow[i] += gr * x[i];
                dxr[i] += gr * wrow[i];
            }
        }
    }
    dinput
}

fn tanh_backward(du: &Matrix, u: &Matrix) -> Matrix {
    let mut dy = Matrix::zeros(du.rows, du.cols);
    for (o, (g, v)) in dy
        .as_mut_slice()
        .iter_mut()
        .zip(du.as_slice().iter().zip(u.as_slice()))
    {
        *o = g * (1.0 - v * v);
    }
    dy
}

/// Exact gradient of the network outputs contracted with per-sample output
/// weights `dout` (e.g. `2 (out_j - target_j) / J` for a mean-squared loss).
/// Returns the parameter gradient in `ParamVector` layout together with the
/// gradient with respect to the input batch.
pub fn net_param_grad(
    shape: &NetworkShape,
    theta: &ParamVector,
    cache: &ForwardCache,
    dout: &[f64],
    epsilon: f64,
) -> (ParamVector, Matrix) {
    assert_eq!(dout.len(), cache.outputs.len(), "dout length mismatch");
    let p = theta.as_slice();
    let mut grad = vec![0.0; shape.param_len()];
    let rows = cache.u2.rows;
    let h = shape.hidden_dim;

    // output layer
    let w3 = &p[shape.w3()];
    let mut du2 = Matrix::zeros(rows, h);
    {
        let (gw3, gb3) = (shape.w3(), shape.b3());
        for b_idx in 0..rows {
            let g = dout[b_idx];
            grad[gb3.start] += g;
            let u2row = cache.u2.row(b_idx);
            let du2row = du2.row_mut(b_idx);
            for r in 0..h {
                grad[gw3.start + r] += g * u2row[r];
                du2row[r] = g * w3[r];
            }
        }
    }

    let dy2 = tanh_backward(&du2, &cache.u2);
    let dz2 = if shape.batch_norm {
        let c = &cache.bn[2];
        let (sr, hr) = (shape.bn_scale(2), shape.bn_shift(2));
        let mut dscale = vec![0.0; h];
        let mut dshift = vec![0.0; h];
        let dz = bn_backward(
            &dy2,
            &c.xhat,
            &c.var,
            &p[sr.clone()],
            epsilon,
            &mut dscale,
            &mut dshift,
        );
        grad[sr].copy_from_slice(&dscale);
        grad[hr].copy_from_slice(&dshift);
        dz
    } else {
        dy2
    };

    let du1 = {
        let (mut dw2, mut db2) = (vec![0.0; h * h], vec![0.0; h]);
        let d = affine_backward(&p[shape.w2()], &cache.u1, &dz2, &mut dw2, &mut db2);
        grad[shape.w2()].copy_from_slice(&dw2);
        grad[shape.b2()].copy_from_slice(&db2);
        d
    };

    let dy1 = tanh_backward(&du1, &cache.u1);
    let dz1 = if shape.batch_norm {
        let c = &cache.bn[1];
        let (sr, hr) = (shape.bn_scale(1), shape.bn_shift(1));
        let mut dscale = vec![0.0; h];
        let mut dshift = vec![0.0; h];
        let dz = bn_backward(
            &dy1,
            &c.xhat,
            &c.var,
            &p[sr.clone()],
            epsilon,
            &mut dscale,
            &mut dshift,
        );
        grad[sr].copy_from_slice(&dscale);
        grad[hr].copy_from_slice(&dshift);
        dz
    } else {
        dy1
    };

    let da1_in = {
        let (mut dw1, mut db1) = (vec![0.0; h * shape.input_dim], vec![0.0; h]);
        let d = affine_backward(&p[shape.w1()], &cache.a1_in, &dz1, &mut dw1, &mut db1);
        grad[shape.w1()].copy_from_slice(&dw1);
        grad[shape.b1()].copy_from_slice(&db1);
        d
    };

    let dinput = if shape.batch_norm {
        let c = &cache.bn[0];
        let (sr, hr) = (shape.bn_scale(0), shape.bn_shift(0));
        let mut dscale = vec![0.0; shape.input_dim];
        let mut dshift = vec![0.0; shape.input_dim];
        let dz = bn_backward(
            &da1_in,
            &c.xhat,
            &c.var,
            &p[sr.clone()],
            epsilon,
            &mut dscale,
            &mut dshift,
        );
        grad[sr].copy_from_slice(&dscale);
        grad[hr].copy_from_slice(&dshift);
        dz
    } else {
        da1_in
    };

    (ParamVector(grad), dinput)
}

/// Gradient of the scalar inference-mode output with respect to the input.
pub fn net_input_grad(
    shape: &NetworkShape,
    theta: &ParamVector,
    state: &BatchNormState,
    x: &[f64],
) -> Result<Vec<f64>> {
    let (_, cache) = infer_with_activations(shape, theta, state, x)?;
    let p = theta.as_slice();
    let h = shape.hidden_dim;
    let eps = state.epsilon;

    // In inference mode each BN site is a fixed diagonal affine map.
    let bn_diag = |site: usize| -> Vec<f64> {
        let scale = &p[shape.bn_scale(site)];
        let s = &state.sites[site];
        scale
            .iter()
            .zip(&s.running_var)
            .map(|(sc, rv)| sc / (rv + eps).sqrt())
            .collect()
    };

    let w3 = &p[shape.w3()];
    let mut dy2: Vec<f64> = w3
        .iter()
        .zip(&cache.u2)
        .map(|(w, u)| w * (1.0 - u * u))
        .collect();
    if shape.batch_norm {
        for (g, d) in dy2.iter_mut().zip(bn_diag(2)) {
            *g *= d;
        }
    }
    let w2 = &p[shape.w2()];
    let mut du1 = vec![0.0; h];
    for r in 0..h {
        let g = dy2[r];
        for i in 0..h {
            du1[i] += g * w2[r * h + i];
        }
    }
    let mut dy1: Vec<f64> = du1
        .iter()
        .zip(&cache.u1)
        .map(|(g, u)| g * (1.0 - u * u))
        .collect();
    if shape.batch_norm {
        for (g, d) in dy1.iter_mut().zip(bn_diag(1)) {
            *g *= d;
        }
    }
    let w1 = &p[shape.w1()];
    let d = shape.input_dim;
    let mut dx = vec![0.0; d];
    for r in 0..h {
        let g = dy1[r];
        for i in 0..d {
            dx[i] += g * w1[r * d + i];
        }
    }
    if shape.batch_norm {
        for (g, diag) in dx.iter_mut().zip(bn_diag(0)) {
            *g *= diag;
        }
    }
    Ok(dx)
}
