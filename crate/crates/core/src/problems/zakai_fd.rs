//! Independent finite-difference oracle for the one-dimensional Zakai
//! equation: operator splitting with a Crank-Nicolson Fokker-Planck
//! half-step and a pathwise exponential update for the observation term.

use super::ZakaiCoefficients;
use crate::error::{Error, Result};
use crate::paths::{NoiseRealization, TimeGrid};

#[derive(Debug, Clone)]
pub struct ZakaiFdOptions {
    /// Domain half-width is `half_width_factor * (alpha^{-1/2} + sqrt(T))`.
    pub half_width_factor: f64,
    pub n_space: usize,
    /// Fine Crank-Nicolson substeps per coarse step.
    pub substeps: usize,
}

impl Default for ZakaiFdOptions {
    fn default() -> Self {
        ZakaiFdOptions {
            half_width_factor: 6.0,
            n_space: 2048,
            substeps: 16,
        }
    }
}

/// Solves a tridiagonal system in place (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c_star = vec![0.0; n];
    let mut d_star = vec![0.0; n];
    c_star[0] = upper[0] / diag[0];
    d_star[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c_star[i - 1];
        c_star[i] = upper[i] / m;
        d_star[i] = (rhs[i] - lower[i] * d_star[i - 1]) / m;
    }
    rhs[n - 1] = d_star[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = d_star[i] - c_star[i] * rhs[i + 1];
    }
}

/// Evolves the unnormalized filtering density from the Gaussian initial
/// condition through the given noise realization and returns its value at
/// `x_eval` by linear interpolation. Errors if significant mass reaches the
/// truncated boundary.
pub fn reference_zakai_1d(
    coeff: &ZakaiCoefficients,
    grid: &TimeGrid,
    z: &NoiseRealization,
    x_eval: f64,
    opts: &ZakaiFdOptions,
) -> Result<f64> {
    if z.delta != 1 {
        return Err(Error::InvalidArgument(
            "finite-difference oracle requires d = 1".into(),
        ));
    }
    if z.steps() != grid.steps {
        return Err(Error::Shape("noise realization does not match grid".into()));
    }
    let n = opts.n_space;
    let half_width = opts.half_width_factor * (coeff.alpha.sqrt().recip() + grid.t_final.sqrt());
    let dx = 2.0 * half_width / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| -half_width + i as f64 * dx).collect();

    let mut p: Vec<f64> = xs.iter().map(|&x| coeff.initial_density(&[x])).collect();
    let mu: Vec<f64> = xs.iter().map(|&x| coeff.mu(&[x])[0]).collect();

    // Fokker-Planck generator A p = 1/2 p'' - (mu p)', central differences,
    // homogeneous Dirichlet boundary.
    let dt = grid.dt();
    let dt_sub = dt / opts.substeps as f64;
    let half = 0.5 * dt_sub;
    let inv_dx2 = 1.0 / (dx * dx);
    let inv_2dx = 1.0 / (2.0 * dx);
    // A row i: c_lo(i) p_{i-1} + c_mid p_i + c_hi(i) p_{i+1}
    let c_mid = -inv_dx2;
    let c_lo: Vec<f64> = (0..n)
        .map(|i| 0.5 * inv_dx2 + if i > 0 { mu[i - 1] * inv_2dx } else { 0.0 })
        .collect();
    let c_hi: Vec<f64> = (0..n)
        .map(|i| 0.5 * inv_dx2 - if i + 1 < n { mu[i + 1] * inv_2dx } else { 0.0 })
        .collect();
    let lower: Vec<f64> = c_lo.iter().map(|c| -half * c).collect();
    let diag: Vec<f64> = vec![1.0 - half * c_mid; n];
    let upper: Vec<f64> = c_hi.iter().map(|c| -half * c).collect();

    let mut rhs = vec![0.0; n];
    for step in 1..=grid.steps {
        for _ in 0..opts.substeps {
            rhs[0] = p[0] + half * (c_mid * p[0] + c_hi[0] * p[1]);
            for i in 1..n - 1 {
                rhs[i] = p[i] + half * (c_lo[i] * p[i - 1] + c_mid * p[i] + c_hi[i] * p[i + 1]);
            }
            rhs[n - 1] = p[n - 1] + half * (c_lo[n - 1] * p[n - 2] + c_mid * p[n - 1]);
            thomas(&lower, &diag, &upper, &mut rhs);
            std::mem::swap(&mut p, &mut rhs);
        }
        let dz = z.increment(step)[0];
        for (pi, &x) in p.iter_mut().zip(&xs) {
            let h = coeff.beta * x;
            *pi *= (h * dz - 0.5 * h * h * dt).exp();
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("Zakai oracle at step {step}"),
            });
        }
    }

    let peak = p.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    let edge = n / 100 + 1;
    let boundary = p[..edge]
        .iter()
        .chain(&p[n - edge..])
        .cloned()
        .fold(0.0f64, |a, b| a.max(b.abs()));
    if peak == 0.0 || boundary > 1e-6 * peak {
        return Err(Error::Oracle(format!(
            "truncated domain too small: boundary/peak = {:e}",
            boundary / peak.max(f64::MIN_POSITIVE)
        )));
    }

    if !(xs[0]..=xs[n - 1]).contains(&x_eval) {
        return Err(Error::InvalidArgument(
            "evaluation point outside oracle domain".into(),
        ));
    }
    let pos = (x_eval - xs[0]) / dx;
    let i = (pos.floor() as usize).min(n - 2);
    let frac = pos - i as f64;
    Ok(p[i] * (1.0 - frac) + p[i + 1] * frac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{make_grid, sample_noise};
    use crate::problems::{ProblemId, SpdeProblem};
    use crate::rng::make_stream;

    #[test]
    fn gaussian_closed_form_when_noise_and_drift_vanish() {
        // beta = 0, mu = 0: pure heat evolution of N(0, alpha^{-1}); the
        // value at 0 after time T is the N(0, alpha^{-1} + T) density at 0.
        let mut c = ZakaiCoefficients::default();
        c.beta = 0.0;
        c.gamma = 0.0;
        let grid = make_grid(0.5, 25).unwrap();
        let p = SpdeProblem::preset(ProblemId::Zakai, 1);
        let z = sample_noise(&p, &grid, &mut make_stream(30, 0));
        let v = reference_zakai_1d(&c, &grid, &z, 0.0, &ZakaiFdOptions::default()).unwrap();
        let want = (2.0 * std::f64::consts::PI * (c.alpha.recip() + 0.5))
            .sqrt()
            .recip();
        assert!((v - want).abs() / want < 1e-3, "{v} vs {want}");
    }

    #[test]
    fn self_convergence_under_refinement() {
        let c = ZakaiCoefficients::default();
        let grid = make_grid(0.5, 25).unwrap();
        let p = SpdeProblem::preset(ProblemId::Zakai, 1);
        let z = sample_noise(&p, &grid, &mut make_stream(31, 0));
        let coarse = ZakaiFdOptions::default();
        let fine = ZakaiFdOptions {
            half_width_factor: 6.0,
            n_space: 4096,
            substeps: 32,
        };
        let a = reference_zakai_1d(&c, &grid, &z, 0.0, &coarse).unwrap();
        let b = reference_zakai_1d(&c, &grid, &z, 0.0, &fine).unwrap();
        assert!((a - b).abs() / b.abs() <= 0.005, "{a} vs {b}");
    }

    #[test]
    fn magnitude_for_typical_paths() {
        let c = ZakaiCoefficients::default();
        let grid = make_grid(0.5, 25).unwrap();
        let p = SpdeProblem::preset(ProblemId::Zakai, 1);
        for seed in [32u64, 33, 34] {
            let z = sample_noise(&p, &grid, &mut make_stream(seed, 0));
            let v = reference_zakai_1d(&c, &grid, &z, 0.0, &ZakaiFdOptions::default()).unwrap();
            assert!((0.3..=0.7).contains(&v), "seed {seed}: {v}");
        }
    }

    #[test]
    fn rejects_undersized_domain() {
        let c = ZakaiCoefficients::default();
        let grid = make_grid(0.5, 25).unwrap();
        let p = SpdeProblem::preset(ProblemId::Zakai, 1);
        let z = sample_noise(&p, &grid, &mut make_stream(35, 0));
        let tiny = ZakaiFdOptions {
            half_width_factor: 0.5,
            n_space: 256,
            substeps: 16,
        };
        assert!(reference_zakai_1d(&c, &grid, &z, 0.0, &tiny).is_err());
    }
}
