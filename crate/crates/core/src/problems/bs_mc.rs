//! Monte-Carlo oracle for the Black-Scholes reference solution: the
//! Gaussian-integral representation of `v(t, x)` evaluated with antithetic
//! sampling, and the pathwise reference `exp(W_t - t/2) v(t, x)`.

use super::BsCoefficients;
use crate::rng::RngStream;

/// Estimates `v(t, x) = E[payoff(x_1 exp(sigma_1 y_1 + (mu_1 - sigma_1^2/2) t), ...)]`
/// with `y ~ N(0, t I)` using `n_pairs` antithetic pairs. Returns the
/// estimate and its standard error. `t = 0` returns the payoff exactly.
pub fn bs_v_with_payoff(
    coeff: &BsCoefficients,
    payoff: &dyn Fn(&[f64]) -> f64,
    t: f64,
    x: &[f64],
    n_pairs: usize,
    stream: &mut RngStream,
) -> (f64, f64) {
    if t == 0.0 {
        return (payoff(x), 0.0);
    }
    let d = x.len();
    let sqrt_t = t.sqrt();
    let drift: Vec<f64> = coeff
        .drift
        .iter()
        .zip(&coeff.vol)
        .map(|(mu, sig)| (mu - 0.5 * sig * sig) * t)
        .collect();
    let mut pushed = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n_pairs {
        stream.fill_std_normal(&mut y);
        let mut pair = 0.0;
        for sign in [1.0, -1.0] {
            for i in 0..d {
                pushed[i] = x[i] * (coeff.vol[i] * sign * sqrt_t * y[i] + drift[i]).exp();
            }
            pair += 0.5 * payoff(&pushed);
        }
        sum += pair;
        sumsq += pair * pair;
    }
    let n = n_pairs as f64;
    let mean = sum / n;
    let var = (sumsq / n - mean * mean).max(0.0);
    let se = if n_pairs > 1 {
        (var / (n - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    (mean, se)
}

/// As `bs_v_with_payoff` with the problem's own discounted payoff.
pub fn bs_v(
    coeff: &BsCoefficients,
    t: f64,
    x: &[f64],
    n_pairs: usize,
    stream: &mut RngStream,
) -> (f64, f64) {
    bs_v_with_payoff(coeff, &|p| coeff.payoff(p), t, x, n_pairs, stream)
}

/// Pathwise reference `X_t(x) = exp(W_t - t/2) v(t, x)`; returns the value
/// and the propagated standard error.
pub fn reference_bs(
    coeff: &BsCoefficients,
    t: f64,
    x: &[f64],
    w_t: f64,
    n_pairs: usize,
    stream: &mut RngStream,
) -> (f64, f64) {
    let (v, se) = bs_v(coeff, t, x, n_pairs, stream);
    let factor = (w_t - 0.5 * t).exp();
    (factor * v, factor * se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_stream;

    fn coeff(d: usize) -> BsCoefficients {
        BsCoefficients::new(d, 0.02, 0.5)
    }

    #[test]
    fn short_horizon_approaches_payoff() {
        // at-the-money is the worst case (value decays only like sqrt(t))
        let c = coeff(1);
        let x = vec![100.0];
        let phi = c.payoff(&x);
        let mut s = make_stream(90, 0);
        let (v, _) = bs_v(&c, 1e-6, &x, 100_000, &mut s);
        assert!((v - phi).abs() <= 1e-2 * (1.0 + phi.abs()), "{v} vs {phi}");
        // t = 0 is exact
        let (v0, se0) = bs_v(&c, 0.0, &x, 10, &mut s);
        assert_eq!(v0, phi);
        assert_eq!(se0, 0.0);
    }

    #[test]
    fn constant_payoff_integrates_to_constant() {
        let c = coeff(2);
        let mut s = make_stream(91, 0);
        let (v, se) = bs_v_with_payoff(&c, &|_| 7.25, 0.5, &[100.0, 100.0], 1000, &mut s);
        assert_eq!(v, 7.25);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn matches_plain_monte_carlo() {
        // d = 1, t = 0.5, x = 100 against an independent non-antithetic
        // estimator with its own stream.
        let c = coeff(1);
        let mut s = make_stream(92, 0);
        let (v, se) = bs_v(&c, 0.5, &[100.0], 200_000, &mut s);

        let mut s2 = make_stream(93, 0);
        let n = 1_000_000;
        let drift = (c.drift[0] - 0.5 * c.vol[0] * c.vol[0]) * 0.5;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let y = 0.5f64.sqrt() * s2.next_std_normal();
            let val = c.payoff(&[100.0 * (c.vol[0] * y + drift).exp()]);
            sum += val;
            sumsq += val * val;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let se2 = (var / n as f64).sqrt();
        let combined = (se * se + se2 * se2).sqrt();
        assert!(
            (v - mean).abs() <= 3.0 * combined,
            "{v} vs {mean} (se {combined})"
        );
    }

    #[test]
    fn reference_reduces_to_v_when_exponent_vanishes() {
        let c = coeff(2);
        let x = [100.0, 100.0];
        let t = 0.5;
        let (v, _) = bs_v(&c, t, &x, 5000, &mut make_stream(94, 7));
        let (r, _) = reference_bs(&c, t, &x, t / 2.0, 5000, &mut make_stream(94, 7));
        assert!((r - v).abs() < 1e-12);

        let (r0, _) = reference_bs(&c, 0.0, &x, 0.0, 10, &mut make_stream(94, 8));
        assert_eq!(r0, c.payoff(&x));

        // plug-in scaling: W = 0 gives exp(-t/2) v
        let (v2, _) = bs_v(&c, t, &x, 5000, &mut make_stream(94, 9));
        let (r2, _) = reference_bs(&c, t, &x, 0.0, 5000, &mut make_stream(94, 9));
        assert!((r2 - (-0.25f64).exp() * v2).abs() < 1e-12);
    }
}
