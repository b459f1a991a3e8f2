//! The four benchmark SPDEs: coefficients, one-step transition maps for the
//! auxiliary diffusion, per-step regression target maps, training defaults,
//! and reference-solution oracles.

mod bs_mc;
mod zakai_fd;

pub use bs_mc::{bs_v, bs_v_with_payoff, reference_bs};
pub use zakai_fd::{reference_zakai_1d, ZakaiFdOptions};

use crate::error::{Error, Result};
use crate::optim::LrSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemId {
    HeatAdditive,
    HeatMultiplicative,
    BlackScholes,
    Zakai,
}

impl ProblemId {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "heat-add" => Ok(ProblemId::HeatAdditive),
            "heat-mul" => Ok(ProblemId::HeatMultiplicative),
            "black-scholes" => Ok(ProblemId::BlackScholes),
            "zakai" => Ok(ProblemId::Zakai),
            _ => Err(Error::Config(format!(
                "unknown problem '{s}' (expected heat-add, heat-mul, black-scholes, zakai)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ProblemId::HeatAdditive => "heat-add",
            ProblemId::HeatMultiplicative => "heat-mul",
            ProblemId::BlackScholes => "black-scholes",
            ProblemId::Zakai => "zakai",
        }
    }
}

/// Black-Scholes coefficients: `r = 1/50`, `mu_i = (sin(i d) + 1)/d`,
/// `sigma_i = i/(4d)` for `i = 1..d`, discounted rainbow payoff with
/// strike 100.
#[derive(Debug, Clone)]
pub struct BsCoefficients {
    pub rate: f64,
    pub strike: f64,
    pub drift: Vec<f64>,
    pub vol: Vec<f64>,
    /// `exp(-r T)` for the problem horizon.
    pub discount: f64,
}

impl BsCoefficients {
    pub fn new(dim: usize, rate: f64, t_final: f64) -> Self {
        let d = dim as f64;
        let drift = (1..=dim)
            .map(|i| ((i as f64 * d).sin() + 1.0) / d)
            .collect();
        let vol = (1..=dim).map(|i| i as f64 / (4.0 * d)).collect();
        BsCoefficients {
            rate,
            strike: 100.0,
            drift,
            vol,
            discount: (-rate * t_final).exp(),
        }
    }

    pub fn payoff(&self, x: &[f64]) -> f64 {
        let best = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.discount * (best - self.strike).max(0.0)
    }

    /// Almost-everywhere gradient of the payoff (zero on the kink set).
    pub fn payoff_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let (argmax, best) =
            x.iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| {
                    if v > acc.1 {
                        (i, v)
                    } else {
                        acc
                    }
                });
        if best > self.strike {
            g[argmax] = self.discount;
        }
        g
    }
}

/// Zakai coefficients: `alpha = 2 pi`, `beta = 0.25`, `gamma = 0.1`,
/// `h(x) = beta x`, `mu(x) = gamma x / (1 + |x|^2)`,
/// `sigma(x) w = d^{-1/2} (sum_i w_i) (1, ..., 1)`.
#[derive(Debug, Clone)]
pub struct ZakaiCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ZakaiCoefficients {
    fn default() -> Self {
        ZakaiCoefficients {
            alpha: 2.0 * std::f64::consts::PI,
            beta: 0.25,
            gamma: 0.1,
        }
    }
}

impl ZakaiCoefficients {
    pub fn mu(&self, x: &[f64]) -> Vec<f64> {
        let s = x.iter().map(|v| v * v).sum::<f64>();
        let c = self.gamma / (1.0 + s);
        x.iter().map(|v| c * v).collect()
    }

    pub fn observation_fn(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| self.beta * v).collect()
    }

    /// Gaussian initial density `(alpha / 2 pi)^{d/2} exp(-alpha |x|^2 / 2)`.
    pub fn initial_density(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        let s = x.iter().map(|v| v * v).sum::<f64>();
        (self.alpha / (2.0 * std::f64::consts::PI)).powf(d / 2.0) * (-self.alpha / 2.0 * s).exp()
    }

    pub fn initial_density_grad(&self, x: &[f64]) -> Vec<f64> {
        let phi = self.initial_density(x);
        x.iter().map(|v| -self.alpha * v * phi).collect()
    }
}

/// Divergence of the Zakai drift: `gamma [d/(1+|x|^2) - 2|x|^2/(1+|x|^2)^2]`.
pub fn div_mu_zakai(gamma: f64, x: &[f64]) -> f64 {
    let d = x.len() as f64;
    let s = x.iter().map(|v| v * v).sum::<f64>();
    gamma * (d / (1.0 + s) - 2.0 * s / ((1.0 + s) * (1.0 + s)))
}

/// Per-problem training defaults (horizon, grid size, iteration budget,
/// learning-rate schedule, evaluation point).
#[derive(Debug, Clone)]
pub struct ProblemDefaults {
    pub t_final: f64,
    pub steps: usize,
    pub iters: u64,
    pub schedule: LrSchedule,
    pub x_eval: Vec<f64>,
}

/// One benchmark SPDE instance.
#[derive(Debug, Clone)]
pub struct SpdeProblem {
    pub id: ProblemId,
    pub dim: usize,
    pub bs: Option<BsCoefficients>,
    pub zakai: Option<ZakaiCoefficients>,
    /// Euler substeps per coarse step for the Zakai signal/observation path.
    pub zakai_substeps: usize,
}

impl SpdeProblem {
    pub fn preset(id: ProblemId, dim: usize) -> Self {
        Self::preset_with(id, dim, None, None)
    }

    pub fn preset_with(
        id: ProblemId,
        dim: usize,
        bs: Option<BsCoefficients>,
        zakai: Option<ZakaiCoefficients>,
    ) -> Self {
        let t_final = match id {
            ProblemId::HeatAdditive => 1.0,
            _ => 0.5,
        };
        let bs = match id {
            ProblemId::BlackScholes => {
                Some(bs.unwrap_or_else(|| BsCoefficients::new(dim, 0.02, t_final)))
            }
            _ => None,
        };
        let zakai = match id {
            ProblemId::Zakai => Some(zakai.unwrap_or_default()),
            _ => None,
        };
        SpdeProblem {
            id,
            dim,
            bs,
            zakai,
            zakai_substeps: 16,
        }
    }

    /// Noise dimension: `d` for Zakai, 1 otherwise.
    pub fn noise_dim(&self) -> usize {
        match self.id {
            ProblemId::Zakai => self.dim,
            _ => 1,
        }
    }

    /// Initial condition `phi`.
    pub fn phi(&self, x: &[f64]) -> f64 {
        match self.id {
            ProblemId::HeatAdditive | ProblemId::HeatMultiplicative => {
                x.iter().map(|v| v * v).sum()
            }
            ProblemId::BlackScholes => self.bs.as_ref().unwrap().payoff(x),
            ProblemId::Zakai => self.zakai.as_ref().unwrap().initial_density(x),
        }
    }

    /// Spatial gradient of `phi` (a.e. for the Black-Scholes payoff).
    pub fn phi_grad(&self, x: &[f64]) -> Vec<f64> {
        match self.id {
            ProblemId::HeatAdditive | ProblemId::HeatMultiplicative => {
                x.iter().map(|v| 2.0 * v).collect()
            }
            ProblemId::BlackScholes => self.bs.as_ref().unwrap().payoff_grad(x),
            ProblemId::Zakai => self.zakai.as_ref().unwrap().initial_density_grad(x),
        }
    }

    /// One-step transition map `H(t, s, x, w)` of the auxiliary diffusion.
    pub fn transition(&self, t: f64, s: f64, x: &[f64], w: &[f64]) -> Vec<f64> {
        match self.id {
            ProblemId::HeatAdditive | ProblemId::HeatMultiplicative => x
                .iter()
                .zip(w)
                .map(|(xi, wi)| xi + std::f64::consts::SQRT_2 * wi)
                .collect(),
            ProblemId::BlackScholes => {
                let c = self.bs.as_ref().unwrap();
                x.iter()
                    .zip(w)
                    .zip(c.drift.iter().zip(&c.vol))
                    .map(|((xi, wi), (mu, sig))| {
                        xi * ((mu - 0.5 * sig * sig) * (t - s) + sig * wi).exp()
                    })
                    .collect()
            }
            ProblemId::Zakai => {
                let c = self.zakai.as_ref().unwrap();
                let mu = c.mu(x);
                let shared = w.iter().sum::<f64>() / (self.dim as f64).sqrt();
                x.iter()
                    .zip(&mu)
                    .map(|(xi, mi)| xi + mi * (t - s) + shared)
                    .collect()
            }
        }
    }

    /// Per-step regression target map applied to the previous step's value
    /// `u` and gradient `w` at the design point `x`, with noise increment `z`.
    pub fn milstein_target(&self, x: &[f64], u: f64, _w: &[f64], z: &[f64], dt: f64) -> f64 {
        match self.id {
            ProblemId::HeatAdditive => u + z[0],
            ProblemId::HeatMultiplicative | ProblemId::BlackScholes => {
                u * (1.0 + z[0] + 0.5 * z[0] * z[0] - 0.5 * dt)
            }
            ProblemId::Zakai => {
                let c = self.zakai.as_ref().unwrap();
                let h = c.observation_fn(x);
                let hz: f64 = h.iter().zip(z).map(|(a, b)| a * b).sum();
                let h2: f64 = h.iter().map(|a| a * a).sum();
                u - u * div_mu_zakai(c.gamma, x) * dt + u * hz + 0.5 * u * hz * hz
                    - 0.5 * u * dt * h2
            }
        }
    }

    pub fn defaults(&self) -> ProblemDefaults {
        let x_eval = match self.id {
            ProblemId::BlackScholes => vec![100.0; self.dim],
            _ => vec![0.0; self.dim],
        };
        let (t_final, steps, iters, schedule) = match self.id {
            ProblemId::HeatAdditive => (
                1.0,
                5,
                8000,
                LrSchedule::new(vec![(2000, 1e-1), (4000, 1e-2), (6000, 1e-3), (8000, 1e-4)])
                    .unwrap(),
            ),
            ProblemId::HeatMultiplicative => (
                0.5,
                25,
                12000,
                LrSchedule::new(vec![
                    (5000, 1e-1),
                    (7000, 1e-2),
                    (10000, 1e-3),
                    (12000, 1e-4),
                ])
                .unwrap(),
            ),
            ProblemId::BlackScholes => (
                0.5,
                20,
                10000,
                LrSchedule::new(vec![
                    (4000, 1e-1),
                    (6000, 1e-2),
                    (8000, 1e-3),
                    (10000, 1e-4),
                ])
                .unwrap(),
            ),
            ProblemId::Zakai => (
                0.5,
                25,
                12000,
                LrSchedule::new(vec![(5000, 1e-2), (10000, 1e-3), (12000, 1e-4)]).unwrap(),
            ),
        };
        ProblemDefaults {
            t_final,
            steps,
            iters,
            schedule,
            x_eval,
        }
    }
}

/// Closed form for the additive-noise heat equation: `|x|^2 + 2 t d + W_t`.
pub fn reference_heat_additive(t: f64, x: &[f64], w_t: f64) -> f64 {
    let d = x.len() as f64;
    x.iter().map(|v| v * v).sum::<f64>() + 2.0 * t * d + w_t
}

/// Closed form for the multiplicative-noise heat equation:
/// `exp(W_t - t/2) (2 t d + |x|^2)`.
pub fn reference_heat_mult(t: f64, x: &[f64], w_t: f64) -> f64 {
    let d = x.len() as f64;
    (w_t - 0.5 * t).exp() * (2.0 * t * d + x.iter().map(|v| v * v).sum::<f64>())
}
