//! Optimizers for the per-timestep regression: Adam with bias correction,
//! plain SGD, and piecewise-constant learning-rate schedules.

use crate::error::{Error, Result};
use crate::nn::ParamVector;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One Adam update. The step index is incremented before bias correction, so
/// the first update uses `1 - beta^1`. Epsilon is added to the bias-corrected
/// root second moment: denominator `sqrt(v_hat) + eps` (not `sqrt(v + eps)`).
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    state: &AdamState,
    theta: &ParamVector,
    grad: &[f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> (AdamState, ParamVector) {
    assert_eq!(grad.len(), theta.len(), "grad/param length mismatch");
    assert_eq!(grad.len(), state.m.len(), "grad/state length mismatch");
    let step = state.step + 1;
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    let mut m = Vec::with_capacity(grad.len());
    let mut v = Vec::with_capacity(grad.len());
    let mut out = Vec::with_capacity(grad.len());
    for i in 0..grad.len() {
        let g = grad[i];
        let mi = beta1 * state.m[i] + (1.0 - beta1) * g;
        let vi = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let update = lr * (mi / bc1) / ((vi.abs() / bc2).sqrt() + eps);
        m.push(mi);
        v.push(vi);
        out.push(theta.0[i] - update);
    }
    (AdamState { m, v, step }, ParamVector(out))
}

/// Plain gradient step `theta - lr * grad`.
pub fn sgd_step(theta: &ParamVector, grad: &[f64], lr: f64) -> ParamVector {
    assert_eq!(grad.len(), theta.len(), "grad/param length mismatch");
    ParamVector(theta.0.iter().zip(grad).map(|(t, g)| t - lr * g).collect())
}

/// Piecewise-constant learning rate: `(bound, rate)` pairs with strictly
/// increasing bounds; iteration `m` uses the rate of the first breakpoint
/// whose bound is `>= m`, and the last rate beyond the final bound.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    breakpoints: Vec<(u64, f64)>,
}

impl LrSchedule {
    pub fn new(breakpoints: Vec<(u64, f64)>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::InvalidArgument(
                "empty learning-rate schedule".into(),
            ));
        }
        for w in breakpoints.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidArgument(
                    "schedule bounds must be strictly increasing".into(),
                ));
            }
        }
        if breakpoints.iter().any(|&(_, r)| r <= 0.0) {
            return Err(Error::InvalidArgument(
                "schedule rates must be positive".into(),
            ));
        }
        Ok(LrSchedule { breakpoints })
    }

    pub fn constant(rate: f64) -> Self {
        LrSchedule {
            breakpoints: vec![(u64::MAX, rate)],
        }
    }

    pub fn breakpoints(&self) -> &[(u64, f64)] {
        &self.breakpoints
    }

    pub fn lr_at(&self, m: u64) -> f64 {
        for &(bound, rate) in &self.breakpoints {
            if m <= bound {
                return rate;
            }
        }
        self.breakpoints.last().unwrap().1
    }

    pub fn last_bound(&self) -> u64 {
        self.breakpoints.last().unwrap().0
    }

    /// Rescales all bounds by `new_total / old_total`, keeping the rates.
    /// Used when the iteration budget is reduced relative to a preset.
    pub fn compressed(&self, new_total: u64, old_total: u64) -> Self {
        assert!(old_total > 0);
        let breakpoints = self
            .breakpoints
            .iter()
            .map(|&(b, r)| {
                let scaled = (b as u128 * new_total as u128 / old_total as u128) as u64;
                (scaled, r)
            })
            .collect();
        LrSchedule { breakpoints }
    }

    /// Parses `"b1:r1,b2:r2,..."`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut breakpoints = Vec::new();
        for part in spec.split(',') {
            let (b, r) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad schedule segment '{part}'")))?;
            let bound: u64 = b
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad schedule bound '{b}'")))?;
            let rate: f64 = r
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad schedule rate '{r}'")))?;
            breakpoints.push((bound, rate));
        }
        LrSchedule::new(breakpoints)
    }
}

impl std::fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .breakpoints
            .iter()
            .map(|(b, r)| format!("{b}:{r}"))
            .collect();
        write!(f, "{}", parts.join(","))
    }
}
