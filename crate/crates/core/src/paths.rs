//! Time grids, reversed-time auxiliary diffusion paths, and driving-noise
//! realizations (scalar Brownian path for the heat and Black-Scholes
//! problems; coupled signal/observation simulation for Zakai).

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::problems::{ProblemId, SpdeProblem};
use crate::rng::RngStream;

/// Uniform time grid `t_i = i T / N` together with the reversed grid
/// `tau_n = T - t_{N-n}` used by the auxiliary diffusion.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
    pub times: Vec<f64>,
    pub reversed: Vec<f64>,
}

impl TimeGrid {
    /// Uniform step size `T / N`.
    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }
}

pub fn make_grid(t_final: f64, steps: usize) -> Result<TimeGrid> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {t_final}"
        )));
    }
    if steps < 1 {
        return Err(Error::InvalidArgument("need at least one time step".into()));
    }
    let times: Vec<f64> = (0..=steps)
        .map(|i| i as f64 * t_final / steps as f64)
        .collect();
    let reversed: Vec<f64> = (0..=steps).map(|n| t_final - times[steps - n]).collect();
    Ok(TimeGrid {
        t_final,
        steps,
        times,
        reversed,
    })
}

/// One sampled realization of the driving noise: per-step increments
/// `dz_n in R^delta` for `n = 1..N`. All benchmark noises are constant in
/// the spatial argument, but the evaluation interface keeps `x` so spatially
/// varying fields stay representable.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub delta: usize,
    increments: Vec<Vec<f64>>,
}

impl NoiseRealization {
    pub fn from_increments(delta: usize, increments: Vec<Vec<f64>>) -> Result<Self> {
        if increments.iter().any(|v| v.len() != delta) {
            return Err(Error::Shape("noise increment dimension mismatch".into()));
        }
        Ok(NoiseRealization { delta, increments })
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    /// Increment over `(t_{n-1}, t_n]`, 1-based `n`.
    pub fn increment(&self, n: usize) -> &[f64] {
        &self.increments[n - 1]
    }

    /// Increment evaluated at a spatial point; constant in `x` for all
    /// benchmark noises.
    pub fn increment_at(&self, n: usize, _x: &[f64]) -> &[f64] {
        self.increment(n)
    }

    /// `z_{t_i} - z_0`: sum of the first `i` increments.
    pub fn cumulative(&self, i: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.delta];
        for inc in &self.increments[..i] {
            for (a, v) in acc.iter_mut().zip(inc) {
                *a += v;
            }
        }
        acc
    }

    pub fn total(&self) -> Vec<f64> {
        self.cumulative(self.steps())
    }

    /// Scalar-noise convenience: `W_{t_i}` for delta = 1.
    pub fn scalar_at(&self, i: usize) -> f64 {
        debug_assert_eq!(self.delta, 1);
        self.cumulative(i)[0]
    }

    /// Dump as CSV (`t,dz1,...`) with one row per step so a run can be
    /// replayed exactly; floats use shortest round-trip formatting.
    pub fn to_csv(&self, grid: &TimeGrid) -> String {
        let mut out = String::from("t");
        for k in 1..=self.delta {
            out.push_str(&format!(",dz{k}"));
        }
        out.push('\n');
        for (n, inc) in self.increments.iter().enumerate() {
            out.push_str(&format!("{}", grid.times[n + 1]));
            for v in inc {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty noise CSV".into()))?;
        let delta = header.split(',').count().saturating_sub(1);
        if delta == 0 {
            return Err(Error::Config(
                "noise CSV header has no increment columns".into(),
            ));
        }
        let mut increments = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != delta + 1 {
                return Err(Error::Config(format!(
                    "noise CSV row {}: wrong field count",
                    lineno + 2
                )));
            }
            let row: std::result::Result<Vec<f64>, _> = fields[1..]
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect();
            increments.push(
                row.map_err(|_| Error::Config(format!("noise CSV row {}: bad float", lineno + 2)))?,
            );
        }
        NoiseRealization::from_increments(delta, increments)
    }
}

/// Initial-state law for the auxiliary diffusion: a point mass at the
/// evaluation point (default, matching the error tables) or a uniform box.
#[derive(Debug, Clone, PartialEq)]
pub enum XiMode {
    Point(Vec<f64>),
    Box { lo: f64, hi: f64 },
}

impl XiMode {
    pub fn sample(&self, dim: usize, stream: &mut RngStream) -> Vec<f64> {
        match self {
            XiMode::Point(x) => x.clone(),
            XiMode::Box { lo, hi } => (0..dim).map(|_| stream.next_range(*lo, *hi)).collect(),
        }
    }
}

/// Design points for one regression iteration at step `n`: batch rows of
/// the auxiliary path at indices `N-n` (inputs to the network being
/// trained) and `N-n+1` (inputs to the frozen previous step), plus the
/// noise increments evaluated at the latter.
#[derive(Debug, Clone)]
pub struct AuxiliaryBatch {
    pub step: usize,
    pub inputs_now: Matrix,
    pub inputs_prev: Matrix,
    pub noise_increments: Matrix,
    pub dt: f64,
}

/// Rolls the auxiliary path forward from `xi` with the given per-step
/// Brownian increments (row `k` drives the step from index `k` to `k+1`).
pub fn aux_path_from_increments(
    problem: &SpdeProblem,
    grid: &TimeGrid,
    xi: &[f64],
    increments: &Matrix,
) -> Result<Matrix> {
    let d = problem.dim;
    if xi.len() != d {
        return Err(Error::Shape(format!(
            "xi has length {}, expected {d}",
            xi.len()
        )));
    }
    if increments.rows != grid.steps || increments.cols != d {
        return Err(Error::Shape("auxiliary increments have wrong shape".into()));
    }
    let mut path = Matrix::zeros(grid.steps + 1, d);
    path.row_mut(0).copy_from_slice(xi);
    for k in 0..grid.steps {
        let next = problem.transition(
            grid.reversed[k + 1],
            grid.reversed[k],
            path.row(k),
            increments.row(k),
        );
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("auxiliary path at index {}", k + 1),
            });
        }
        path.row_mut(k + 1).copy_from_slice(&next);
    }
    Ok(path)
}

fn draw_aux_increments(grid: &TimeGrid, dim: usize, upto: usize, stream: &mut RngStream) -> Matrix {
    let mut inc = Matrix::zeros(upto, dim);
    for k in 0..upto {
        let scale = (grid.reversed[k + 1] - grid.reversed[k]).sqrt();
        for v in inc.row_mut(k) {
            *v = scale * stream.next_std_normal();
        }
    }
    inc
}

/// Simulates one full auxiliary path on the reversed grid.
pub fn simulate_aux_path(
    problem: &SpdeProblem,
    grid: &TimeGrid,
    xi: &[f64],
    stream: &mut RngStream,
) -> Result<Matrix> {
    let increments = draw_aux_increments(grid, problem.dim, grid.steps, stream);
    aux_path_from_increments(problem, grid, xi, &increments)
}

/// Samples one realization of the driving noise. Heat/Black-Scholes: a
/// scalar Brownian path at the grid times. Zakai: Euler-Maruyama signal on a
/// fine subgrid, left-rule accumulation of the observation integral, plus an
/// independent Brownian observation noise.
pub fn sample_noise(
    problem: &SpdeProblem,
    grid: &TimeGrid,
    stream: &mut RngStream,
) -> NoiseRealization {
    let delta = problem.noise_dim();
    let dt = grid.dt();
    let mut increments = Vec::with_capacity(grid.steps);
    match problem.id {
        ProblemId::Zakai => {
            let c = problem.zakai.as_ref().unwrap().clone();
            let d = problem.dim;
            let k_sub = problem.zakai_substeps.max(1);
            let dt_sub = dt / k_sub as f64;
            let y_scale = c.alpha.sqrt().recip();
            let mut y: Vec<f64> = (0..d).map(|_| y_scale * stream.next_std_normal()).collect();
            for _ in 0..grid.steps {
                let mut integral = vec![0.0; d];
                for _ in 0..k_sub {
                    // left rule: the observation integrand at the substep start
                    for (acc, hy) in integral.iter_mut().zip(c.observation_fn(&y)) {
                        *acc += hy * dt_sub;
                    }
                    let mu = c.mu(&y);
                    let shared = (0..d).map(|_| stream.next_std_normal()).sum::<f64>()
                        / (d as f64).sqrt()
                        * dt_sub.sqrt();
                    for (yi, mi) in y.iter_mut().zip(&mu) {
                        *yi += mi * dt_sub + shared;
                    }
                }
                let dz: Vec<f64> = integral
                    .into_iter()
                    .map(|acc| acc + dt.sqrt() * stream.next_std_normal())
                    .collect();
                increments.push(dz);
            }
        }
        _ => {
            for _ in 0..grid.steps {
                increments.push(vec![dt.sqrt() * stream.next_std_normal()]);
            }
        }
    }
    NoiseRealization { delta, increments }
}

/// Simulates `batch` fresh auxiliary paths up to index `N-n+1` and extracts
/// the regression design points for step `n`.
pub fn build_batch(
    problem: &SpdeProblem,
    grid: &TimeGrid,
    z: &NoiseRealization,
    n: usize,
    xi: &XiMode,
    batch: usize,
    stream: &mut RngStream,
) -> Result<AuxiliaryBatch> {
    if n < 1 || n > grid.steps {
        return Err(Error::InvalidArgument(format!(
            "step {n} outside 1..={}",
            grid.steps
        )));
    }
    let d = problem.dim;
    let upto = grid.steps - n + 1; // path index N-n+1
    let mut inputs_now = Matrix::zeros(batch, d);
    let mut inputs_prev = Matrix::zeros(batch, d);
    let mut noise = Matrix::zeros(batch, z.delta);
    for j in 0..batch {
        let xi_j = xi.sample(d, stream);
        if upto == 1 {
            // n = N: index N-n is the start point itself
            inputs_now.row_mut(j).copy_from_slice(&xi_j);
        }
        let increments = draw_aux_increments(grid, d, upto, stream);
        let mut state = xi_j;
        for k in 0..upto {
            state = problem.transition(
                grid.reversed[k + 1],
                grid.reversed[k],
                &state,
                increments.row(k),
            );
            if state.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("auxiliary path at index {} (batch {j})", k + 1),
                });
            }
            if k + 1 == upto - 1 {
                inputs_now.row_mut(j).copy_from_slice(&state);
            }
        }
        inputs_prev.row_mut(j).copy_from_slice(&state);
        noise.row_mut(j).copy_from_slice(z.increment_at(n, &state));
    }
    Ok(AuxiliaryBatch {
        step: n,
        inputs_now,
        inputs_prev,
        noise_increments: noise,
        dt: grid.dt(),
    })
}
