//! Experiment driver: run R independent noise realizations, train, evaluate
//! at x_eval, compare against the problem's reference oracle, and aggregate
//! relative errors; plus the flat `key = value` configuration layer.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optim::LrSchedule;
use crate::paths::{make_grid, sample_noise, NoiseRealization, TimeGrid, XiMode};
use crate::problems::{
    reference_bs, reference_heat_additive, reference_heat_mult, reference_zakai_1d, BsCoefficients,
    ProblemId, SpdeProblem, ZakaiCoefficients, ZakaiFdOptions,
};
use crate::rng::{make_stream, RngStream};
use crate::trainer::{evaluate, solve, OptimizerKind, ProgressSink, TrainConfig};

// Substream tags for the per-run stream families.
const STREAM_NOISE: u64 = 10;
const STREAM_TRAIN: u64 = 11;
const STREAM_ORACLE: u64 = 12;

/// Recognized configuration keys; anything else is rejected.
pub const CONFIG_KEYS: &[&str] = &[
    "problem",
    "dim",
    "t_final",
    "steps",
    "iters",
    "batch",
    "runs",
    "seed",
    "x_eval",
    "xi",
    "optimizer",
    "lr_schedule",
    "batch_norm",
    "warm_start",
    "zakai_substeps",
    "alpha",
    "beta",
    "gamma_drift",
    "rate_r",
    "oracle_pairs",
    "oracle_space",
    "oracle_substeps",
];

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: ProblemId,
    pub dim: usize,
    pub t_final: f64,
    pub steps: usize,
    pub iters: u64,
    pub batch: usize,
    pub runs: usize,
    pub seed: u64,
    pub x_eval: Vec<f64>,
    pub xi: XiMode,
    pub optimizer: OptimizerKind,
    pub schedule: LrSchedule,
    pub batch_norm: bool,
    pub warm_start: bool,
    pub zakai_substeps: usize,
    /// Coefficient overrides; `None` keeps the preset value.
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma_drift: Option<f64>,
    pub rate_r: Option<f64>,
    /// Antithetic pairs for the Black-Scholes Monte-Carlo oracle.
    pub oracle_pairs: usize,
    pub oracle: ZakaiFdOptions,
}

/// Parses `key = value` lines (UTF-8, `#` comments); checks syntax and key
/// names, reporting the offending line number. Returns pairs in file order.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected 'key = value', got '{raw}'",
                idx + 1
            ))
        })?;
        let key = key.trim().to_string();
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "line {}: unknown key '{key}'",
                idx + 1
            )));
        }
        pairs.push((key, value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("key '{key}': cannot parse value '{value}'")))
}

fn parse_x_eval(value: &str, dim: usize) -> Result<Vec<f64>> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| parse_as::<f64>("x_eval", p.trim()))
        .collect::<Result<_>>()?;
    match parts.len() {
        1 => Ok(vec![parts[0]; dim]),
        n if n == dim => Ok(parts),
        n => Err(Error::Config(format!(
            "x_eval has {n} components, expected 1 or {dim}"
        ))),
    }
}

fn parse_xi(value: &str, x_eval: &[f64]) -> Result<XiMode> {
    if value == "point" {
        return Ok(XiMode::Point(x_eval.to_vec()));
    }
    if let Some(rest) = value.strip_prefix("box:") {
        let (lo, hi) = rest
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("xi: expected box:LO:HI, got '{value}'")))?;
        let lo: f64 = parse_as("xi", lo)?;
        let hi: f64 = parse_as("xi", hi)?;
        if !(lo < hi) {
            return Err(Error::Config("xi box bounds must satisfy lo < hi".into()));
        }
        return Ok(XiMode::Box { lo, hi });
    }
    Err(Error::Config(format!(
        "xi: expected 'point' or 'box:LO:HI', got '{value}'"
    )))
}

impl ExperimentConfig {
    /// Builds a configuration from ordered `key = value` pairs (file content
    /// first, CLI flag overrides appended). The problem preset supplies every
    /// unset field; a reduced iteration budget compresses the preset
    /// learning-rate schedule proportionally unless a schedule is given.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let lookup = |key: &str| {
            pairs
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
        };

        let problem = ProblemId::parse(
            lookup("problem")
                .ok_or_else(|| Error::Config("missing required key 'problem'".into()))?,
        )?;
        let dim: usize = match lookup("dim") {
            Some(v) => parse_as("dim", v)?,
            None => 1,
        };
        if dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }

        let preset = SpdeProblem::preset(problem, dim);
        let defaults = preset.defaults();

        let t_final = match lookup("t_final") {
            Some(v) => parse_as("t_final", v)?,
            None => defaults.t_final,
        };
        let steps: usize = match lookup("steps") {
            Some(v) => parse_as("steps", v)?,
            None => defaults.steps,
        };
        let iters: u64 = match lookup("iters") {
            Some(v) => parse_as("iters", v)?,
            None => defaults.iters,
        };
        let schedule = match lookup("lr_schedule") {
            Some(v) => LrSchedule::parse(v)?,
            None if iters != defaults.iters && iters > 0 => {
                defaults.schedule.compressed(iters, defaults.iters)
            }
            None => defaults.schedule.clone(),
        };
        let x_eval = match lookup("x_eval") {
            Some(v) => parse_x_eval(v, dim)?,
            None => defaults.x_eval.clone(),
        };
        let xi = match lookup("xi") {
            Some(v) => parse_xi(v, &x_eval)?,
            None => XiMode::Point(x_eval.clone()),
        };

        let config = ExperimentConfig {
            problem,
            dim,
            t_final,
            steps,
            iters,
            batch: match lookup("batch") {
                Some(v) => parse_as("batch", v)?,
                None => 64,
            },
            runs: match lookup("runs") {
                Some(v) => parse_as("runs", v)?,
                None => 5,
            },
            seed: match lookup("seed") {
                Some(v) => parse_as("seed", v)?,
                None => 0,
            },
            x_eval,
            xi,
            optimizer: match lookup("optimizer") {
                Some(v) => OptimizerKind::parse(v)?,
                None => OptimizerKind::Adam,
            },
            schedule,
            batch_norm: match lookup("batch_norm") {
                Some(v) => parse_as("batch_norm", v)?,
                None => true,
            },
            warm_start: match lookup("warm_start") {
                Some(v) => parse_as("warm_start", v)?,
                None => false,
            },
            zakai_substeps: match lookup("zakai_substeps") {
                Some(v) => parse_as("zakai_substeps", v)?,
                None => 16,
            },
            alpha: lookup("alpha").map(|v| parse_as("alpha", v)).transpose()?,
            beta: lookup("beta").map(|v| parse_as("beta", v)).transpose()?,
            gamma_drift: lookup("gamma_drift")
                .map(|v| parse_as("gamma_drift", v))
                .transpose()?,
            rate_r: lookup("rate_r")
                .map(|v| parse_as("rate_r", v))
                .transpose()?,
            oracle_pairs: match lookup("oracle_pairs") {
                Some(v) => parse_as("oracle_pairs", v)?,
                None => 200_000,
            },
            oracle: ZakaiFdOptions {
                half_width_factor: 6.0,
                n_space: match lookup("oracle_space") {
                    Some(v) => parse_as("oracle_space", v)?,
                    None => 2048,
                },
                substeps: match lookup("oracle_substeps") {
                    Some(v) => parse_as("oracle_substeps", v)?,
                    None => 16,
                },
            },
        };
        if config.steps < 1 || config.batch < 1 || config.runs < 1 {
            return Err(Error::Config(
                "steps, batch and runs must be at least 1".into(),
            ));
        }
        Ok(config)
    }

    /// The problem instance with coefficient overrides applied.
    pub fn spde_problem(&self) -> SpdeProblem {
        let bs = match self.problem {
            ProblemId::BlackScholes => Some(BsCoefficients::new(
                self.dim,
                self.rate_r.unwrap_or(0.02),
                self.t_final,
            )),
            _ => None,
        };
        let zakai = match self.problem {
            ProblemId::Zakai => {
                let mut c = ZakaiCoefficients::default();
                if let Some(a) = self.alpha {
                    c.alpha = a;
                }
                if let Some(b) = self.beta {
                    c.beta = b;
                }
                if let Some(g) = self.gamma_drift {
                    c.gamma = g;
                }
                Some(c)
            }
            _ => None,
        };
        let mut p = SpdeProblem::preset_with(self.problem, self.dim, bs, zakai);
        p.zakai_substeps = self.zakai_substeps;
        p
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        make_grid(self.t_final, self.steps)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iters: self.iters,
            batch: self.batch,
            schedule: self.schedule.clone(),
            optimizer: self.optimizer,
            init: crate::nn::InitScheme::Uniform,
            batch_norm: self.batch_norm,
            bn_momentum: crate::nn::BN_DEFAULT_MOMENTUM,
            bn_epsilon: crate::nn::BN_DEFAULT_EPSILON,
            xi: self.xi.clone(),
            warm_start: self.warm_start,
        }
    }
}

/// Root-mean-square of the per-run relative errors.
pub fn rel_l2(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument(
            "rel_l2 of empty error vector".into(),
        ));
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

#[derive(Debug, Clone)]
pub struct RunRow {
    pub run: usize,
    pub result: f64,
    pub runtime_s: f64,
    pub reference: f64,
    pub rel_error: f64,
    pub failed: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub problem: ProblemId,
    pub dim: usize,
    pub rows: Vec<RunRow>,
    pub rel_l2: f64,
    pub any_failed: bool,
}

impl ExperimentReport {
    /// CSV with fixed column order and one summary row (run = "L2").
    /// Floats use shortest round-trip formatting so the emitted numbers can
    /// be parsed back exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("problem,d,run,result,runtime_s,reference,rel_pathwise_error\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.problem.as_str(),
                self.dim,
                row.run,
                row.result,
                row.runtime_s,
                row.reference,
                row.rel_error,
            ));
        }
        out.push_str(&format!(
            "{},{},L2,,,,{}\n",
            self.problem.as_str(),
            self.dim,
            self.rel_l2
        ));
        out
    }
}

/// Per-run streams keyed only by the run index, so run r is identical
/// whether executed alone or as part of a larger experiment.
pub fn run_streams(config: &ExperimentConfig, run: usize) -> (RngStream, RngStream, RngStream) {
    let base = make_stream(config.seed, 0);
    (
        base.substream(&[STREAM_NOISE, run as u64]),
        base.substream(&[STREAM_TRAIN, run as u64]),
        base.substream(&[STREAM_ORACLE, run as u64]),
    )
}

/// Reference value for one noise realization; NaN for Zakai above d = 1
/// (no oracle).
pub fn reference_value(
    config: &ExperimentConfig,
    problem: &SpdeProblem,
    grid: &TimeGrid,
    z: &NoiseRealization,
    oracle_stream: &mut RngStream,
) -> Result<f64> {
    let t = config.t_final;
    match config.problem {
        ProblemId::HeatAdditive => Ok(reference_heat_additive(t, &config.x_eval, z.total()[0])),
        ProblemId::HeatMultiplicative => Ok(reference_heat_mult(t, &config.x_eval, z.total()[0])),
        ProblemId::BlackScholes => {
            let c = problem.bs.as_ref().unwrap();
            let (v, _se) = reference_bs(
                c,
                t,
                &config.x_eval,
                z.total()[0],
                config.oracle_pairs,
                oracle_stream,
            );
            Ok(v)
        }
        ProblemId::Zakai => {
            if config.dim != 1 {
                // no oracle above d = 1; the report carries NaN references
                return Ok(f64::NAN);
            }
            let c = problem.zakai.as_ref().unwrap();
            reference_zakai_1d(c, grid, z, config.x_eval[0], &config.oracle)
        }
    }
}

/// Everything one run produces; the solver is absent when training failed.
pub struct RunArtifacts {
    pub row: RunRow,
    pub solver: Option<crate::trainer::TrainedSolver>,
    pub noise: NoiseRealization,
}

/// Executes one run: sample z (or replay a given realization), train all
/// steps, evaluate at x_eval, compute the reference with the same
/// realization. Training failures are reported in the row, not propagated.
pub fn run_single_with(
    config: &ExperimentConfig,
    run: usize,
    noise: Option<NoiseRealization>,
    sink: Option<&mut ProgressSink<'_>>,
) -> Result<RunArtifacts> {
    let problem = config.spde_problem();
    let grid = config.grid()?;
    let train_config = config.train_config();
    let (mut noise_stream, train_stream, mut oracle_stream) = run_streams(config, run);
    let z = match noise {
        Some(z) => {
            if z.steps() != grid.steps || z.delta != problem.noise_dim() {
                return Err(Error::Shape(
                    "replayed noise does not match the grid/problem".into(),
                ));
            }
            z
        }
        None => sample_noise(&problem, &grid, &mut noise_stream),
    };

    let start = Instant::now();
    let solved = solve(&problem, &grid, &z, &train_config, &train_stream, sink);
    let runtime_s = start.elapsed().as_secs_f64();

    match solved {
        Ok(solver) => {
            let result = evaluate(&solver, &problem, grid.steps, &config.x_eval)?;
            let reference = reference_value(config, &problem, &grid, &z, &mut oracle_stream)?;
            let rel_error = (result - reference).abs() / reference.abs();
            Ok(RunArtifacts {
                row: RunRow {
                    run,
                    result,
                    runtime_s,
                    reference,
                    rel_error,
                    failed: false,
                },
                solver: Some(solver),
                noise: z,
            })
        }
        Err(Error::Training { .. }) | Err(Error::NonFinite { .. }) => Ok(RunArtifacts {
            row: RunRow {
                run,
                result: f64::NAN,
                runtime_s,
                reference: f64::NAN,
                rel_error: f64::NAN,
                failed: true,
            },
            solver: None,
            noise: z,
        }),
        Err(e) => Err(e),
    }
}

pub fn run_single(
    config: &ExperimentConfig,
    run: usize,
    sink: Option<&mut ProgressSink<'_>>,
) -> Result<RunRow> {
    run_single_with(config, run, None, sink).map(|a| a.row)
}

/// Runs all configured realizations (in parallel) and aggregates the
/// relative L2 error. Any failed run turns the summary into NaN; callers
/// should exit nonzero when `any_failed` is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let rows: Vec<RunRow> = (0..config.runs)
        .into_par_iter()
        .map(|r| run_single(config, r, None))
        .collect::<Result<Vec<_>>>()?;
    let any_failed = rows.iter().any(|r| r.failed);
    let errors: Vec<f64> = rows.iter().map(|r| r.rel_error).collect();
    let summary = if any_failed {
        f64::NAN
    } else {
        rel_l2(&errors)?
    };
    Ok(ExperimentReport {
        problem: config.problem,
        dim: config.dim,
        rows,
        rel_l2: summary,
        any_failed,
    })
}
