//! The deep-splitting training loop: for n = 1..N, fit one small network to
//! the per-step regression target built from the frozen previous step, using
//! M optimizer iterations on fresh batches of auxiliary paths.

use crate::error::{Error, Result};
use crate::nn::{
    batchnorm_update_state, init_params, net_forward_infer, net_forward_train, net_input_grad,
    net_param_grad, BatchNormState, InitScheme, NetworkShape, ParamVector,
};
use crate::optim::{
    adam_step, sgd_step, AdamState, LrSchedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON,
};
use crate::paths::{build_batch, AuxiliaryBatch, NoiseRealization, TimeGrid, XiMode};
use crate::problems::SpdeProblem;
use crate::rng::RngStream;

// Substream tags keyed purely by structural coordinates so results are
// independent of execution interleaving.
const STREAM_INIT: u64 = 1;
const STREAM_BATCH: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::Config(format!(
                "unknown optimizer '{s}' (expected adam or sgd)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iters: u64,
    pub batch: usize,
    pub schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    pub init: InitScheme,
    pub batch_norm: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub xi: XiMode,
    /// Start each step from the previous step's parameters instead of a
    /// fresh initialization.
    pub warm_start: bool,
}

impl TrainConfig {
    /// Per-problem defaults (iteration budget, schedule, evaluation point).
    pub fn for_problem(problem: &SpdeProblem) -> Self {
        let defaults = problem.defaults();
        TrainConfig {
            iters: defaults.iters,
            batch: 64,
            schedule: defaults.schedule,
            optimizer: OptimizerKind::Adam,
            init: InitScheme::Uniform,
            batch_norm: true,
            bn_momentum: crate::nn::BN_DEFAULT_MOMENTUM,
            bn_epsilon: crate::nn::BN_DEFAULT_EPSILON,
            xi: XiMode::Point(defaults.x_eval),
            warm_start: false,
        }
    }

    pub fn shape(&self, dim: usize) -> NetworkShape {
        NetworkShape {
            input_dim: dim,
            hidden_dim: dim + 50,
            batch_norm: self.batch_norm,
        }
    }
}

/// One trained timestep: parameters, frozen batch-norm statistics, and the
/// training loss at the last iteration (NaN when trained for 0 iterations).
#[derive(Debug, Clone)]
pub struct TrainedStep {
    pub step: usize,
    pub theta: ParamVector,
    pub bn: BatchNormState,
    pub final_loss: f64,
}

/// The frozen previous step of the recursion: the exact initial condition
/// for n = 1, a trained network afterwards.
pub enum PrevStep<'a> {
    Initial,
    Net {
        shape: &'a NetworkShape,
        step: &'a TrainedStep,
    },
}

impl PrevStep<'_> {
    pub fn value(&self, problem: &SpdeProblem, x: &[f64]) -> Result<f64> {
        match self {
            PrevStep::Initial => Ok(problem.phi(x)),
            PrevStep::Net { shape, step } => net_forward_infer(shape, &step.theta, &step.bn, x),
        }
    }

    pub fn grad(&self, problem: &SpdeProblem, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            PrevStep::Initial => Ok(problem.phi_grad(x)),
            PrevStep::Net { shape, step } => net_input_grad(shape, &step.theta, &step.bn, x),
        }
    }
}

/// Regression targets for one batch: the per-problem target map applied to
/// the frozen previous step at the `inputs_prev` rows. Constants with
/// respect to the parameters being trained.
pub fn compute_targets(
    problem: &SpdeProblem,
    batch: &AuxiliaryBatch,
    prev: &PrevStep<'_>,
) -> Result<Vec<f64>> {
    let mut targets = Vec::with_capacity(batch.inputs_prev.rows);
    for j in 0..batch.inputs_prev.rows {
        let x = batch.inputs_prev.row(j);
        let u = prev.value(problem, x)?;
        let w = prev.grad(problem, x)?;
        let t = problem.milstein_target(x, u, &w, batch.noise_increments.row(j), batch.dt);
        if !t.is_finite() {
            return Err(Error::NonFinite {
                context: format!("regression target {j}"),
            });
        }
        targets.push(t);
    }
    Ok(targets)
}

/// Mean-squared loss over the batch and its exact parameter gradient; also
/// returns the forward cache so the caller can update batch-norm state from
/// the batch statistics.
pub fn step_loss_and_grad(
    problem: &SpdeProblem,
    shape: &NetworkShape,
    theta: &ParamVector,
    batch: &AuxiliaryBatch,
    prev: &PrevStep<'_>,
    bn_epsilon: f64,
) -> Result<(f64, ParamVector, crate::nn::ForwardCache)> {
    let targets = compute_targets(problem, batch, prev)?;
    let (out, cache) = net_forward_train(shape, theta, &batch.inputs_now, bn_epsilon)?;
    let j = out.len() as f64;
    let mut loss = 0.0;
    let mut dout = Vec::with_capacity(out.len());
    for (o, t) in out.iter().zip(&targets) {
        let r = o - t;
        loss += r * r / j;
        dout.push(2.0 * r / j);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "training loss".into(),
        });
    }
    let (grad, _) = net_param_grad(shape, theta, &cache, &dout, bn_epsilon);
    Ok((loss, grad, cache))
}

/// One progress record per optimizer iteration.
#[derive(Debug, Clone, Copy)]
pub struct TrainEvent {
    pub step: usize,
    pub iter: u64,
    pub loss: f64,
    pub lr: f64,
}

pub type ProgressSink<'a> = dyn FnMut(&TrainEvent) + 'a;

/// Trains the step-`n` network against the frozen previous step: fresh batch,
/// batch-norm state update, gradient, optimizer step, `config.iters` times.
pub fn train_step_network(
    problem: &SpdeProblem,
    grid: &TimeGrid,
    z: &NoiseRealization,
    n: usize,
    prev: &PrevStep<'_>,
    config: &TrainConfig,
    base_stream: &RngStream,
    mut sink: Option<&mut ProgressSink<'_>>,
) -> Result<TrainedStep> {
    let shape = config.shape(problem.dim);
    let mut theta = match (config.warm_start, prev) {
        (true, PrevStep::Net { step, .. }) => step.theta.clone(),
        _ => {
            let mut init_stream = base_stream.substream(&[STREAM_INIT, n as u64]);
            init_params(&mut init_stream, &shape, config.init)
        }
    };
    let mut bn = BatchNormState::new(&shape, config.bn_momentum, config.bn_epsilon);
    let mut adam = AdamState::new(theta.len());
    let mut final_loss = f64::NAN;

    for m in 1..=config.iters {
        let mut batch_stream = base_stream.substream(&[STREAM_BATCH, n as u64, m]);
        let batch = build_batch(
            problem,
            grid,
            z,
            n,
            &config.xi,
            config.batch,
            &mut batch_stream,
        )?;
        let (loss, grad, cache) =
            step_loss_and_grad(problem, &shape, &theta, &batch, prev, config.bn_epsilon)?;
        if !loss.is_finite() || loss > 1e12 {
            return Err(Error::Training {
                step: n,
                iter: m as usize,
                loss,
            });
        }
        if shape.batch_norm {
            bn = batchnorm_update_state(&bn, &cache.bn_stats());
        }
        let lr = config.schedule.lr_at(m);
        theta = match config.optimizer {
            OptimizerKind::Adam => {
                let (next, updated) = adam_step(
                    &adam,
                    &theta,
                    grad.as_slice(),
                    lr,
                    ADAM_BETA1,
                    ADAM_BETA2,
                    ADAM_EPSILON,
                );
                adam = next;
                updated
            }
            OptimizerKind::Sgd => sgd_step(&theta, grad.as_slice(), lr),
        };
        if !theta.is_finite() {
            return Err(Error::Training {
                step: n,
                iter: m as usize,
                loss,
            });
        }
        final_loss = loss;
        if let Some(s) = sink.as_deref_mut() {
            s(&TrainEvent {
                step: n,
                iter: m,
                loss,
                lr,
            });
        }
    }
    Ok(TrainedStep {
        step: n,
        theta,
        bn,
        final_loss,
    })
}

/// All N trained timesteps for one noise realization; step 0 is the exact
/// initial condition by convention.
#[derive(Debug, Clone)]
pub struct TrainedSolver {
    pub shape: NetworkShape,
    pub steps: Vec<TrainedStep>,
}

/// Trains steps 1..N sequentially conditioned on the single realization `z`.
pub fn solve(
    problem: &SpdeProblem,
    grid: &TimeGrid,
    z: &NoiseRealization,
    config: &TrainConfig,
    base_stream: &RngStream,
    mut sink: Option<&mut ProgressSink<'_>>,
) -> Result<TrainedSolver> {
    let shape = config.shape(problem.dim);
    let mut steps: Vec<TrainedStep> = Vec::with_capacity(grid.steps);
    for n in 1..=grid.steps {
        let prev = match steps.last() {
            None => PrevStep::Initial,
            Some(step) => PrevStep::Net {
                shape: &shape,
                step,
            },
        };
        let trained = train_step_network(
            problem,
            grid,
            z,
            n,
            &prev,
            config,
            base_stream,
            sink.as_deref_mut(),
        )?;
        steps.push(trained);
    }
    Ok(TrainedSolver { shape, steps })
}

/// Inference-mode evaluation at time index `n`: `phi(x)` for n = 0, the
/// step-n network otherwise.
pub fn evaluate(solver: &TrainedSolver, problem: &SpdeProblem, n: usize, x: &[f64]) -> Result<f64> {
    if n == 0 {
        return Ok(problem.phi(x));
    }
    let step = solver
        .steps
        .get(n - 1)
        .ok_or_else(|| Error::InvalidArgument(format!("time index {n} out of range")))?;
    net_forward_infer(&solver.shape, &step.theta, &step.bn, x)
}
