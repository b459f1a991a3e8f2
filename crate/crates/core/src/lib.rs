//! Deep-splitting solver for stochastic PDEs: per-timestep regression with
//! small feedforward networks trained against targets built from the frozen
//! previous step, conditioned on one realization of the driving noise.

pub mod error;
pub mod experiment;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod paths;
pub mod problems;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use experiment::{
    parse_config_text, reference_value, rel_l2, run_experiment, run_single, run_single_with,
    ExperimentConfig, ExperimentReport, RunArtifacts, RunRow,
};
pub use linalg::Matrix;
pub use nn::{BatchNormState, InitScheme, NetworkShape, ParamVector};
pub use optim::{AdamState, LrSchedule};
pub use paths::{
    make_grid, sample_noise, simulate_aux_path, AuxiliaryBatch, NoiseRealization, TimeGrid, XiMode,
};
pub use problems::{ProblemId, SpdeProblem};
pub use rng::{derive_stream_id, make_stream, RngStream};
pub use trainer::{
    evaluate, solve, train_step_network, OptimizerKind, PrevStep, TrainConfig, TrainEvent,
    TrainedSolver, TrainedStep,
};
