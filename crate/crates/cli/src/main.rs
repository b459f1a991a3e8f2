use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deepsplit::experiment::{
    parse_config_text, reference_value, run_experiment, run_single_with, ExperimentConfig,
    RunArtifacts,
};
use deepsplit::paths::{sample_noise, NoiseRealization};
use deepsplit::rng::make_stream;
use deepsplit::trainer::{TrainEvent, TrainedSolver};
use deepsplit::Result;

#[derive(Parser)]
#[command(
    name = "spde-deepsplit",
    version,
    about = "Deep-splitting solver for stochastic PDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags mirroring the config-file keys; flags override file values.
#[derive(Args)]
struct CommonOpts {
    /// Problem preset: heat-add, heat-mul, black-scholes, zakai
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    /// Number of time steps N
    #[arg(long)]
    steps: Option<usize>,
    /// Optimizer iterations per step M
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Independent noise realizations R
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t_final: Option<f64>,
    /// Evaluation point: single value (broadcast) or comma list
    #[arg(long)]
    x_eval: Option<String>,
    /// Start-point law: 'point' or 'box:LO:HI'
    #[arg(long)]
    xi: Option<String>,
    /// adam or sgd
    #[arg(long)]
    optimizer: Option<String>,
    /// Piecewise-constant schedule 'bound:rate,...'
    #[arg(long)]
    lr_schedule: Option<String>,
    /// Flat key = value config file ('#' comments); flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
}

impl CommonOpts {
    fn build(&self) -> Result<ExperimentConfig> {
        let mut pairs = match &self.config {
            Some(path) => parse_config_text(&fs::read_to_string(path)?)?,
            None => Vec::new(),
        };
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                pairs.push((key.to_string(), v));
            }
        };
        push("problem", self.problem.clone());
        push("dim", self.dim.map(|v| v.to_string()));
        push("steps", self.steps.map(|v| v.to_string()));
        push("iters", self.iters.map(|v| v.to_string()));
        push("batch", self.batch.map(|v| v.to_string()));
        push("runs", self.runs.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("t_final", self.t_final.map(|v| v.to_string()));
        push("x_eval", self.x_eval.clone());
        push("xi", self.xi.clone());
        push("optimizer", self.optimizer.clone());
        push("lr_schedule", self.lr_schedule.clone());
        ExperimentConfig::from_pairs(&pairs)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on R noise realizations and emit the error table as CSV
    Run {
        #[command(flatten)]
        opts: CommonOpts,
        /// Results CSV path (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training-log CSV (n,m,loss,lr); forces sequential runs
        #[arg(long)]
        log: Option<PathBuf>,
        /// Dump trained networks as PREFIX-run{r}.bin
        #[arg(long, value_name = "PREFIX")]
        dump_nets: Option<String>,
        /// Dump noise paths as PREFIX-run{r}.csv
        #[arg(long, value_name = "PREFIX")]
        dump_noise: Option<String>,
        /// Replay a dumped noise path (single run)
        #[arg(long)]
        noise: Option<PathBuf>,
    },
    /// Evaluate the reference oracle on sampled noise realizations
    Oracle {
        #[command(flatten)]
        opts: CommonOpts,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run quick internal consistency checks
    Selftest,
}

fn write_output(path: &Option<PathBuf>, content: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

/// Binary dump of one trained solver: all integers u64 LE, all floats f64
/// LE. Header: step count, input dim, hidden dim, batch-norm site count.
/// Per step: parameter vector, then running mean and variance per site.
fn dump_solver(path: &str, solver: &TrainedSolver) -> Result<()> {
    let mut buf = Vec::new();
    let sites = solver.shape.bn_site_dims();
    for v in [
        solver.steps.len() as u64,
        solver.shape.input_dim as u64,
        solver.shape.hidden_dim as u64,
        sites.len() as u64,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for step in &solver.steps {
        for v in step.theta.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for site in &step.bn.sites {
            for v in site.running_mean.iter().chain(&site.running_var) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    opts: &CommonOpts,
    out: &Option<PathBuf>,
    log: &Option<PathBuf>,
    dump_nets: &Option<String>,
    dump_noise: &Option<String>,
    noise: &Option<PathBuf>,
) -> Result<bool> {
    let mut config = opts.build()?;
    let sequential =
        log.is_some() || dump_nets.is_some() || dump_noise.is_some() || noise.is_some();

    let report = if !sequential {
        run_experiment(&config)?
    } else {
        if noise.is_some() && config.runs != 1 {
            eprintln!("note: --noise replays one realization; forcing runs = 1");
            config.runs = 1;
        }
        let grid = config.grid()?;
        let mut log_file = match log {
            Some(p) => Some(fs::File::create(p)?),
            None => None,
        };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "n,m,loss,lr")?;
        }
        let mut rows = Vec::new();
        for r in 0..config.runs {
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "# run {r}")?;
            }
            let mut sink = |e: &TrainEvent| {
                if let Some(f) = log_file.as_mut() {
                    let _ = writeln!(f, "{},{},{},{}", e.step, e.iter, e.loss, e.lr);
                }
                if e.iter % 250 == 0 {
                    eprintln!(
                        "step {} | iter {} | loss {} | lr {}",
                        e.step, e.iter, e.loss, e.lr
                    );
                }
            };
            let replay = match noise {
                Some(p) => Some(NoiseRealization::from_csv(&fs::read_to_string(p)?)?),
                None => None,
            };
            let RunArtifacts {
                row,
                solver,
                noise: z,
            } = run_single_with(&config, r, replay, Some(&mut sink))?;
            if let (Some(prefix), Some(solver)) = (dump_nets, &solver) {
                dump_solver(&format!("{prefix}-run{r}.bin"), solver)?;
            }
            if let Some(prefix) = dump_noise {
                fs::write(format!("{prefix}-run{r}.csv"), z.to_csv(&grid))?;
            }
            rows.push(row);
        }
        let any_failed = rows.iter().any(|r| r.failed);
        let errors: Vec<f64> = rows.iter().map(|r| r.rel_error).collect();
        let summary = if any_failed {
            f64::NAN
        } else {
            deepsplit::experiment::rel_l2(&errors)?
        };
        deepsplit::experiment::ExperimentReport {
            problem: config.problem,
            dim: config.dim,
            rows,
            rel_l2: summary,
            any_failed,
        }
    };

    write_output(out, &report.to_csv())?;
    if report.any_failed {
        eprintln!(
            "warning: {} run(s) failed; summary is NaN",
            report.rows.iter().filter(|r| r.failed).count()
        );
    }
    Ok(report.any_failed)
}

fn cmd_oracle(opts: &CommonOpts, out: &Option<PathBuf>) -> Result<()> {
    let config = opts.build()?;
    let problem = config.spde_problem();
    let grid = config.grid()?;
    let mut csv = String::from("problem,d,run,reference\n");
    for r in 0..config.runs {
        let (mut noise_stream, _, mut oracle_stream) =
            deepsplit::experiment::run_streams(&config, r);
        let z = sample_noise(&problem, &grid, &mut noise_stream);
        let v = reference_value(&config, &problem, &grid, &z, &mut oracle_stream)?;
        csv.push_str(&format!(
            "{},{},{},{}\n",
            config.problem.as_str(),
            config.dim,
            r,
            v
        ));
    }
    write_output(out, &csv)
}

fn selftest() -> bool {
    let mut ok = true;
    let mut check = |name: &str, pass: bool, detail: String| {
        if pass {
            println!("ok   {name}");
        } else {
            println!("FAIL {name}: {detail}");
            ok = false;
        }
    };

    // normal sampler moments
    {
        let mut s = make_stream(1, 0);
        let n = 100_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let v = s.next_std_normal();
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        check(
            "rng-normal-moments",
            mean.abs() < 0.02 && (var - 1.0).abs() < 0.02,
            format!("mean {mean}, var {var}"),
        );
    }

    // Adam against an independent scalar recursion
    {
        use deepsplit::optim::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
        let mut stream = make_stream(2, 0);
        let mut theta = 0.3;
        let (mut m, mut v) = (0.0, 0.0);
        let mut state = AdamState::new(1);
        let mut pv = deepsplit::ParamVector(vec![0.3]);
        let mut worst: f64 = 0.0;
        for k in 0..100 {
            let g = stream.next_std_normal();
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g;
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g;
            let bc1 = 1.0 - ADAM_BETA1.powi(k + 1);
            let bc2 = 1.0 - ADAM_BETA2.powi(k + 1);
            theta -= 0.01 * (m / bc1) / ((v.abs() / bc2).sqrt() + ADAM_EPSILON);
            let (next, updated) = adam_step(
                &state,
                &pv,
                &[g],
                0.01,
                ADAM_BETA1,
                ADAM_BETA2,
                ADAM_EPSILON,
            );
            state = next;
            pv = updated;
            worst = worst.max((pv.0[0] - theta).abs());
        }
        check(
            "adam-scalar-recursion",
            worst <= 1e-12,
            format!("max deviation {worst:e}"),
        );
    }

    // parameter gradient vs finite differences
    {
        use deepsplit::nn::{
            init_params, net_forward_train, net_param_grad, InitScheme, NetworkShape,
        };
        let shape = NetworkShape::standard(3);
        let theta = init_params(&mut make_stream(3, 0), &shape, InitScheme::Uniform);
        let mut bstream = make_stream(3, 1);
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..3).map(|_| bstream.next_std_normal()).collect())
            .collect();
        let batch = deepsplit::Matrix::from_rows(&rows);
        let loss = |t: &deepsplit::ParamVector| -> f64 {
            let (out, _) = net_forward_train(&shape, t, &batch, 1e-3).unwrap();
            out.iter().map(|o| o * o).sum::<f64>() / out.len() as f64
        };
        let (out, cache) = net_forward_train(&shape, &theta, &batch, 1e-3).unwrap();
        let dout: Vec<f64> = out.iter().map(|o| 2.0 * o / out.len() as f64).collect();
        let (grad, _) = net_param_grad(&shape, &theta, &cache, &dout, 1e-3);
        let mut idx = make_stream(3, 2);
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let i = (idx.next_u64() % theta.len() as u64) as usize;
            let h = 1e-5;
            let mut up = theta.clone();
            up.0[i] += h;
            let mut dn = theta.clone();
            dn.0[i] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            let denom = grad.0[i].abs().max(fd.abs()).max(1e-4);
            worst = worst.max((fd - grad.0[i]).abs() / denom);
        }
        check(
            "gradient-finite-difference",
            worst <= 1e-5,
            format!("max rel err {worst:e}"),
        );
    }

    // per-problem regression-target identities
    {
        use deepsplit::problems::{div_mu_zakai, ProblemId, SpdeProblem};
        let hm = SpdeProblem::preset(ProblemId::HeatMultiplicative, 1);
        let (u, z, dt) = (1.7, 0.23, 0.02);
        let euler = u + u * z;
        let resid =
            hm.milstein_target(&[0.4], u, &[0.0], &[z], dt) - euler - u * (0.5 * z * z - 0.5 * dt);
        let zk = SpdeProblem::preset(ProblemId::Zakai, 10);
        let x0 = vec![0.0; 10];
        let gamma = zk.zakai.as_ref().unwrap().gamma;
        let zk_resid =
            zk.milstein_target(&x0, u, &x0, &vec![0.3; 10], dt) - u * (1.0 - gamma * 10.0 * dt);
        let div0 = div_mu_zakai(gamma, &x0) - gamma * 10.0;
        check(
            "target-map-identities",
            resid.abs() <= 1e-14 && zk_resid.abs() <= 1e-14 && div0.abs() <= 1e-14,
            format!("residuals {resid:e}, {zk_resid:e}, {div0:e}"),
        );
    }

    // error aggregation against a known block
    {
        let e = [0.0084, 0.0064, 0.0063, 0.0006, 0.0053];
        let l2 = deepsplit::rel_l2(&e).unwrap();
        check(
            "rel-l2-aggregation",
            (l2 - 0.0060).abs() <= 0.0001,
            format!("got {l2}"),
        );
    }

    ok
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run {
            opts,
            out,
            log,
            dump_nets,
            dump_noise,
            noise,
        } => match cmd_run(opts, out, log, dump_nets, dump_noise, noise) {
            Ok(false) => ExitCode::SUCCESS,
            Ok(true) => ExitCode::FAILURE,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Oracle { opts, out } => match cmd_oracle(opts, out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Selftest => {
            if selftest() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    };
    outcome
}
