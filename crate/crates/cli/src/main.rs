use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thrustsim::agent::{self, Checkpoint, PolicyNet, TrainConfig, CURVE_HEADER};
use thrustsim::evalkit::{self, EvalOptions, ReportContext};
use thrustsim::planner::{self, PathShape, PolicyTracker, ScriptedTracker, VelocityTracker};
use thrustsim::tasks::TaskKind;
use thrustsim::{AgentError, EvalError, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "thrustsim",
    version,
    about = "Train, evaluate and benchmark thruster-controlled spacecraft agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a PPO agent and write a checkpoint and learning curve.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a batch of episodes.
    Eval(EvalArgs),
    /// Follow a reference path with a velocity-tracking checkpoint.
    Track(TrackArgs),
    /// Measure environment stepping throughput.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task kind, overriding the configuration.
    #[arg(long, value_parser = parse_task)]
    task: Option<TaskKind>,
    /// Stepping threads.
    #[arg(long, env = "THRUSTSIM_WORKERS", default_value_t = 1)]
    workers: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    num_envs: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    num_envs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Sample actions instead of the per-head argmax.
    #[arg(long)]
    stochastic: bool,
    #[arg(long, default_value = "runs/eval")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrackArgs {
    /// Velocity-tracking checkpoint; required unless --scripted is set.
    #[arg(long, required_unless_present = "scripted")]
    checkpoint: Option<PathBuf>,
    /// Replace the policy with an ideal tracker that follows commands exactly.
    #[arg(long)]
    scripted: bool,
    #[arg(long, value_parser = parse_shape)]
    shape: PathShape,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Control steps; defaults to one traversal at cruise speed.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    stochastic: bool,
    #[arg(long, default_value = "runs/track")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 4096)]
    num_envs: usize,
    #[arg(long, default_value_t = 200)]
    steps: usize,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse::<TaskKind>().map_err(|e| e.to_string())
}

fn parse_shape(s: &str) -> Result<PathShape, String> {
    s.parse::<PathShape>().map_err(|e| e.to_string())
}

/// Failure classes and their exit codes.
#[derive(Debug)]
enum Failure {
    Config(String),
    Numeric(String),
    Mismatch(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Mismatch(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numeric(m) | Failure::Mismatch(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<AgentError> for Failure {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::NonFiniteLoss { .. } => Failure::Numeric(e.to_string()),
            AgentError::InvalidHyperparams(_) | AgentError::Env(_) => Failure::Config(e.to_string()),
            AgentError::ShapeMismatch(_) | AgentError::Checkpoint(_) => Failure::Mismatch(e.to_string()),
            AgentError::Io(_) => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::PolicyTaskMismatch { .. } => Failure::Mismatch(e.to_string()),
            EvalError::Agent(a) => a.into(),
            EvalError::Env(_) => Failure::Config(e.to_string()),
            EvalError::EmptyInput | EvalError::Io(_) => Failure::Runtime(e.to_string()),
        }
    }
}

fn io_fail(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn load_config(path: Option<&Path>, task: Option<TaskKind>) -> Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Config(e.message))?,
        None => RunConfig::default(),
    };
    if let Some(kind) = task {
        cfg.task.kind = kind;
        cfg.validate().map_err(|e| Failure::Config(e.message))?;
    }
    Ok(cfg)
}

fn banner(name: &str, cfg: &RunConfig) -> String {
    format!(
        "# thrustsim {name} version={} config_hash={}\n",
        thrustsim::VERSION,
        cfg.hash()
    )
}

fn write_manifest(out: &Path, cfg: &RunConfig, lines: &[(&str, String)]) -> Result<(), Failure> {
    let mut text = format!(
        "version={}\nconfig_hash={}\ntask={}\n",
        thrustsim::VERSION,
        cfg.hash(),
        cfg.task.kind
    );
    for (k, v) in lines {
        text.push_str(&format!("{k}={v}\n"));
    }
    evalkit::manifest_defaults(&mut text, &cfg.resolved());
    let path = out.join(evalkit::MANIFEST_FILE);
    fs::write(&path, text).map_err(io_fail(&path))?;
    let path = out.join(evalkit::RESOLVED_CONFIG_FILE);
    fs::write(&path, cfg.resolved().to_toml()).map_err(io_fail(&path))
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg = load_config(args.common.config.as_deref(), args.common.task)?;
    if let Some(n) = args.num_envs {
        cfg.ppo.n_envs = n;
    }
    if let Some(e) = args.epochs {
        cfg.ppo.epochs = e;
    }
    cfg.validate().map_err(|e| Failure::Config(e.message))?;
    fs::create_dir_all(&args.out).map_err(io_fail(&args.out))?;
    write_manifest(
        &args.out,
        &cfg,
        &[("command", "train".into()), ("seed", args.seed.to_string())],
    )?;

    let ckpt_path = args.out.join("checkpoint.txt");
    let curve_path = args.out.join("curve.csv");
    let mut curve_text = banner("curve", &cfg);
    curve_text.push_str(CURVE_HEADER);
    curve_text.push('\n');
    fs::write(&curve_path, &curve_text).map_err(io_fail(&curve_path))?;

    let every = cfg.ppo.checkpoint_every;
    let tc = TrainConfig {
        run: cfg.clone(),
        seed: args.seed,
        workers: args.common.workers,
    };
    let mut io_error = None;
    let outcome = agent::train_with(&tc, |row, net| {
        curve_text.push_str(&row.to_csv());
        curve_text.push('\n');
        let mut result = fs::write(&curve_path, &curve_text).map_err(io_fail(&curve_path));
        if result.is_ok() && every > 0 && (row.epoch + 1) % every == 0 {
            result = Checkpoint::new(cfg.clone(), net.clone(), row.epoch + 1)
                .save(&ckpt_path)
                .map_err(Failure::from);
        }
        eprintln!(
            "epoch {:>5}  return {:>9.3}  final_err {:>7.3}  entropy {:>6.3}  {:>8.0} steps/s",
            row.epoch, row.mean_return, row.mean_final_distance, row.entropy, row.steps_per_second
        );
        match result {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                io_error = Some(e);
                ControlFlow::Break(())
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    let epochs = outcome.curve.len();
    Checkpoint::new(cfg, outcome.net, epochs).save(&ckpt_path)?;
    println!("checkpoint={}", ckpt_path.display());
    println!("curve={}", curve_path.display());
    Ok(())
}

/// Loads a checkpoint and the configuration to run it under.
fn checkpoint_and_config(
    path: &Path,
    config: Option<&Path>,
    task: Option<TaskKind>,
) -> Result<(Checkpoint, RunConfig), Failure> {
    let ck = Checkpoint::load(path).map_err(|e| match e {
        AgentError::Io(io) => Failure::Config(format!("{}: {io}", path.display())),
        other => Failure::Mismatch(format!("{}: {other}", path.display())),
    })?;
    let mismatch = |kind: TaskKind| {
        Failure::Mismatch(format!(
            "checkpoint was trained on {} but the run is configured for {kind}",
            ck.task()
        ))
    };
    if let Some(kind) = task.filter(|&k| k != ck.task()) {
        return Err(mismatch(kind));
    }
    let cfg = match config {
        Some(_) => load_config(config, task)?,
        None => ck.config.clone(),
    };
    if cfg.task.kind != ck.task() {
        return Err(mismatch(cfg.task.kind));
    }
    Ok((ck, cfg))
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let (ck, mut cfg) = checkpoint_and_config(&args.checkpoint, args.common.config.as_deref(), args.common.task)?;
    if let Some(n) = args.num_envs {
        cfg.eval.n_envs = n;
    }
    if let Some(s) = args.steps {
        cfg.eval.steps = s;
    }
    if args.stochastic {
        cfg.eval.stochastic = true;
    }
    cfg.validate().map_err(|e| Failure::Config(e.message))?;
    let mut opts = EvalOptions::from_config(&cfg, args.seed);
    opts.workers = args.common.workers;
    let metrics = evalkit::run_eval(&ck.net, &cfg, &opts)?;
    let summary = evalkit::summarize(&metrics)?;
    let ctx = ReportContext {
        config: &cfg,
        seed: args.seed,
        opts,
        policy_source: args.checkpoint.display().to_string(),
    };
    evalkit::write_report(&metrics, &summary, &ctx, &args.out)?;
    let episodes = metrics.episodes();
    let success = episodes.iter().filter(|e| e.success()).count() as f64 / episodes.len() as f64;
    println!("task={}", cfg.task.kind);
    println!("n_envs={} steps={}", opts.n_envs, opts.steps);
    println!("mean_final_distance={:.6}", metrics.mean_final_distance());
    let rot = metrics.mean_final_rotation_error();
    if !rot.is_nan() {
        println!("mean_final_rotation_error={rot:.6}");
    }
    println!("success_rate={success:.4}");
    println!("report={}", args.out.display());
    Ok(())
}

fn cmd_track(args: TrackArgs) -> Result<(), Failure> {
    let (net, cfg): (Option<PolicyNet>, RunConfig) = match &args.checkpoint {
        Some(path) if !args.scripted => {
            let (ck, cfg) = checkpoint_and_config(path, args.config.as_deref(), None)?;
            if ck.task() != TaskKind::TrackXYVelocity {
                return Err(Failure::Mismatch(format!(
                    "path following needs a trackxyvelocity checkpoint, got {}",
                    ck.task()
                )));
            }
            (Some(ck.net), cfg)
        }
        _ => (
            None,
            load_config(args.config.as_deref(), Some(TaskKind::TrackXYVelocity))?,
        ),
    };
    let path = planner::gen_path(args.shape, &cfg.planner).map_err(|e| Failure::Config(e.to_string()))?;
    let control_dt = 1.0 / f64::from(cfg.sim.control_hz);
    let steps = args
        .steps
        .unwrap_or_else(|| planner::lap_steps(&path, &cfg.planner, control_dt));
    let mut tracker: Box<dyn VelocityTracker> = match net {
        Some(net) => Box::new(PolicyTracker::new(net, &cfg, args.seed, steps, args.stochastic)?),
        None => Box::new(ScriptedTracker::new(control_dt)),
    };
    let log = planner::follow(tracker.as_mut(), &path, &cfg.planner, steps)?;
    fs::create_dir_all(&args.out).map_err(io_fail(&args.out))?;
    let mut text = banner("tracking", &cfg).into_bytes();
    log.write_csv(&mut text).map_err(|e| Failure::Runtime(e.to_string()))?;
    let log_path = args.out.join("tracking.csv");
    fs::write(&log_path, text).map_err(io_fail(&log_path))?;
    write_manifest(
        &args.out,
        &cfg,
        &[
            ("command", "track".into()),
            ("shape", args.shape.to_string()),
            (
                "tracker",
                if args.scripted || args.checkpoint.is_none() {
                    "scripted".into()
                } else {
                    "policy".into()
                },
            ),
            ("seed", args.seed.to_string()),
            ("steps", steps.to_string()),
        ],
    )?;
    println!("shape={}", args.shape);
    println!("steps={steps}");
    println!("mean_speed_error={:.6}", log.mean_speed_error());
    println!("log={}", log_path.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    let cfg = load_config(args.common.config.as_deref(), args.common.task)?;
    let report = thrustsim::vecenv::bench(&cfg, args.num_envs, args.steps, args.common.workers)
        .map_err(|e| Failure::Config(e.to_string()))?;
    print!("{}", report.to_kv());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Track(a) => cmd_track(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
