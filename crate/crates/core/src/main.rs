//! `stencilnet` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use stencilnet::config::RunConfig;
use stencilnet::equations::{reference_trajectory, sample_initial_condition, PdeKind};
use stencilnet::evaluation::{
    campaign, correlate, histogram, write_correlation_csv, write_histogram_csv, write_reports_csv, Feature,
};
use stencilnet::grid::{GridField, Trajectory};
use stencilnet::model::{Checkpoint, LearnedScheme};
use stencilnet::rng::{derive_seed, Purpose};
use stencilnet::schemes::{baseline_solve_with, DEFAULT_BLOWUP_THRESHOLD};
use stencilnet::training::{draw_samples, train};
use stencilnet::Error;

const OUT_DIR_ENV: &str = "STENCILNET_OUT_DIR";

#[derive(Parser)]
#[command(name = "stencilnet", version, about = "Learned stencil coefficients for 1D time-dependent PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Equation to use when no config is given.
    #[arg(long)]
    equation: Option<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the rollout horizon (steps).
    #[arg(long)]
    horizon: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory (default: $STENCILNET_OUT_DIR, else ./runs).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides train.epochs
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run a test campaign against the baseline.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file to evaluate
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides eval.n_cases
        #[arg(long)]
        n_cases: Option<usize>,
    },
    /// Solve one initial condition and write the trajectory and its reference.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Method::Baseline)]
        method: Method,
        /// Checkpoint file (required for --method finitenet)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Index of the initial condition within the seed's solve stream.
        #[arg(long, default_value_t = 0)]
        ic_seed: u64,
    },
    /// Precompute reference trajectories.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of initial conditions
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Print checkpoint metadata.
    Inspect {
        /// Checkpoint file
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Baseline,
    Finitenet,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(Error::BlowUp { .. }) => 2,
            CliError::Lib(Error::InvalidArgument(m)) if m.contains("non-finite") => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    equation: &'a str,
    jobs: usize,
    config_file: &'static str,
    artifacts: Vec<String>,
    config: &'a RunConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { common, epochs } => cmd_train(&common, epochs),
        Command::Evaluate {
            common,
            checkpoint,
            n_cases,
        } => cmd_evaluate(&common, &checkpoint, n_cases),
        Command::Solve {
            common,
            method,
            checkpoint,
            ic_seed,
        } => cmd_solve(&common, method, checkpoint.as_deref(), ic_seed),
        Command::GenData { common, count } => cmd_gen_data(&common, count),
        Command::Inspect { checkpoint } => cmd_inspect(&checkpoint),
    }
}

/// Config from `--config` or `--equation` (or `fallback`), with flag overrides applied.
fn load_config(common: &Common, fallback: Option<PdeKind>) -> CliResult<RunConfig> {
    let mut cfg = match (&common.config, &common.equation, fallback) {
        (Some(path), _, _) => RunConfig::load(path)?,
        (None, Some(eq), _) => RunConfig::default_for(PdeKind::parse(eq).map_err(|e| CliError::Usage(e.to_string()))?),
        (None, None, Some(kind)) => RunConfig::default_for(kind),
        (None, None, None) => return Err(CliError::Usage("either --config or --equation is required".into())),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(h) = common.horizon {
        cfg.train.horizon = h;
        cfg.eval.horizon = h;
    }
    if let Some(j) = common.jobs {
        cfg.train.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common) -> PathBuf {
    common
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn prepare(dir: &Path, command: &str, cfg: &RunConfig, artifacts: &[String]) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let mut all = vec!["config.toml".to_string(), "manifest.toml".to_string()];
    all.extend_from_slice(artifacts);
    let manifest = RunManifest {
        tool: "stencilnet",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.seed,
        equation: cfg.problem.equation.name(),
        jobs: cfg.train.jobs,
        config_file: "config.toml",
        artifacts: all,
        config: cfg,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Usage(e.to_string()))?;
    write_file(&dir.join("manifest.toml"), text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> CliResult<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::io(path, e))?;
    write_file(path, &buf)
}

fn cmd_train(common: &Common, epochs: Option<usize>) -> CliResult<()> {
    let mut cfg = load_config(common, None)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    let dir = out_dir(common);
    prepare(
        &dir,
        "train",
        &cfg,
        &[
            "train.log".into(),
            "loss.csv".into(),
            "checkpoint_epoch_NNNNNN.txt".into(),
            "checkpoint_final.txt".into(),
        ],
    )?;
    let problem = cfg.problem()?;
    let log_path = dir.join("train.log");
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut loss_csv = String::from("epoch,loss,grad_norm,blowups,dropped\n");
    let outcome = train(&problem, &cfg.model, &cfg.train, cfg.seed, |entry, ckpt| {
        if let Some(l) = entry {
            writeln!(log, "{}", l.line()).map_err(|e| Error::io(&log_path, e))?;
            loss_csv.push_str(&format!(
                "{},{:.16e},{:.16e},{},{}\n",
                l.epoch, l.loss, l.grad_norm, l.blowups, l.dropped
            ));
            eprintln!("{}", l.line());
        }
        if let Some(c) = ckpt {
            c.save(&dir.join(format!("checkpoint_epoch_{:06}.txt", c.epoch)))?;
        }
        Ok(())
    })?;
    write_file(&dir.join("loss.csv"), loss_csv.as_bytes())?;
    let final_ckpt = Checkpoint::new(&outcome.scheme, &outcome.params, cfg.train.epochs);
    final_ckpt.save(&dir.join("checkpoint_final.txt"))?;
    emit(&format!("wrote {}\n", dir.join("checkpoint_final.txt").display()))
}

fn scheme_from_checkpoint(cfg: &RunConfig, ckpt: &Checkpoint) -> CliResult<(LearnedScheme, stencilnet::model::ModelParams)> {
    if ckpt.equation != cfg.problem.equation {
        return Err(CliError::Usage(format!(
            "checkpoint was trained for {}, config describes {}",
            ckpt.equation, cfg.problem.equation
        )));
    }
    let problem = cfg.problem()?;
    let scheme = LearnedScheme::new(&problem.spec, problem.grid, &ckpt.model)?;
    let params = ckpt.params_for(&scheme)?;
    Ok((scheme, params))
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    if !path.exists() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn cmd_evaluate(common: &Common, checkpoint: &Path, n_cases: Option<usize>) -> CliResult<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let mut cfg = load_config(common, Some(ckpt.equation))?;
    if let Some(n) = n_cases {
        cfg.eval.n_cases = n;
    }
    cfg.validate()?;
    let (scheme, params) = scheme_from_checkpoint(&cfg, &ckpt)?;
    let dir = out_dir(common);
    prepare(
        &dir,
        "evaluate",
        &cfg,
        &[
            "summary.txt".into(),
            "reports.csv".into(),
            "histogram.csv".into(),
            "correlation.csv".into(),
        ],
    )?;
    let problem = cfg.problem()?;
    let (reports, summary) = campaign(
        &scheme,
        &params,
        &problem,
        cfg.eval.horizon,
        cfg.eval.n_cases,
        cfg.seed,
        cfg.train.jobs,
    )?;
    let text = summary.text();
    emit(&text)?;
    write_file(&dir.join("summary.txt"), text.as_bytes())?;
    write_with(&dir.join("reports.csv"), |b| write_reports_csv(&reports, b))?;
    let bins = if summary.n_scored > 0 {
        histogram(&reports, cfg.eval.bin_width)?
    } else {
        Vec::new()
    };
    write_with(&dir.join("histogram.csv"), |b| write_histogram_csv(&bins, b))?;
    let corrs = [
        correlate(&reports, Feature::IcTotalVariation),
        correlate(&reports, Feature::MaxDiscontinuity),
    ];
    write_with(&dir.join("correlation.csv"), |b| write_correlation_csv(&corrs, b))?;
    Ok(())
}

fn cmd_solve(common: &Common, method: Method, checkpoint: Option<&Path>, ic_seed: u64) -> CliResult<()> {
    let ckpt = match (method, checkpoint) {
        (Method::Finitenet, Some(p)) => Some(load_checkpoint(p)?),
        (Method::Finitenet, None) => return Err(CliError::Usage("--checkpoint is required for finitenet".into())),
        (Method::Baseline, Some(_)) => return Err(CliError::Usage("--checkpoint only applies to finitenet".into())),
        (Method::Baseline, None) => None,
    };
    let cfg = load_config(common, ckpt.as_ref().map(|c| c.equation))?;
    let dir = out_dir(common);
    prepare(&dir, "solve", &cfg, &["solution.csv".into(), "reference.csv".into(), "ic.toml".into()])?;
    let problem = cfg.problem()?;
    let n_steps = cfg.eval.horizon;
    let fine = problem.grid.refined(problem.refine)?;
    let ic = sample_initial_condition(
        &problem.spec,
        &problem.ic,
        derive_seed(cfg.seed, Purpose::SolveIc, ic_seed),
        fine,
    )?;
    let reference = reference_trajectory(&problem.spec, &ic, problem.grid, problem.dt, n_steps, problem.refine)?;
    write_file(&dir.join("ic.toml"), ic.descriptor.to_record().as_bytes())?;
    write_with(&dir.join("reference.csv"), |b| reference.write_csv(b))?;
    let start = GridField::new(problem.grid, reference.frames[0].clone())?;
    let (traj, blowup) = match ckpt {
        None => match baseline_solve_with(&problem.spec, &start, problem.dt, n_steps, DEFAULT_BLOWUP_THRESHOLD) {
            Ok(t) => (t, None),
            Err(Error::BlowUp { frame }) => {
                // rerun to keep the frames before the blow-up
                let t = baseline_solve_with(&problem.spec, &start, problem.dt, frame - 1, f64::INFINITY)?;
                (t, Some(frame))
            }
            Err(e) => return Err(e.into()),
        },
        Some(c) => {
            let (scheme, params) = scheme_from_checkpoint(&cfg, &c)?;
            let out = scheme.rollout_with(&params, &start.values, problem.dt, n_steps, DEFAULT_BLOWUP_THRESHOLD, None);
            (out.trajectory, out.blowup)
        }
    };
    write_with(&dir.join("solution.csv"), |b| traj.write_csv(b))?;
    if let Some(frame) = blowup {
        return Err(Error::BlowUp { frame }.into());
    }
    let mse = stencilnet::grid::trajectory_mse(&traj, &reference)?;
    emit(&format!("frames = {}\nmse = {mse:.6e}\n", traj.n_frames()))
}

fn cmd_gen_data(common: &Common, count: usize) -> CliResult<()> {
    let cfg = load_config(common, None)?;
    let dir = out_dir(common);
    prepare(
        &dir,
        "gen-data",
        &cfg,
        &["reference_NNNNNN.csv".into(), "ic_NNNNNN.toml".into()],
    )?;
    let problem = cfg.problem()?;
    for j in 0..count {
        let sample = draw_samples(&problem, cfg.eval.horizon, cfg.seed, Purpose::EvalIc, j as u64, 1, None)?.remove(0);
        write_file(&dir.join(format!("ic_{j:06}.toml")), sample.descriptor.to_record().as_bytes())?;
        let traj: &Trajectory = &sample.reference;
        write_with(&dir.join(format!("reference_{j:06}.csv")), |b| traj.write_csv(b))?;
    }
    emit(&format!("wrote {count} reference trajectories to {}\n", dir.display()))
}

fn cmd_inspect(checkpoint: &Path) -> CliResult<()> {
    let c = load_checkpoint(checkpoint)?;
    let mut t = String::new();
    t += &format!("equation = {}\n", c.equation);
    t += &format!("epoch = {}\n", c.epoch);
    t += &format!("hidden = {}\n", c.model.hidden);
    t += &format!("head_width = {}\n", c.model.head_width);
    t += &format!("head_layers = {}\n", c.model.head_layers);
    t += &format!("input_scale = {}\n", c.model.input_scale);
    t += &format!("input_mode = {}\n", c.model.input_mode.name());
    t += &format!("accuracy_order = {}\n", c.model.accuracy_order);
    for (kind, n) in &c.constraint_orders {
        t += &format!("constraint = {kind:?} order {n}\n");
    }
    t += &format!("n_params = {}\n", c.params.len());
    let norm = c.params.iter().map(|v| v * v).sum::<f64>().sqrt();
    t += &format!("param_norm = {norm:.6e}\n");
    emit(&t)
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e).into()),
        _ => Ok(()),
    }
}
