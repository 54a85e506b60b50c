//! `piezoleg`: calibration, identification, validation, gait sweeps,
//! baselines and reports from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use piezoleg::gait::{GaitKind, Matching};
use piezoleg::harness::{
    self, load_or_prepare, read_rows, run_baseline, run_sweep, sweep_path, write_json, write_report,
    Environment, ExperimentConfig, HarnessError, Pipeline, CALIBRATION_FILE, MODEL_FILE,
};

#[derive(Debug, Parser)]
#[command(name = "piezoleg", version, about = "Proprioceptive control experiments for piezo-legged microrobots")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for batch runs.
    #[arg(long, global = true, default_value_t = default_workers())]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fits encoder offsets and velocity scales for every actuator.
    Calibrate,
    /// Identifies the process model and designs the feedback gain.
    Identify,
    /// Estimation error with feedback disabled, in air and on the ground.
    ValidateEstimator,
    /// Closed-loop tracking error, in air and on the ground.
    ValidateController,
    /// Runs the full gait grid on the ground.
    Sweep {
        #[arg(long)]
        gait: GaitKind,
    },
    /// Sinusoid trials matched to the best sweep trials.
    Baseline {
        #[arg(long)]
        matching: Matching,
    },
    /// Best-performance tables per frequency.
    Report {
        /// Directories to aggregate. Defaults to the output directory.
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let path = cli.config.as_deref().expect("checked by main");
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<Pipeline, HarnessError> {
    let (calibration, model) = load_or_prepare(cfg, out)?;
    Pipeline::new(cfg.clone(), calibration, model)
}

fn run(cli: &Cli) -> Result<serde_json::Value, HarnessError> {
    let cfg = load_config(cli)?;
    let out = cfg.resolve_output_dir(cli.out.as_deref());
    let envs = [Environment::InAir, Environment::Ground];
    let value = match &cli.command {
        Command::Calibrate => {
            let c = harness::calibrate(&cfg)?;
            write_json(&out.join(CALIBRATION_FILE), &c)?;
            serde_json::json!({ "written": out.join(CALIBRATION_FILE) })
        }
        Command::Identify => {
            let m = harness::identify(&cfg)?;
            write_json(&out.join(MODEL_FILE), &m)?;
            serde_json::json!({
                "written": out.join(MODEL_FILE),
                "validation_error": m.validation_error,
            })
        }
        Command::ValidateEstimator => {
            let p = pipeline(&cfg, &out)?;
            let rows = harness::validate_estimator(&p, &envs, &cfg.validation.frequencies_hz)?;
            let path = out.join("validate_estimator.json");
            write_json(&path, &rows)?;
            serde_json::json!({ "written": path, "rows": rows })
        }
        Command::ValidateController => {
            let p = pipeline(&cfg, &out)?;
            let rows = harness::validate_controller(&p, &envs, &cfg.validation.frequencies_hz)?;
            let path = out.join("validate_controller.json");
            write_json(&path, &rows)?;
            serde_json::json!({ "written": path, "rows": rows })
        }
        Command::Sweep { gait } => {
            let p = pipeline(&cfg, &out)?;
            let (_, summary) = run_sweep(&p, *gait, &out, cli.workers)?;
            if summary.failed > 0 {
                log::warn!("{} of {} trials failed", summary.failed, summary.trials);
            }
            serde_json::to_value(&summary).map_err(|e| HarnessError::Format(e.to_string()))?
        }
        Command::Baseline { matching } => {
            let p = pipeline(&cfg, &out)?;
            let mut sweeps = Vec::new();
            for gait in [GaitKind::Trot, GaitKind::Pronk] {
                match read_rows(&sweep_path(&out, gait)) {
                    Ok(rows) => sweeps.extend(rows),
                    Err(HarnessError::MissingModel(path)) => log::info!("no sweep at {path}"),
                    Err(e) => return Err(e),
                }
            }
            if sweeps.is_empty() {
                return Err(HarnessError::MissingModel(sweep_path(&out, GaitKind::Trot).display().to_string()));
            }
            let rows = run_baseline(&p, *matching, &sweeps, &out, cli.workers)?;
            serde_json::json!({ "matching": matching, "trials": rows.len() })
        }
        Command::Report { input } => {
            let dirs = if input.is_empty() { vec![out.clone()] } else { input.clone() };
            let r = harness::report(&dirs)?;
            write_report(&out, &r)?;
            print!("{}", r.to_table());
            return Ok(serde_json::Value::Null);
        }
    };
    Ok(value)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match cli.config.as_deref() {
        None => {
            eprintln!("error: --config <PATH> is required\n\nUsage: piezoleg --config <PATH> <COMMAND>");
            return ExitCode::from(2);
        }
        Some(p) if !p.is_file() => {
            eprintln!("error: config file {} not found\n\nUsage: piezoleg --config <PATH> <COMMAND>", p.display());
            return ExitCode::from(2);
        }
        Some(_) => {}
    }
    match run(&cli) {
        Ok(serde_json::Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let err = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{err}");
            ExitCode::from(1)
        }
    }
}
