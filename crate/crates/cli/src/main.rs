//! Experiment runner CLI.
//!
//! Exit codes: 0 success, 2 configuration error (bad flags, bad config
//! file, unknown preset), 3 runtime failure (I/O trouble or every
//! scheduled run failing).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use difmtrl::harness::{preset, run_experiment, ExperimentConfig, PRESET_NAMES};
use difmtrl::{Algorithm, Error};

#[derive(Parser)]
#[command(
    name = "difmtrl",
    version,
    about = "Decentralized multi-task subspace recovery simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-trial experiment from a preset or a TOML config file.
    Run(RunArgs),
    /// List built-in presets with their headline dimensions.
    ListPresets,
    /// Parse and validate a TOML config file, printing the resolved form.
    ValidateConfig {
        /// Path to the config file.
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Built-in preset name (see `list-presets`).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML config file to run instead of a preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the base seed.
    #[arg(long)]
    base_seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the worker thread count (0 = auto).
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated algorithm subset, e.g. `dif,dec`.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
}

fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut config = match (&args.preset, &args.config) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => ExperimentConfig::load(path)?,
        (None, None) => {
            return Err(Error::Config(
                "one of --preset or --config is required".into(),
            ));
        }
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    if let Some(seed) = args.base_seed {
        config.base_seed = seed;
    }
    if let Some(dir) = &args.out_dir {
        config.out_dir = Some(dir.clone());
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    if let Some(names) = &args.algorithms {
        config.algorithms = names
            .iter()
            .map(|s| Algorithm::from_str(s))
            .collect::<Result<Vec<_>, _>>()?;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode, Error> {
    let config = resolve_config(args)?;
    let summary = run_experiment(&config, None)?;
    let scheduled = config.trials * config.algorithms.len();
    println!("out dir: {}", summary.out_dir.display());
    println!(
        "trials: {} ({} of {} runs failed)",
        summary.trials_run, summary.failed_runs, scheduled
    );
    println!("final subspace distance, mean over trials:");
    for (algorithm, sd) in &summary.final_sd_by_algorithm {
        println!("  {:<22} {:>12.6e}", algorithm.to_string(), sd);
    }
    if summary.failed_runs == scheduled {
        eprintln!(
            "error: all {scheduled} runs failed; see metadata.json under {}",
            summary.out_dir.display(),
        );
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_list_presets() -> Result<(), Error> {
    println!(
        "{:<12} {:>5} {:>5} {:>3} {:>4} {:>4} {:>5} {:>6} {:>6} {:>7}  algorithms",
        "name", "d", "T", "r", "n", "L", "p", "T_gd", "T_con", "trials"
    );
    for name in PRESET_NAMES {
        let c = preset(name)?;
        let names: Vec<String> = c.algorithms.iter().map(|a| a.to_string()).collect();
        println!(
            "{:<12} {:>5} {:>5} {:>3} {:>4} {:>4} {:>5} {:>6} {:>6} {:>7}  {}",
            name,
            c.problem.d,
            c.problem.t,
            c.problem.r,
            c.problem.n,
            c.network.l,
            c.network.p,
            c.solver.t_gd,
            c.solver.t_con_gd,
            c.trials,
            names.join(","),
        );
    }
    Ok(())
}

fn cmd_validate(path: &Path) -> Result<(), Error> {
    let config = ExperimentConfig::load(path)?;
    print!("{}", config.to_toml_string());
    eprintln!("ok: {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::ListPresets => cmd_list_presets().map(|()| ExitCode::SUCCESS),
        Command::ValidateConfig { config } => cmd_validate(config).map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
