//! Multi-trial experiment runner.
//!
//! A run is a pure function of (config, base seed): trial seeds come from
//! a splittable counter-based derivation so adding trials never perturbs
//! earlier ones, trials execute on a worker pool, and one collector
//! writes per-trial raw CSV, two aggregate CSVs (by iteration and by
//! simulated-time bucket), and a metadata file after all trials finish.
//! Reruns with the same config produce byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{CommModel, RunTrace};
use crate::rng::trial_seed;
use crate::solvers::{run_solver, Algorithm, EtaRule, SolverConfig};
use crate::spectral_init::InitConfig;
use crate::synth::{generate_problem, ProblemInstance};
use crate::topology::{MixingScheme, Network};

/// Ground-truth problem dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemSettings {
    pub d: usize,
    /// Task count, `T`.
    pub t: usize,
    pub r: usize,
    /// Samples per task.
    pub n: usize,
    /// Target condition number of the planted factor.
    pub kappa: f64,
}

impl Default for ProblemSettings {
    fn default() -> Self {
        ProblemSettings {
            d: 40,
            t: 40,
            r: 2,
            n: 20,
            kappa: 1.5,
        }
    }
}

/// Communication-graph sampling parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSettings {
    /// Node count, `L`.
    pub l: usize,
    /// Erdos-Renyi edge probability.
    pub p: f64,
    pub scheme: MixingScheme,
    /// Connected-graph retry budget per trial.
    pub max_retries: usize,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        NetworkSettings {
            l: 4,
            p: 0.6,
            scheme: MixingScheme::Metropolis,
            max_retries: 50,
        }
    }
}

/// Solver schedule shared by every algorithm in the experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub t_gd: usize,
    pub t_con_gd: usize,
    pub eta_rule: EtaRule,
    pub eta_constant: f64,
    pub square_sigma_hat: bool,
    pub use_sample_split: bool,
    pub centralized_own_init: bool,
    pub init: InitConfig,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let base = SolverConfig::default();
        SolverSettings {
            t_gd: base.t_gd,
            t_con_gd: base.t_con_gd,
            eta_rule: base.eta_rule,
            eta_constant: base.eta_constant,
            square_sigma_hat: base.square_sigma_hat,
            use_sample_split: base.use_sample_split,
            centralized_own_init: base.centralized_own_init,
            init: base.init,
        }
    }
}

impl SolverSettings {
    pub fn to_config(self, algorithm: Algorithm) -> SolverConfig {
        SolverConfig {
            algorithm,
            t_gd: self.t_gd,
            t_con_gd: self.t_con_gd,
            eta_rule: self.eta_rule,
            eta_constant: self.eta_constant,
            square_sigma_hat: self.square_sigma_hat,
            use_sample_split: self.use_sample_split,
            centralized_own_init: self.centralized_own_init,
            init: self.init,
        }
    }
}

/// One full experiment description; loadable from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Preset the config was derived from, if any.
    pub preset: Option<String>,
    pub problem: ProblemSettings,
    pub network: NetworkSettings,
    pub solver: SolverSettings,
    pub comm: CommModel,
    pub algorithms: Vec<Algorithm>,
    pub trials: usize,
    pub base_seed: u64,
    /// Output directory; a CLI flag may override it.
    pub out_dir: Option<PathBuf>,
    /// Worker threads for trial execution; 0 picks the host parallelism.
    pub workers: usize,
    /// Width of the simulated-time aggregation buckets, seconds.
    pub time_bucket_s: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preset: None,
            problem: ProblemSettings::default(),
            network: NetworkSettings::default(),
            solver: SolverSettings::default(),
            comm: CommModel::default(),
            algorithms: Algorithm::ALL.to_vec(),
            trials: 1,
            base_seed: 0,
            out_dir: None,
            workers: 0,
            time_bucket_s: 0.1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("at least one algorithm is required".into()));
        }
        if self.network.l == 0 {
            return Err(Error::Config("network.l must be >= 1".into()));
        }
        if self.time_bucket_s.is_nan() || self.time_bucket_s <= 0.0 {
            return Err(Error::Config("time_bucket_s must be positive".into()));
        }
        let mut seen = Vec::new();
        for &a in &self.algorithms {
            if seen.contains(&a) {
                return Err(Error::Config(format!("algorithm {a} listed twice")));
            }
            seen.push(a);
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Valid preset names, in listing order.
pub const PRESET_NAMES: [&str; 9] = [
    "fig1a",
    "fig1b",
    "fig1c",
    "fig2a",
    "fig2b",
    "fig2c",
    "fig1a-desk",
    "fig2a-desk",
    "smoke",
];

/// Builds a named preset.
///
/// The `fig1*` and `fig2*` presets reproduce the two full-scale
/// experiments (hundreds of trials; long-running); the `-desk` variants
/// scale the dimensions down for CI budgets, and `smoke` finishes in
/// seconds. All presets pin the oracle step-size rule: the estimated rule
/// inherits a scale bias from the initialization broadcast that makes it
/// unstable at these node counts.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig {
        preset: Some(name.to_string()),
        solver: SolverSettings {
            eta_rule: EtaRule::TheoremExact,
            ..SolverSettings::default()
        },
        ..ExperimentConfig::default()
    };
    let fig1_problem = ProblemSettings {
        d: 600,
        t: 600,
        r: 4,
        n: 30,
        kappa: 1.5,
    };
    let fig2_problem = ProblemSettings {
        d: 100,
        t: 100,
        r: 10,
        n: 50,
        kappa: 1.5,
    };
    match name {
        "fig1a" | "fig1b" | "fig1c" => {
            let t_con = match name {
                "fig1a" => 10,
                "fig1b" => 20,
                _ => 30,
            };
            config.problem = fig1_problem;
            config.network = NetworkSettings {
                l: 20,
                p: 0.5,
                ..NetworkSettings::default()
            };
            config.solver.t_gd = 500;
            config.solver.t_con_gd = t_con;
            config.solver.init = InitConfig {
                t_pm: 100,
                t_con_init: t_con,
                ..InitConfig::default()
            };
            config.trials = 100;
            config.base_seed = 101;
        }
        "fig2a" | "fig2b" | "fig2c" => {
            let p = match name {
                "fig2a" => 0.05,
                "fig2b" => 0.1,
                _ => 0.15,
            };
            config.problem = fig2_problem;
            config.network = NetworkSettings {
                l: 100,
                p,
                ..NetworkSettings::default()
            };
            config.solver.t_gd = 1500;
            config.solver.t_con_gd = 10;
            config.solver.init = InitConfig {
                t_pm: 100,
                t_con_init: 10,
                ..InitConfig::default()
            };
            config.algorithms = vec![Algorithm::DifAltGdmin, Algorithm::DecAltGdmin];
            config.trials = 100;
            config.base_seed = 202;
        }
        "fig1a-desk" => {
            config.problem = ProblemSettings {
                d: 120,
                t: 120,
                r: 4,
                n: 30,
                kappa: 1.5,
            };
            config.network = NetworkSettings {
                l: 10,
                p: 0.5,
                ..NetworkSettings::default()
            };
            config.solver.t_gd = 300;
            config.solver.t_con_gd = 10;
            config.solver.init = InitConfig {
                t_pm: 100,
                t_con_init: 10,
                ..InitConfig::default()
            };
            config.trials = 20;
            config.base_seed = 101;
        }
        "fig2a-desk" => {
            config.problem = ProblemSettings {
                d: 60,
                t: 60,
                r: 5,
                n: 40,
                kappa: 1.5,
            };
            config.network = NetworkSettings {
                l: 60,
                p: 0.1,
                ..NetworkSettings::default()
            };
            config.solver.t_gd = 300;
            config.solver.t_con_gd = 10;
            config.solver.init = InitConfig {
                t_pm: 100,
                t_con_init: 10,
                ..InitConfig::default()
            };
            config.algorithms = vec![Algorithm::DifAltGdmin, Algorithm::DecAltGdmin];
            config.trials = 20;
            config.base_seed = 202;
        }
        "smoke" => {
            config.problem = ProblemSettings {
                d: 40,
                t: 40,
                r: 2,
                n: 20,
                kappa: 1.5,
            };
            config.network = NetworkSettings {
                l: 4,
                p: 0.6,
                ..NetworkSettings::default()
            };
            config.solver.t_gd = 50;
            config.solver.t_con_gd = 5;
            config.solver.init = InitConfig {
                t_pm: 25,
                t_con_init: 5,
                ..InitConfig::default()
            };
            config.trials = 2;
            config.base_seed = 7;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; valid presets: {}",
                PRESET_NAMES.join(", ")
            )));
        }
    }
    config.out_dir = Some(PathBuf::from(format!("runs/{name}")));
    Ok(config)
}

/// Outcome of one (trial, algorithm) run.
#[derive(Debug)]
struct AlgorithmRun {
    algorithm: Algorithm,
    result: std::result::Result<RunTrace, String>,
}

/// Outcome of one trial: either problem/network setup failed, or per-run
/// results.
#[derive(Debug)]
struct TrialOutput {
    trial: usize,
    seed: u64,
    setup: std::result::Result<TrialSetupInfo, String>,
    runs: Vec<AlgorithmRun>,
}

#[derive(Debug, Clone, Copy)]
struct TrialSetupInfo {
    gamma: f64,
    er_attempts: usize,
    mu_measured: f64,
}

/// Per-run metadata entry.
#[derive(Debug, Serialize)]
struct RunMeta {
    algorithm: String,
    error: Option<String>,
    eta_min: Option<f64>,
    eta_max: Option<f64>,
    sigma_hat_sq_min: Option<f64>,
    sigma_hat_sq_max: Option<f64>,
    final_sd_node1: Option<f64>,
    max_orth_defect: Option<f64>,
    messages: Option<u64>,
    bytes: Option<u64>,
    sim_time_s: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TrialMeta {
    trial: usize,
    seed: u64,
    error: Option<String>,
    gamma: Option<f64>,
    er_attempts: Option<usize>,
    mu_measured: Option<f64>,
    runs: Vec<RunMeta>,
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    version: &'static str,
    config: &'a ExperimentConfig,
    failed_runs: usize,
    trials: Vec<TrialMeta>,
}

/// Summary returned to the caller after all files are written.
#[derive(Debug)]
pub struct ExperimentSummary {
    pub out_dir: PathBuf,
    pub trials_run: usize,
    pub failed_runs: usize,
    /// Mean over successful trials of the final node-1 subspace
    /// distance, per algorithm in config order.
    pub final_sd_by_algorithm: Vec<(Algorithm, f64)>,
}

fn build_trial_problem(config: &ExperimentConfig, seed: u64) -> Result<ProblemInstance> {
    let p = &config.problem;
    let problem = generate_problem(p.d, p.t, p.r, p.n, p.kappa, seed)?;
    if config.solver.use_sample_split {
        problem.sample_split(config.solver.t_gd)
    } else {
        Ok(problem)
    }
}

fn run_trial(config: &ExperimentConfig, trial: usize) -> TrialOutput {
    let seed = trial_seed(config.base_seed, trial);
    let setup = (|| -> Result<(ProblemInstance, Network)> {
        let problem = build_trial_problem(config, seed)?;
        let net = Network::sample(
            config.network.l,
            config.network.p,
            config.problem.t,
            config.network.scheme,
            seed,
            config.network.max_retries,
        )?;
        Ok((problem, net))
    })();

    match setup {
        Err(e) => TrialOutput {
            trial,
            seed,
            setup: Err(e.to_string()),
            runs: Vec::new(),
        },
        Ok((problem, net)) => {
            let info = TrialSetupInfo {
                gamma: net.gamma,
                er_attempts: net.er_attempts,
                mu_measured: problem.mu_measured,
            };
            let runs = config
                .algorithms
                .iter()
                .map(|&algorithm| {
                    let solver_config = config.solver.to_config(algorithm);
                    let result = run_solver(&problem, &net, &solver_config, &config.comm, seed)
                        .map_err(|e| e.to_string());
                    AlgorithmRun { algorithm, result }
                })
                .collect();
            TrialOutput {
                trial,
                seed,
                setup: Ok(info),
                runs,
            }
        }
    }
}

fn annotate_io(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn fmt_float(v: f64) -> String {
    format!("{v:.11e}")
}

const CSV_HEADER: &str = "trial,algorithm,tau,sd_max,sd_mean,rho,psi,cons_err,cons_err_proj,\
messages_cum,bytes_cum,sim_time_s,sd_node1";

fn trace_csv_rows(out: &mut String, trial: usize, algorithm: Algorithm, trace: &RunTrace) {
    for rec in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            trial,
            algorithm,
            rec.tau,
            fmt_float(rec.sd_max),
            fmt_float(rec.sd_mean),
            fmt_float(rec.rho),
            fmt_float(rec.psi),
            fmt_float(rec.cons_err),
            fmt_float(rec.cons_err_proj),
            rec.messages_cum,
            rec.bytes_cum,
            fmt_float(rec.sim_time_s),
            fmt_float(rec.sd_node1),
        );
    }
}

#[derive(Default, Clone)]
struct MeanAcc {
    count: u64,
    sd_node1: f64,
    sd_max: f64,
    sd_mean: f64,
    rho: f64,
    psi: f64,
    cons_err: f64,
    cons_err_proj: f64,
    messages: f64,
    bytes: f64,
    sim_time_s: f64,
}

impl MeanAcc {
    fn push(&mut self, rec: &crate::metrics::IterationRecord) {
        self.count += 1;
        self.sd_node1 += rec.sd_node1;
        self.sd_max += rec.sd_max;
        self.sd_mean += rec.sd_mean;
        self.rho += rec.rho;
        self.psi += rec.psi;
        self.cons_err += rec.cons_err;
        self.cons_err_proj += rec.cons_err_proj;
        self.messages += rec.messages_cum as f64;
        self.bytes += rec.bytes_cum as f64;
        self.sim_time_s += rec.sim_time_s;
    }

    fn row(&self, prefix: &str) -> String {
        let n = self.count as f64;
        format!(
            "{prefix},{},{},{},{},{},{},{},{},{},{},{}",
            self.count,
            fmt_float(self.sd_node1 / n),
            fmt_float(self.sd_max / n),
            fmt_float(self.sd_mean / n),
            fmt_float(self.rho / n),
            fmt_float(self.psi / n),
            fmt_float(self.cons_err / n),
            fmt_float(self.cons_err_proj / n),
            fmt_float(self.messages / n),
            fmt_float(self.bytes / n),
            fmt_float(self.sim_time_s / n),
        )
    }
}

const AGG_TAU_HEADER: &str = "algorithm,tau,records,sd_node1,sd_max,sd_mean,rho,psi,cons_err,\
cons_err_proj,messages_cum,bytes_cum,sim_time_s";
const AGG_TIME_HEADER: &str = "algorithm,bucket_start_s,records,sd_node1,sd_max,sd_mean,rho,psi,\
cons_err,cons_err_proj,messages_cum,bytes_cum,sim_time_s";

/// Runs every trial, then writes all outputs under the config's
/// directory (or `out_dir_override`).
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir_override: Option<&Path>,
) -> Result<ExperimentSummary> {
    config.validate()?;
    let out_dir: PathBuf = match out_dir_override {
        Some(p) => p.to_path_buf(),
        None => config
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs/experiment")),
    };

    let outputs: Vec<TrialOutput> = if config.workers == 1 {
        (0..config.trials).map(|i| run_trial(config, i)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| {
            (0..config.trials)
                .into_par_iter()
                .map(|i| run_trial(config, i))
                .collect()
        })
    };

    write_outputs(config, &out_dir, &outputs)
}

fn write_outputs(
    config: &ExperimentConfig,
    out_dir: &Path,
    outputs: &[TrialOutput],
) -> Result<ExperimentSummary> {
    let trials_dir = out_dir.join("trials");
    fs::create_dir_all(&trials_dir).map_err(|e| annotate_io(e, &trials_dir))?;

    // Per-trial raw CSV.
    for out in outputs {
        let mut text = String::from(CSV_HEADER);
        text.push('\n');
        for run in &out.runs {
            if let Ok(trace) = &run.result {
                trace_csv_rows(&mut text, out.trial, run.algorithm, trace);
            }
        }
        let path = trials_dir.join(format!("trial_{:04}.csv", out.trial));
        fs::write(&path, text).map_err(|e| annotate_io(e, &path))?;
    }

    // Aggregates over successful runs only.
    let mut by_tau: BTreeMap<(usize, usize), MeanAcc> = BTreeMap::new();
    let mut by_bucket: BTreeMap<(usize, u64), MeanAcc> = BTreeMap::new();
    let algorithm_order: Vec<Algorithm> = config.algorithms.clone();
    let index_of = |a: Algorithm| algorithm_order.iter().position(|&x| x == a).unwrap();
    for out in outputs {
        for run in &out.runs {
            if let Ok(trace) = &run.result {
                let ai = index_of(run.algorithm);
                for rec in &trace.records {
                    by_tau.entry((ai, rec.tau)).or_default().push(rec);
                    let bucket = (rec.sim_time_s / config.time_bucket_s).floor() as u64;
                    by_bucket.entry((ai, bucket)).or_default().push(rec);
                }
            }
        }
    }

    let mut agg_tau = String::from(AGG_TAU_HEADER);
    agg_tau.push('\n');
    for (&(ai, tau), acc) in &by_tau {
        let prefix = format!("{},{}", algorithm_order[ai], tau);
        agg_tau.push_str(&acc.row(&prefix));
        agg_tau.push('\n');
    }
    fs::write(out_dir.join("aggregate_by_tau.csv"), agg_tau)?;

    let mut agg_time = String::from(AGG_TIME_HEADER);
    agg_time.push('\n');
    for (&(ai, bucket), acc) in &by_bucket {
        let start = bucket as f64 * config.time_bucket_s;
        let prefix = format!("{},{}", algorithm_order[ai], fmt_float(start));
        agg_time.push_str(&acc.row(&prefix));
        agg_time.push('\n');
    }
    fs::write(out_dir.join("aggregate_by_time.csv"), agg_time)?;

    // Metadata.
    let mut failed_runs = 0usize;
    let trials_meta: Vec<TrialMeta> = outputs
        .iter()
        .map(|out| {
            let (error, info) = match &out.setup {
                Ok(info) => (None, Some(*info)),
                Err(e) => {
                    failed_runs += config.algorithms.len();
                    (Some(e.clone()), None)
                }
            };
            let runs = out
                .runs
                .iter()
                .map(|run| match &run.result {
                    Ok(trace) => {
                        let last = trace.records.last();
                        RunMeta {
                            algorithm: run.algorithm.to_string(),
                            error: None,
                            eta_min: trace.eta_per_node.iter().copied().reduce(f64::min),
                            eta_max: trace.eta_per_node.iter().copied().reduce(f64::max),
                            sigma_hat_sq_min: trace.sigma_hat_sq.iter().copied().reduce(f64::min),
                            sigma_hat_sq_max: trace.sigma_hat_sq.iter().copied().reduce(f64::max),
                            final_sd_node1: last.map(|r| r.sd_node1),
                            max_orth_defect: Some(trace.max_orth_defect),
                            messages: last.map(|r| r.messages_cum),
                            bytes: last.map(|r| r.bytes_cum),
                            sim_time_s: last.map(|r| r.sim_time_s),
                        }
                    }
                    Err(e) => {
                        failed_runs += 1;
                        RunMeta {
                            algorithm: run.algorithm.to_string(),
                            error: Some(e.clone()),
                            eta_min: None,
                            eta_max: None,
                            sigma_hat_sq_min: None,
                            sigma_hat_sq_max: None,
                            final_sd_node1: None,
                            max_orth_defect: None,
                            messages: None,
                            bytes: None,
                            sim_time_s: None,
                        }
                    }
                })
                .collect();
            TrialMeta {
                trial: out.trial,
                seed: out.seed,
                error,
                gamma: info.map(|i| i.gamma),
                er_attempts: info.map(|i| i.er_attempts),
                mu_measured: info.map(|i| i.mu_measured),
                runs,
            }
        })
        .collect();

    let metadata = Metadata {
        version: env!("CARGO_PKG_VERSION"),
        config,
        failed_runs,
        trials: trials_meta,
    };
    let json = serde_json::to_string_pretty(&metadata)?;
    fs::write(out_dir.join("metadata.json"), json)?;

    // Final-SD summary per algorithm.
    let final_sd_by_algorithm: Vec<(Algorithm, f64)> = algorithm_order
        .iter()
        .map(|&a| {
            let mut sum = 0.0;
            let mut n = 0usize;
            for out in outputs {
                for run in &out.runs {
                    if run.algorithm == a {
                        if let Ok(trace) = &run.result {
                            if let Some(last) = trace.records.last() {
                                sum += last.sd_node1;
                                n += 1;
                            }
                        }
                    }
                }
            }
            (a, if n > 0 { sum / n as f64 } else { f64::NAN })
        })
        .collect();

    Ok(ExperimentSummary {
        out_dir: out_dir.to_path_buf(),
        trials_run: outputs.len(),
        failed_runs,
        final_sd_by_algorithm,
    })
}
