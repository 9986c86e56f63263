//! Decentralized truncated spectral initialization.
//!
//! Nodes first agree on a truncation threshold built from local response
//! energies, form truncated sketch matrices from their own tasks, and then
//! run a distributed power method: local multiply, agreement, QR, and a
//! broadcast substep that aligns every node to node 1's basis. The
//! broadcast divides the propagated basis by the node count (a mean over
//! one nonzero input); the next QR removes that scale, and one final QR
//! after the loop restores orthonormality on every node.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::consensus::agree;
use crate::error::{Error, Result};
use crate::linalg::{thin_qr, Matrix, OrthonormalBasis};
use crate::metrics::CommClock;
use crate::rng::{standard_normal_matrix, stream_rng, STREAM_INIT_SHARED};
use crate::synth::ProblemInstance;
use crate::topology::Network;

/// Initialization schedule and threshold inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Power-method rounds.
    pub t_pm: usize,
    /// Agreement rounds per power-method communication step.
    pub t_con_init: usize,
    /// Condition-number input to the threshold; `None` uses the
    /// generator's value. Misspecified values study robustness.
    pub kappa_hint: Option<f64>,
    /// Incoherence input to the threshold; `None` uses the measured value.
    pub mu_hint: Option<f64>,
    /// Seed of the common Gaussian start; `None` derives it from the
    /// run seed so every node still draws the identical matrix.
    pub shared_seed: Option<u64>,
    /// Run the node-1 broadcast substep once after the loop instead of
    /// inside every iteration.
    pub broadcast_only_at_end: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            t_pm: 100,
            t_con_init: 10,
            kappa_hint: None,
            mu_hint: None,
            shared_seed: None,
            broadcast_only_at_end: false,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_pm == 0 {
            return Err(Error::Config("init t_pm must be >= 1".into()));
        }
        for (name, hint) in [("kappa_hint", self.kappa_hint), ("mu_hint", self.mu_hint)] {
            if let Some(v) = hint {
                if !v.is_finite() || v <= 0.0 {
                    return Err(Error::Config(format!(
                        "init {name} must be positive, got {v}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Everything the gradient phase needs from initialization.
#[derive(Clone, Debug)]
pub struct InitOutcome {
    /// Per-node orthonormal starting bases.
    pub bases: Vec<OrthonormalBasis>,
    /// Per-node largest diagonal entry of the last in-loop QR's R factor,
    /// used directly as the squared top-singular-value estimate.
    pub sigma_hat_sq: Vec<f64>,
    /// Per-node agreed truncation thresholds.
    pub alpha: Vec<f64>,
}

fn rows_00(problem: &ProblemInstance) -> std::ops::Range<usize> {
    match problem.split {
        Some(split) => split.rows_init_00(),
        None => 0..problem.n,
    }
}

fn rows_0(problem: &ProblemInstance) -> std::ops::Range<usize> {
    match problem.split {
        Some(split) => split.rows_init_0(),
        None => 0..problem.n,
    }
}

/// Per-node agreed truncation thresholds `alpha_g`.
///
/// The local quantity is `9 kappa^2 mu^2 (L / (n T)) * sum_{t in S_g}
/// sum_i y_ti^2`; agreement then averages over nodes, so with exact
/// consensus the `L` cancels and every node holds the global energy sum.
/// Uses data block `00` when the problem is sample-split.
pub fn truncation_threshold(
    problem: &ProblemInstance,
    net: &Network,
    config: &InitConfig,
    clock: &mut CommClock,
) -> Result<Vec<f64>> {
    config.validate()?;
    let kappa = config.kappa_hint.unwrap_or(problem.kappa);
    let mu = config.mu_hint.unwrap_or(problem.mu_measured);
    let rows = rows_00(problem);
    let n_used = rows.len();
    let scale =
        9.0 * kappa * kappa * mu * mu * (net.l as f64) / ((n_used * problem.t_count) as f64);

    let locals: Vec<Matrix> = (0..net.l)
        .map(|g| {
            let energy: f64 = net.task_partition[g]
                .iter()
                .map(|&t| {
                    problem.ys[t]
                        .slice(ndarray::s![rows.clone()])
                        .iter()
                        .map(|y| y * y)
                        .sum::<f64>()
                })
                .sum();
            Array2::from_elem((1, 1), scale * energy)
        })
        .collect();

    let (agreed, _) = agree(net, &locals, config.t_con_init)?;
    clock.charge_network_rounds(net, config.t_con_init, 1, 1);
    Ok(agreed.into_iter().map(|m| m[[0, 0]]).collect())
}

/// Node `g`'s truncated sketch, `d x |S_g|`.
///
/// Column `t` is `(1/n) X_t^T y_trnc` with entries `y_ti` zeroed whenever
/// `y_ti^2 > alpha_g`. Uses data block `0` when the problem is
/// sample-split.
pub fn truncated_sketch(
    problem: &ProblemInstance,
    net: &Network,
    g: usize,
    alpha_g: f64,
) -> Matrix {
    let rows = rows_0(problem);
    let n_used = rows.len();
    let tasks = &net.task_partition[g];
    let mut sketch = Array2::zeros((problem.d, tasks.len()));
    for (col, &t) in tasks.iter().enumerate() {
        let x = problem.xs[t].slice(ndarray::s![rows.clone(), ..]);
        let y = problem.ys[t].slice(ndarray::s![rows.clone()]);
        let column = sketch_column(&x, &y, alpha_g, n_used);
        sketch.column_mut(col).assign(&column);
    }
    sketch
}

fn sketch_column(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    alpha: f64,
    n_used: usize,
) -> ndarray::Array1<f64> {
    let truncated: ndarray::Array1<f64> = y
        .iter()
        .map(|&v| if v * v <= alpha { v } else { 0.0 })
        .collect();
    x.t().dot(&truncated) / n_used as f64
}

/// Distributed power method over the per-node sketches.
///
/// Per round: local multiply by the sketch Gram, agreement, QR, and
/// (unless deferred) the node-1 broadcast. A zero-round broadcast moves no
/// data and therefore leaves every state unchanged rather than zeroing
/// the non-source nodes.
pub fn decentralized_power_method(
    sketches: &[Matrix],
    net: &Network,
    config: &InitConfig,
    r: usize,
    run_seed: u64,
    clock: &mut CommClock,
) -> Result<(Vec<OrthonormalBasis>, Vec<f64>)> {
    config.validate()?;
    if sketches.len() != net.l {
        return Err(Error::dim(
            "decentralized_power_method",
            format!("{} sketches", net.l),
            format!("{}", sketches.len()),
        ));
    }
    let d = sketches[0].nrows();

    let shared_seed = config.shared_seed.unwrap_or(run_seed);
    let mut shared_rng = stream_rng(shared_seed, STREAM_INIT_SHARED);
    let gaussian = standard_normal_matrix(&mut shared_rng, d, r);
    let (start, _) = thin_qr(&gaussian).map_err(init_rank_err)?;
    let mut states: Vec<Matrix> = vec![start.into_matrix(); net.l];
    let mut sigma_hat_sq = vec![0.0f64; net.l];

    for _ in 0..config.t_pm {
        let products: Vec<Matrix> = states
            .iter()
            .zip(sketches)
            .map(|(u, s)| s.dot(&s.t().dot(u)))
            .collect();
        let (mixed, _) = agree(net, &products, config.t_con_init)?;
        clock.charge_network_rounds(net, config.t_con_init, d, r);
        for (g, m) in mixed.into_iter().enumerate() {
            let (q, rfac) = thin_qr(&m).map_err(init_rank_err)?;
            states[g] = q.into_matrix();
            sigma_hat_sq[g] = rfac
                .diag()
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
        }
        if !config.broadcast_only_at_end {
            broadcast_from_first(&mut states, net, config.t_con_init, d, r, clock)?;
        }
    }
    if config.broadcast_only_at_end {
        broadcast_from_first(&mut states, net, config.t_con_init, d, r, clock)?;
    }

    let mut bases = Vec::with_capacity(net.l);
    for state in &states {
        let (q, _) = thin_qr(state).map_err(init_rank_err)?;
        bases.push(q);
    }
    Ok((bases, sigma_hat_sq))
}

/// Alg.-2 broadcast substep: node 1 feeds its basis into agreement while
/// every other node feeds zero, and only the non-source nodes adopt the
/// output.
fn broadcast_from_first(
    states: &mut [Matrix],
    net: &Network,
    t_con: usize,
    d: usize,
    r: usize,
    clock: &mut CommClock,
) -> Result<()> {
    if t_con == 0 || net.l == 1 {
        return Ok(());
    }
    let mut inputs = vec![Array2::zeros((d, r)); net.l];
    inputs[0] = states[0].clone();
    let (mixed, _) = agree(net, &inputs, t_con)?;
    clock.charge_network_rounds(net, t_con, d, r);
    for (g, m) in mixed.into_iter().enumerate().skip(1) {
        states[g] = m;
    }
    Ok(())
}

fn init_rank_err(e: Error) -> Error {
    match e {
        Error::RankDeficient { column } => Error::InitRankCollapse { column },
        other => other,
    }
}

/// Full initialization: threshold agreement, sketches, power method.
pub fn run_init(
    problem: &ProblemInstance,
    net: &Network,
    config: &InitConfig,
    run_seed: u64,
    clock: &mut CommClock,
) -> Result<InitOutcome> {
    let alpha = truncation_threshold(problem, net, config, clock)?;
    let sketches: Vec<Matrix> = (0..net.l)
        .map(|g| truncated_sketch(problem, net, g, alpha[g]))
        .collect();
    let (bases, sigma_hat_sq) =
        decentralized_power_method(&sketches, net, config, problem.r, run_seed, clock)?;
    Ok(InitOutcome {
        bases,
        sigma_hat_sq,
        alpha,
    })
}

/// Dense Gram of all sketches stacked column-wise, `sum_g S_g S_g^T`.
/// Diagnostic helper for tests comparing against centralized spectra.
pub fn sketch_gram(sketches: &[Matrix]) -> Matrix {
    let d = sketches[0].nrows();
    let mut gram = Array2::zeros((d, d));
    for s in sketches {
        gram = gram + s.dot(&s.t());
    }
    gram
}
