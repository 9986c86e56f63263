//! The four optimization algorithms over a shared pair of kernels.
//!
//! Every algorithm alternates a closed-form per-task least-squares update
//! of the coefficients B with a gradient move on the shared basis U, and
//! differs only in how basis information crosses the network:
//!
//! * Dif-AltGDmin updates locally, then diffuses the updated basis
//!   through agreement rounds, then re-orthonormalizes.
//! * Centralized AltGDmin aggregates all local gradients at a fusion
//!   center and broadcasts one basis back.
//! * Dec-AltGDmin runs agreement on the local gradients instead of the
//!   updated bases.
//! * The DGD variant replaces the agreement loop with a single
//!   neighbor average of the previous bases (self excluded) combined
//!   with the local gradient step.
//!
//! Only `d x r` matrices (and one scalar during initialization) ever
//! cross a link; raw measurements stay on their node.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::consensus::agree;
use crate::error::{Error, Result};
use crate::linalg::{least_squares, thin_qr, Matrix, OrthonormalBasis, Vector};
use crate::metrics::{max_defect, snapshot, CommClock, CommModel, RunTrace};
use crate::rng::{stream_rng, STREAM_JITTER_BASE};
use crate::spectral_init::{run_init, InitConfig, InitOutcome};
use crate::synth::ProblemInstance;
use crate::topology::Network;

/// The implemented algorithms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    DifAltGdmin,
    CentralizedAltGdmin,
    DecAltGdmin,
    DgdVariant,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::DifAltGdmin,
        Algorithm::CentralizedAltGdmin,
        Algorithm::DecAltGdmin,
        Algorithm::DgdVariant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DifAltGdmin => "dif_altgdmin",
            Algorithm::CentralizedAltGdmin => "centralized_altgdmin",
            Algorithm::DecAltGdmin => "dec_altgdmin",
            Algorithm::DgdVariant => "dgd_variant",
        }
    }

    fn jitter_stream(self) -> u64 {
        let index = match self {
            Algorithm::DifAltGdmin => 0,
            Algorithm::CentralizedAltGdmin => 1,
            Algorithm::DecAltGdmin => 2,
            Algorithm::DgdVariant => 3,
        };
        STREAM_JITTER_BASE + index
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dif_altgdmin" | "dif" => Ok(Algorithm::DifAltGdmin),
            "centralized_altgdmin" | "centralized" => Ok(Algorithm::CentralizedAltGdmin),
            "dec_altgdmin" | "dec" => Ok(Algorithm::DecAltGdmin),
            "dgd_variant" | "dgd" => Ok(Algorithm::DgdVariant),
            other => Err(Error::Config(format!(
                "unknown algorithm {other:?}; expected one of dif_altgdmin, \
                 centralized_altgdmin, dec_altgdmin, dgd_variant"
            ))),
        }
    }
}

/// How the step size is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaRule {
    /// `eta = c / (n sigma_max*^2)` with the planted top singular value
    /// (an oracle quantity, available only in simulation).
    TheoremExact,
    /// `eta = c / (n sigma_hat^2)` where `sigma_hat^2` is each node's
    /// largest R diagonal from the initialization power method, used
    /// directly as the squared estimate.
    EstimatedFromInit,
}

/// One node's optimization state.
#[derive(Clone, Debug)]
pub struct NodeState {
    /// Current basis estimate, orthonormal after every projection.
    pub u: OrthonormalBasis,
    /// Coefficients for the node's own tasks, `r x |S_g|`, in
    /// task-partition order.
    pub b: Matrix,
}

/// Full solver schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Gradient iterations. Zero is allowed and records only the
    /// initialization diagnostics.
    pub t_gd: usize,
    /// Agreement rounds per gradient iteration (diffusion or gradient
    /// consensus, depending on the algorithm).
    pub t_con_gd: usize,
    pub eta_rule: EtaRule,
    /// Numerator constant of the step size, in (0, 1).
    pub eta_constant: f64,
    /// Square the R diagonal before using it as `sigma_hat^2`. The
    /// estimation rule is ambiguous about whether the diagonal entry
    /// approximates the singular value or its square; off by default
    /// (diagonal used directly as the square).
    pub square_sigma_hat: bool,
    /// Consume disjoint per-iteration sample blocks instead of reusing
    /// the full data every iteration. Requires a problem split with a
    /// matching `t_gd`.
    pub use_sample_split: bool,
    /// Give the centralized baseline its own single-node initialization
    /// instead of the shared decentralized one.
    pub centralized_own_init: bool,
    pub init: InitConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            algorithm: Algorithm::DifAltGdmin,
            t_gd: 100,
            t_con_gd: 10,
            eta_rule: EtaRule::EstimatedFromInit,
            eta_constant: 0.4,
            square_sigma_hat: false,
            use_sample_split: false,
            centralized_own_init: false,
            init: InitConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, problem: &ProblemInstance) -> Result<()> {
        self.init.validate()?;
        if !(self.eta_constant > 0.0 && self.eta_constant < 1.0) {
            return Err(Error::Config(format!(
                "eta_constant must lie in (0, 1), got {}",
                self.eta_constant
            )));
        }
        if self.use_sample_split {
            match problem.split {
                Some(split) if split.t_gd == self.t_gd => {}
                Some(split) => {
                    return Err(Error::Config(format!(
                        "problem split was built for T_GD = {}, solver uses T_GD = {}",
                        split.t_gd, self.t_gd
                    )));
                }
                None => {
                    return Err(Error::Config(
                        "use_sample_split requires a sample-split problem".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Rows feeding iteration `tau`'s B update.
fn b_rows(problem: &ProblemInstance, config: &SolverConfig, tau: usize) -> Range<usize> {
    if config.use_sample_split {
        problem.split.expect("validated").rows_for_label(tau)
    } else {
        0..problem.n
    }
}

/// Rows feeding iteration `tau`'s gradient; block `tau + T_GD` when
/// splitting.
fn grad_rows(problem: &ProblemInstance, config: &SolverConfig, tau: usize) -> Range<usize> {
    if config.use_sample_split {
        problem
            .split
            .expect("validated")
            .rows_for_label(tau + config.t_gd)
    } else {
        0..problem.n
    }
}

/// Least-squares coefficients of one task: `argmin_b ||X u b - y||`.
pub fn solve_task_b(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    u: &OrthonormalBasis,
) -> Result<Vector> {
    let a = x.dot(u.as_matrix());
    least_squares(&a, &y.to_owned())
}

/// B update for all of one node's tasks; returns `r x |tasks|`.
pub fn min_step_b(
    problem: &ProblemInstance,
    tasks: &[usize],
    u: &OrthonormalBasis,
    rows: Range<usize>,
) -> Result<Matrix> {
    let r = u.dims().1;
    let mut b = Array2::zeros((r, tasks.len()));
    for (k, &t) in tasks.iter().enumerate() {
        let x = problem.xs[t].slice(s![rows.clone(), ..]);
        let y = problem.ys[t].slice(s![rows.clone()]);
        let col = solve_task_b(&x, &y, u)?;
        b.column_mut(k).assign(&col);
    }
    Ok(b)
}

/// The bilinear gradient kernel for one task: `X^T residual b^T`.
/// Linear in `b` when the residual is held fixed.
pub fn gradient_term(x: &ArrayView2<f64>, residual: &Vector, b_col: &ArrayView1<f64>) -> Matrix {
    let xt_res = x.t().dot(residual);
    let d = xt_res.len();
    let r = b_col.len();
    let mut term = Array2::zeros((d, r));
    for i in 0..d {
        let v = xt_res[i];
        for j in 0..r {
            term[[i, j]] = v * b_col[j];
        }
    }
    term
}

/// Gradient of the local objective in U with B fixed:
/// `sum_{t in tasks} X_t^T (X_t U b_t - y_t) b_t^T`.
pub fn local_gradient(
    problem: &ProblemInstance,
    tasks: &[usize],
    u: &OrthonormalBasis,
    b: &Matrix,
    rows: Range<usize>,
) -> Matrix {
    let (d, r) = u.dims();
    let mut grad = Array2::zeros((d, r));
    for (k, &t) in tasks.iter().enumerate() {
        let x = problem.xs[t].slice(s![rows.clone(), ..]);
        let y = problem.ys[t].slice(s![rows.clone()]);
        let b_col = b.column(k);
        let a = x.dot(u.as_matrix());
        let residual = a.dot(&b_col) - y;
        accumulate_term(&mut grad, &x.t().dot(&residual), &b_col);
    }
    grad
}

fn accumulate_term(grad: &mut Matrix, xt_res: &Array1<f64>, b_col: &ArrayView1<f64>) {
    let (d, r) = grad.dim();
    for i in 0..d {
        let v = xt_res[i];
        for j in 0..r {
            grad[[i, j]] += v * b_col[j];
        }
    }
}

/// One node's B update and gradient, sharing `X u` when both phases read
/// the same rows.
fn node_b_and_grad(
    problem: &ProblemInstance,
    tasks: &[usize],
    u: &OrthonormalBasis,
    rows_b: Range<usize>,
    rows_g: Range<usize>,
) -> Result<(Matrix, Matrix)> {
    let (d, r) = u.dims();
    let mut b = Array2::zeros((r, tasks.len()));
    let mut grad = Array2::zeros((d, r));
    let same_rows = rows_b == rows_g;
    for (k, &t) in tasks.iter().enumerate() {
        let xb = problem.xs[t].slice(s![rows_b.clone(), ..]);
        let yb = problem.ys[t].slice(s![rows_b.clone()]);
        let ab = xb.dot(u.as_matrix());
        let col = least_squares(&ab, &yb.to_owned())?;

        let (residual, xg) = if same_rows {
            (ab.dot(&col) - yb, xb)
        } else {
            let xg = problem.xs[t].slice(s![rows_g.clone(), ..]);
            let yg = problem.ys[t].slice(s![rows_g.clone()]);
            (xg.dot(u.as_matrix()).dot(&col) - yg, xg)
        };
        accumulate_term(&mut grad, &xg.t().dot(&residual), &col.view());
        b.column_mut(k).assign(&col);
    }
    Ok((b, grad))
}

fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

fn project(m: &Matrix, context: &'static str, tau: usize) -> Result<OrthonormalBasis> {
    if !all_finite(m) {
        return Err(Error::Divergence {
            context,
            iteration: tau,
        });
    }
    match thin_qr(m) {
        Ok((q, _)) => Ok(q),
        Err(Error::RankDeficient { .. }) => Err(Error::Divergence {
            context,
            iteration: tau,
        }),
        Err(e) => Err(e),
    }
}

fn mean_matrix(items: &[Matrix]) -> Matrix {
    let mut acc = items[0].clone();
    for m in &items[1..] {
        acc += m;
    }
    acc / items.len() as f64
}

/// Initialization pathway for a run: the shared decentralized outcome,
/// optionally replaced for the centralized baseline by a single-node run
/// on the pooled task set.
fn initialize(
    problem: &ProblemInstance,
    net: &Network,
    config: &SolverConfig,
    seed: u64,
    clock: &mut CommClock,
) -> Result<InitOutcome> {
    if config.algorithm == Algorithm::CentralizedAltGdmin && config.centralized_own_init {
        let pooled = Network::from_parts(
            crate::topology::complete_adjacency(1),
            vec![(0..problem.t_count).collect()],
            net.scheme,
        )?;
        let single = run_init(problem, &pooled, &config.init, seed, clock)?;
        return Ok(InitOutcome {
            bases: vec![single.bases[0].clone(); net.l],
            sigma_hat_sq: vec![single.sigma_hat_sq[0]; net.l],
            alpha: vec![single.alpha[0]; net.l],
        });
    }
    let mut outcome = run_init(problem, net, &config.init, seed, clock)?;
    if config.algorithm == Algorithm::CentralizedAltGdmin {
        // The baseline starts from the average of the shared
        // decentralized bases, re-orthonormalized.
        let mats: Vec<Matrix> = outcome
            .bases
            .iter()
            .map(|u| u.as_matrix().clone())
            .collect();
        let avg = mean_matrix(&mats);
        let q = thin_qr(&avg)
            .map_err(|e| match e {
                Error::RankDeficient { column } => Error::InitRankCollapse { column },
                other => other,
            })?
            .0;
        let sigma = outcome.sigma_hat_sq.iter().sum::<f64>() / outcome.sigma_hat_sq.len() as f64;
        outcome.bases = vec![q; net.l];
        outcome.sigma_hat_sq = vec![sigma; net.l];
    }
    Ok(outcome)
}

fn step_sizes(
    problem: &ProblemInstance,
    config: &SolverConfig,
    outcome: &InitOutcome,
    n_used: usize,
) -> Result<Vec<f64>> {
    outcome
        .sigma_hat_sq
        .iter()
        .map(|&sh| {
            let sigma_sq = match config.eta_rule {
                EtaRule::TheoremExact => problem.sigma_max * problem.sigma_max,
                EtaRule::EstimatedFromInit => {
                    if config.square_sigma_hat {
                        sh * sh
                    } else {
                        sh
                    }
                }
            };
            if !(sigma_sq.is_finite() && sigma_sq > 0.0) {
                return Err(Error::NonFinite {
                    context: "step-size scale estimate",
                });
            }
            Ok(config.eta_constant / (n_used as f64 * sigma_sq))
        })
        .collect()
}

/// Runs initialization followed by the configured algorithm.
pub fn run_solver(
    problem: &ProblemInstance,
    net: &Network,
    config: &SolverConfig,
    comm: &CommModel,
    seed: u64,
) -> Result<RunTrace> {
    config.validate(problem)?;
    let mut clock = CommClock::new(*comm, stream_rng(seed, config.algorithm.jitter_stream()));
    let outcome = initialize(problem, net, config, seed, &mut clock)?;
    run_solver_from(problem, net, config, outcome, clock)
}

/// Runs the gradient phase from an explicit initialization outcome.
/// `clock` carries whatever communication the initialization already
/// consumed.
pub fn run_solver_from(
    problem: &ProblemInstance,
    net: &Network,
    config: &SolverConfig,
    outcome: InitOutcome,
    mut clock: CommClock,
) -> Result<RunTrace> {
    config.validate(problem)?;
    if outcome.bases.len() != net.l {
        return Err(Error::dim(
            "run_solver_from",
            format!("{} init bases", net.l),
            format!("{}", outcome.bases.len()),
        ));
    }
    let (d, r) = outcome.bases[0].dims();
    let l = net.l;
    // All gradient iterations use equally sized row blocks, so the first
    // one's count sets the step size.
    let n_used = grad_rows(problem, config, 1).len();
    let eta = step_sizes(problem, config, &outcome, n_used)?;

    let mut states: Vec<NodeState> = outcome
        .bases
        .iter()
        .enumerate()
        .map(|(g, u)| NodeState {
            u: u.clone(),
            b: Array2::zeros((r, net.task_partition[g].len())),
        })
        .collect();

    let mut records = Vec::with_capacity(config.t_gd + 1);
    let mut max_orth = 0.0f64;
    let record = |tau: usize,
                  states: &[NodeState],
                  residuals: Option<&[Matrix]>,
                  clock: &CommClock,
                  max_orth: &mut f64,
                  records: &mut Vec<_>| {
        let bases: Vec<OrthonormalBasis> = states.iter().map(|s| s.u.clone()).collect();
        *max_orth = max_orth.max(max_defect(&bases));
        records.push(snapshot(tau, &bases, &problem.ustar, residuals, clock));
    };
    record(0, &states, None, &clock, &mut max_orth, &mut records);

    for tau in 1..=config.t_gd {
        let rows_b = b_rows(problem, config, tau);
        let rows_g = grad_rows(problem, config, tau);
        let mut grads = Vec::with_capacity(l);
        for (g, state) in states.iter_mut().enumerate() {
            let (b, grad) = node_b_and_grad(
                problem,
                &net.task_partition[g],
                &state.u,
                rows_b.clone(),
                rows_g.clone(),
            )?;
            state.b = b;
            grads.push(grad);
        }

        let residuals: Option<Vec<Matrix>> = match config.algorithm {
            Algorithm::DifAltGdmin => {
                let breve: Vec<Matrix> = states
                    .iter()
                    .zip(&grads)
                    .zip(&eta)
                    .map(|((s, g), &e)| s.u.as_matrix() - &(g * (e * l as f64)))
                    .collect();
                let (mixed, _) = agree(net, &breve, config.t_con_gd)?;
                clock.charge_network_rounds(net, config.t_con_gd, d, r);
                let mean = mean_matrix(&breve);
                let res: Vec<Matrix> = mixed.iter().map(|m| m - &mean).collect();
                for (state, m) in states.iter_mut().zip(&mixed) {
                    state.u = project(m, "dif_altgdmin projection", tau)?;
                }
                Some(res)
            }
            Algorithm::CentralizedAltGdmin => {
                let mut total = grads[0].clone();
                for g in &grads[1..] {
                    total += g;
                }
                clock.charge_star_round(l, true, d, r);
                clock.charge_star_round(l, false, d, r);
                let updated = states[0].u.as_matrix() - &(total * eta[0]);
                let q = project(&updated, "centralized_altgdmin projection", tau)?;
                for state in states.iter_mut() {
                    state.u = q.clone();
                }
                None
            }
            Algorithm::DecAltGdmin => {
                let (mixed, _) = agree(net, &grads, config.t_con_gd)?;
                clock.charge_network_rounds(net, config.t_con_gd, d, r);
                let mean = mean_matrix(&grads);
                let res: Vec<Matrix> = mixed.iter().map(|m| m - &mean).collect();
                for ((state, m), &e) in states.iter_mut().zip(&mixed).zip(&eta) {
                    let updated = state.u.as_matrix() - &(m * (e * l as f64));
                    state.u = project(&updated, "dec_altgdmin projection", tau)?;
                }
                Some(res)
            }
            Algorithm::DgdVariant => {
                clock.charge_network_rounds(net, 1, d, r);
                let previous: Vec<Matrix> =
                    states.iter().map(|s| s.u.as_matrix().clone()).collect();
                for (g, state) in states.iter_mut().enumerate() {
                    let avg = if net.neighbors[g].is_empty() {
                        previous[g].clone()
                    } else {
                        let mut acc = previous[net.neighbors[g][0]].clone();
                        for &j in &net.neighbors[g][1..] {
                            acc += &previous[j];
                        }
                        acc / net.neighbors[g].len() as f64
                    };
                    let updated = avg - &(&grads[g] * eta[g]);
                    state.u = project(&updated, "dgd_variant projection", tau)?;
                }
                None
            }
        };

        record(
            tau,
            &states,
            residuals.as_deref(),
            &clock,
            &mut max_orth,
            &mut records,
        );
    }

    let final_theta = if config.t_gd > 0 {
        let mut theta = Array2::zeros((d, problem.t_count));
        for (g, state) in states.iter().enumerate() {
            for (k, &t) in net.task_partition[g].iter().enumerate() {
                let col = state.u.as_matrix().dot(&state.b.column(k));
                theta.column_mut(t).assign(&col);
            }
        }
        Some(theta)
    } else {
        None
    };

    Ok(RunTrace {
        records,
        payload_shapes: clock.payload_shapes.clone(),
        round_times: clock.round_times.clone(),
        final_bases: states.into_iter().map(|s| s.u).collect(),
        final_theta,
        eta_per_node: eta,
        sigma_hat_sq: outcome.sigma_hat_sq,
        max_orth_defect: max_orth,
    })
}
