//! Communication graph, task partition, mixing matrix, and spectral gap.
//!
//! Nodes talk over an undirected connected graph, sampled Erdos-Renyi or
//! supplied explicitly. The mixing matrix `W` turns neighbor exchange into
//! one linear averaging step `z <- W z`; its spectral gap parameter
//! `gamma = max(|lambda_2|, |lambda_L|)` governs how fast disagreement
//! contracts.

use std::fmt;
use std::io::Write as IoWrite;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, Matrix};
use crate::rng::{stream_rng, STREAM_GRAPH, STREAM_PARTITION};

/// Neighbor-weighting rule for the mixing matrix.
///
/// `AsWritten` is the literal protocol weight `1/deg_g` with zero
/// self-weight; it is doubly stochastic only on regular graphs and stalls
/// on bipartite ones (`gamma = 1`). `Metropolis` is symmetric doubly
/// stochastic with `gamma < 1` on every connected graph. `LazyAsWritten`
/// averages `AsWritten` with the identity, which removes the bipartite
/// failure mode while keeping the protocol weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingScheme {
    AsWritten,
    Metropolis,
    LazyAsWritten,
}

impl fmt::Display for MixingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MixingScheme::AsWritten => "as_written",
            MixingScheme::Metropolis => "metropolis",
            MixingScheme::LazyAsWritten => "lazy_as_written",
        };
        f.write_str(s)
    }
}

impl FromStr for MixingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_written" => Ok(MixingScheme::AsWritten),
            "metropolis" => Ok(MixingScheme::Metropolis),
            "lazy_as_written" => Ok(MixingScheme::LazyAsWritten),
            other => Err(Error::Config(format!(
                "unknown mixing scheme {other:?}; expected as_written, metropolis, or lazy_as_written"
            ))),
        }
    }
}

/// Immutable communication topology for one trial.
#[derive(Clone, Debug)]
pub struct Network {
    /// Node count.
    pub l: usize,
    /// Symmetric adjacency with zero diagonal.
    pub adjacency: Array2<bool>,
    /// Neighbor lists in ascending node order.
    pub neighbors: Vec<Vec<usize>>,
    /// Per-node degrees.
    pub degrees: Vec<usize>,
    /// Disjoint task-index sets, one per node, covering all tasks.
    pub task_partition: Vec<Vec<usize>>,
    /// Mixing matrix, `L x L`, rows summing to 1.
    pub w: Matrix,
    /// `max(|lambda_2|, |lambda_L|)` of `w`.
    pub gamma: f64,
    /// Weighting rule `w` was built with.
    pub scheme: MixingScheme,
    /// Erdos-Renyi draws consumed before a connected graph appeared
    /// (1 when the graph was supplied explicitly).
    pub er_attempts: usize,
}

impl Network {
    /// Samples a connected Erdos-Renyi graph, partitions tasks, and builds
    /// the mixing matrix.
    pub fn sample(
        l: usize,
        p: f64,
        t_count: usize,
        scheme: MixingScheme,
        seed: u64,
        max_retries: usize,
    ) -> Result<Self> {
        let (adjacency, attempts) = erdos_renyi(l, p, seed, max_retries)?;
        let partition = partition_tasks(t_count, l, seed)?;
        let mut net = Self::from_parts(adjacency, partition, scheme)?;
        net.er_attempts = attempts;
        Ok(net)
    }

    /// Builds a network from an explicit adjacency and task partition.
    pub fn from_parts(
        adjacency: Array2<bool>,
        task_partition: Vec<Vec<usize>>,
        scheme: MixingScheme,
    ) -> Result<Self> {
        let l = adjacency.nrows();
        if l == 0 || adjacency.ncols() != l {
            return Err(Error::dim(
                "network adjacency",
                "nonempty square matrix",
                format!("{}x{}", l, adjacency.ncols()),
            ));
        }
        for g in 0..l {
            if adjacency[[g, g]] {
                return Err(Error::Config(format!("self-loop at node {g}")));
            }
            for j in 0..l {
                if adjacency[[g, j]] != adjacency[[j, g]] {
                    return Err(Error::Config(format!(
                        "adjacency not symmetric at ({g}, {j})"
                    )));
                }
            }
        }
        let components = component_count(&adjacency);
        if components != 1 {
            return Err(Error::NotConnected { components });
        }

        if task_partition.len() != l {
            return Err(Error::Config(format!(
                "partition has {} sets for {l} nodes",
                task_partition.len()
            )));
        }
        let t_count: usize = task_partition.iter().map(|s| s.len()).sum();
        let mut seen = vec![false; t_count];
        for set in &task_partition {
            if set.is_empty() {
                return Err(Error::TooFewTasks { t: t_count, l });
            }
            for &t in set {
                if t >= t_count || seen[t] {
                    return Err(Error::Config(format!(
                        "task partition is not a disjoint cover: task {t}"
                    )));
                }
                seen[t] = true;
            }
        }

        let neighbors: Vec<Vec<usize>> = (0..l)
            .map(|g| (0..l).filter(|&j| adjacency[[g, j]]).collect())
            .collect();
        let degrees: Vec<usize> = neighbors.iter().map(|ns| ns.len()).collect();
        let w = build_mixing_matrix(&adjacency, scheme);
        for g in 0..l {
            let row_sum: f64 = w.row(g).sum();
            debug_assert!((row_sum - 1.0).abs() <= 1e-12, "row {g} sums to {row_sum}");
        }
        let gamma = spectral_gap(&w, &degrees)?;
        Ok(Network {
            l,
            adjacency,
            neighbors,
            degrees,
            task_partition,
            w,
            gamma,
            scheme,
            er_attempts: 1,
        })
    }

    /// Undirected edge count.
    pub fn edge_count(&self) -> usize {
        self.degrees.iter().sum::<usize>() / 2
    }

    /// Writes the graph as an edge list, one `u v` pair per line, `u < v`.
    pub fn write_edge_list<W: IoWrite>(&self, out: &mut W) -> Result<()> {
        for u in 0..self.l {
            for &v in &self.neighbors[u] {
                if u < v {
                    writeln!(out, "{u} {v}")?;
                }
            }
        }
        Ok(())
    }
}

/// Samples symmetric Erdos-Renyi adjacencies until one is connected.
///
/// Returns the adjacency and the number of draws consumed. Every retry
/// continues the same seeded stream, so the result is a deterministic
/// function of `(l, p, seed)`.
pub fn erdos_renyi(
    l: usize,
    p: f64,
    seed: u64,
    max_retries: usize,
) -> Result<(Array2<bool>, usize)> {
    if l < 2 {
        return Err(Error::Config(format!(
            "erdos_renyi needs at least 2 nodes, got {l}"
        )));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!(
            "edge probability must lie in (0, 1], got {p}"
        )));
    }
    let mut rng = stream_rng(seed, STREAM_GRAPH);
    for attempt in 1..=max_retries.max(1) {
        let mut adj = Array2::from_elem((l, l), false);
        for i in 0..l {
            for j in i + 1..l {
                if rng.gen::<f64>() < p {
                    adj[[i, j]] = true;
                    adj[[j, i]] = true;
                }
            }
        }
        if component_count(&adj) == 1 {
            return Ok((adj, attempt));
        }
    }
    Err(Error::DisconnectedGraph {
        l,
        p,
        attempts: max_retries.max(1),
    })
}

/// Number of connected components (breadth-first search).
fn component_count(adj: &Array2<bool>) -> usize {
    let l = adj.nrows();
    let mut visited = vec![false; l];
    let mut components = 0;
    let mut queue = Vec::new();
    for start in 0..l {
        if visited[start] {
            continue;
        }
        components += 1;
        visited[start] = true;
        queue.push(start);
        while let Some(u) = queue.pop() {
            for v in 0..l {
                if adj[[u, v]] && !visited[v] {
                    visited[v] = true;
                    queue.push(v);
                }
            }
        }
    }
    components
}

/// Builds the `L x L` mixing matrix for a connected adjacency.
pub fn build_mixing_matrix(adjacency: &Array2<bool>, scheme: MixingScheme) -> Matrix {
    let l = adjacency.nrows();
    let degrees: Vec<usize> = (0..l)
        .map(|g| (0..l).filter(|&j| adjacency[[g, j]]).count())
        .collect();
    let mut w: Matrix = Array2::zeros((l, l));
    match scheme {
        MixingScheme::AsWritten => {
            for g in 0..l {
                if degrees[g] == 0 {
                    // Connected graphs with L >= 2 have no isolated nodes;
                    // this branch covers the single-node network.
                    w[[g, g]] = 1.0;
                    continue;
                }
                let inv = 1.0 / degrees[g] as f64;
                for j in 0..l {
                    if adjacency[[g, j]] {
                        w[[g, j]] = inv;
                    }
                }
            }
        }
        MixingScheme::Metropolis => {
            for g in 0..l {
                let mut off_sum = 0.0;
                for j in 0..l {
                    if adjacency[[g, j]] {
                        let wgj = 1.0 / (1.0 + degrees[g].max(degrees[j]) as f64);
                        w[[g, j]] = wgj;
                        off_sum += wgj;
                    }
                }
                w[[g, g]] = 1.0 - off_sum;
            }
        }
        MixingScheme::LazyAsWritten => {
            let base = build_mixing_matrix(adjacency, MixingScheme::AsWritten);
            for g in 0..l {
                for j in 0..l {
                    w[[g, j]] = 0.5 * base[[g, j]];
                }
                w[[g, g]] += 0.5;
            }
        }
    }
    w
}

/// `max(|lambda_2|, |lambda_L|)` of a row-stochastic mixing matrix.
///
/// Symmetric matrices are diagonalized directly. A nonsymmetric `W` of the
/// protocol form `D^-1 A` shares its spectrum with the symmetric
/// `D^-1/2 A D^-1/2`, which is what gets diagonalized then.
pub fn spectral_gap(w: &Matrix, degrees: &[usize]) -> Result<f64> {
    let l = w.nrows();
    if l == 1 {
        return Ok(0.0);
    }
    let mut defect = 0.0f64;
    for i in 0..l {
        for j in i + 1..l {
            defect = defect.max((w[[i, j]] - w[[j, i]]).abs());
        }
    }
    let evals = if defect <= 1e-12 {
        symmetric_eigenvalues(w)?
    } else {
        let mut s: Matrix = Array2::zeros((l, l));
        for i in 0..l {
            for j in 0..l {
                let di = degrees[i] as f64;
                let dj = degrees[j] as f64;
                s[[i, j]] = w[[i, j]] * (di / dj).sqrt();
            }
        }
        symmetric_eigenvalues(&s)?
    };
    let gamma = evals[1].abs().max(evals[l - 1].abs());
    Ok(gamma.clamp(0.0, 1.0))
}

/// Randomly assigns `t_count` tasks to `l` nodes in near-equal disjoint
/// sets (sizes differ by at most one), sorted ascending within each set.
pub fn partition_tasks(t_count: usize, l: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if l == 0 {
        return Err(Error::Config("cannot partition tasks over 0 nodes".into()));
    }
    if t_count < l {
        return Err(Error::TooFewTasks { t: t_count, l });
    }
    let mut order: Vec<usize> = (0..t_count).collect();
    let mut rng = stream_rng(seed, STREAM_PARTITION);
    order.shuffle(&mut rng);
    let base = t_count / l;
    let extra = t_count % l;
    let mut sets = Vec::with_capacity(l);
    let mut cursor = 0;
    for g in 0..l {
        let size = base + usize::from(g < extra);
        let mut set: Vec<usize> = order[cursor..cursor + size].to_vec();
        set.sort_unstable();
        sets.push(set);
        cursor += size;
    }
    Ok(sets)
}

/// Complete-graph adjacency, handy for tests and small experiments.
pub fn complete_adjacency(l: usize) -> Array2<bool> {
    Array2::from_shape_fn((l, l), |(i, j)| i != j)
}
