//! The agreement protocol: synchronous rounds of neighbor-weighted
//! averaging over per-node matrix states.
//!
//! One round maps the stacked node states `Z` to `W Z`. The simulator owns
//! all node states, so a round is a pure batch computation: every node
//! reads only round-`tau` values and writes round-`tau+1` values, which
//! makes the synchronous semantics exact and the run deterministic.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::topology::Network;

/// Communication ledger for one protocol invocation.
///
/// Messages are directed: each undirected edge carries two transmissions
/// per round. Bytes assume 8 bytes per matrix entry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommRecord {
    /// Averaging rounds performed.
    pub rounds: usize,
    /// Directed messages sent.
    pub messages: u64,
    /// Payload bytes sent.
    pub bytes: u64,
    /// (rows, cols) of the exchanged payload.
    pub shape: (usize, usize),
}

/// Runs `t_con` synchronous averaging rounds over the node states.
///
/// Returns the per-node outputs and the communication ledger. `t_con = 0`
/// returns the inputs unchanged and counts nothing.
pub fn agree(net: &Network, inputs: &[Matrix], t_con: usize) -> Result<(Vec<Matrix>, CommRecord)> {
    if inputs.len() != net.l {
        return Err(Error::dim(
            "agree",
            format!("{} node states", net.l),
            format!("{}", inputs.len()),
        ));
    }
    let shape = inputs[0].dim();
    for (g, z) in inputs.iter().enumerate() {
        if z.dim() != shape {
            return Err(Error::dim(
                "agree",
                format!("{shape:?}"),
                format!("{:?} at node {g}", z.dim()),
            ));
        }
    }

    let mut current: Vec<Matrix> = inputs.to_vec();
    let mut next: Vec<Matrix> = vec![Matrix::zeros(shape); net.l];
    for _round in 0..t_con {
        for (g, nx) in next.iter_mut().enumerate() {
            nx.fill(0.0);
            for (j, cur) in current.iter().enumerate() {
                let c = net.w[[g, j]];
                if c != 0.0 {
                    nx.scaled_add(c, cur);
                }
            }
        }
        std::mem::swap(&mut current, &mut next);
    }

    let per_round_messages = 2 * net.edge_count() as u64;
    let messages = per_round_messages * t_con as u64;
    let bytes = messages * 8 * (shape.0 * shape.1) as u64;
    Ok((
        current,
        CommRecord {
            rounds: t_con,
            messages,
            bytes,
            shape,
        },
    ))
}

/// Rounds needed so the protocol contracts the worst-case deviation from
/// the mean by a factor `eps_con`: `ceil(log(L/eps_con) / log(1/gamma))`,
/// and at least one.
pub fn required_rounds(l: usize, gamma: f64, eps_con: f64) -> Result<usize> {
    if !(eps_con > 0.0 && eps_con < 1.0) {
        return Err(Error::Config(format!(
            "eps_con must lie in (0, 1), got {eps_con}"
        )));
    }
    if gamma >= 1.0 {
        return Err(Error::NoContraction {
            gamma,
            epsilon: eps_con,
        });
    }
    if gamma <= 0.0 {
        // Exact averaging in a single round.
        return Ok(1);
    }
    let rounds = ((l as f64 / eps_con).ln() / (1.0 / gamma).ln()).ceil();
    Ok((rounds as usize).max(1))
}
