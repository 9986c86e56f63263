//! Seed derivation and named random streams.
//!
//! All randomness in an experiment flows from one `u64` base seed.
//! Per-trial seeds come from a SplitMix64 sequence over the base seed, so
//! raising the trial count never changes the seeds of earlier trials.
//! Within a trial, every consumer draws from its own ChaCha8 stream: the
//! generator is keyed by the trial seed and the stream id selects an
//! independent substream. Adding a new consumer (say, timing jitter for one
//! more algorithm) therefore cannot perturb problem data or any other
//! stream.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream id for the shared column-space factor of the ground truth.
pub const STREAM_USTAR: u64 = 1;
/// Stream id for the right factor of the ground truth.
pub const STREAM_VSTAR: u64 = 2;
/// Stream id for Erdos-Renyi edge sampling.
pub const STREAM_GRAPH: u64 = 3;
/// Stream id for the task-to-node partition shuffle.
pub const STREAM_PARTITION: u64 = 4;
/// Stream id for the shared random matrix that seeds initialization.
pub const STREAM_INIT_SHARED: u64 = 5;
/// Base stream id for per-algorithm communication jitter; add the
/// algorithm's index.
pub const STREAM_JITTER_BASE: u64 = 16;
/// Base stream id for per-task measurement matrices; add the task index.
pub const STREAM_TASK_BASE: u64 = 1 << 20;

/// Advances a SplitMix64 state and returns the next output.
pub fn splitmix64_next(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for trial `trial`: the `trial`-th output of the SplitMix64
/// sequence started at `base_seed`.
pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    let mut state = base_seed;
    let mut out = splitmix64_next(&mut state);
    for _ in 0..trial {
        out = splitmix64_next(&mut state);
    }
    out
}

/// ChaCha8 generator keyed by `seed` on substream `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `rows x cols` matrix of iid standard normals drawn in row-major order.
pub fn standard_normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            m[[i, j]] = StandardNormal.sample(rng);
        }
    }
    m
}
