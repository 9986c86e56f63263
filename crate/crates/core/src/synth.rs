//! Ground-truth low-rank multi-task problem generation.
//!
//! A problem couples `T` linear-regression tasks through a shared rank-`r`
//! column space: `Theta* = U* B*` with `U*` a `d x r` orthonormal basis and
//! `B* = Sigma* V*^T` for a diagonal `Sigma*` and orthonormal `V*`. Each
//! task `t` observes `y_t = X_t theta*_t` through its own `n x d` standard
//! Gaussian design `X_t`, with no additive noise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{thin_qr, Matrix, OrthonormalBasis, Vector};
use crate::rng::{
    standard_normal_matrix, stream_rng, STREAM_TASK_BASE, STREAM_USTAR, STREAM_VSTAR,
};

/// Shape of the planted singular-value spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularValueProfile {
    /// Values geometrically spaced from 1 up to the target condition
    /// number.
    Geometric,
    /// All values equal to the target (condition number 1).
    Equal,
}

/// Contiguous equal-block sample split of every task's rows.
///
/// The `2 T_GD + 2` blocks are labeled `00, 0, 1, ..., 2 T_GD` in row
/// order. Blocks `00` and `0` feed initialization only; in split mode the
/// solver consumes block `tau` for its B update and block `tau + T_GD` for
/// its gradient at iteration `tau`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSplit {
    /// Gradient-iteration budget the split was built for.
    pub t_gd: usize,
    /// Rows per block.
    pub block_len: usize,
}

impl SampleSplit {
    /// Total number of blocks.
    pub fn block_count(&self) -> usize {
        2 * self.t_gd + 2
    }

    /// Rows of block `00` (initialization, truncation threshold).
    pub fn rows_init_00(&self) -> Range<usize> {
        0..self.block_len
    }

    /// Rows of block `0` (initialization, power method sketch).
    pub fn rows_init_0(&self) -> Range<usize> {
        self.block_len..2 * self.block_len
    }

    /// Rows of the numbered block `label`, `1 <= label <= 2 T_GD`.
    pub fn rows_for_label(&self, label: usize) -> Range<usize> {
        assert!(
            label >= 1 && label <= 2 * self.t_gd,
            "split label {label} out of range 1..={}",
            2 * self.t_gd
        );
        let start = (label + 1) * self.block_len;
        start..start + self.block_len
    }
}

/// A fully materialized synthetic problem.
///
/// Immutable after construction; trials that share an instance may read it
/// concurrently.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    /// Feature dimension.
    pub d: usize,
    /// Number of tasks.
    pub t_count: usize,
    /// Shared subspace rank.
    pub r: usize,
    /// Samples per task.
    pub n: usize,
    /// Seed the instance was generated from.
    pub seed: u64,
    /// Planted orthonormal column space, `d x r`.
    pub ustar: OrthonormalBasis,
    /// Planted coefficient matrix `Sigma* V*^T`, `r x T`.
    pub bstar: Matrix,
    /// `U* B*`, `d x T`.
    pub theta_star: Matrix,
    /// Largest planted singular value.
    pub sigma_max: f64,
    /// Smallest planted singular value.
    pub sigma_min: f64,
    /// `sigma_max / sigma_min`.
    pub kappa: f64,
    /// Measured incoherence: `sqrt(max_t ||b*_t||^2 * T / (r sigma_max^2))`.
    /// Recorded, never enforced by rejection.
    pub mu_measured: f64,
    /// Per-task `n x d` Gaussian designs.
    pub xs: Vec<Matrix>,
    /// Per-task noiseless responses `X_t theta*_t`, length `n`.
    pub ys: Vec<Vector>,
    /// Sample split, when one has been applied.
    pub split: Option<SampleSplit>,
}

/// Generates a problem with the geometric singular-value profile.
pub fn generate_problem(
    d: usize,
    t_count: usize,
    r: usize,
    n: usize,
    kappa_target: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    generate_problem_with_profile(
        d,
        t_count,
        r,
        n,
        kappa_target,
        SingularValueProfile::Geometric,
        seed,
    )
}

/// Generates a problem with an explicit singular-value profile.
pub fn generate_problem_with_profile(
    d: usize,
    t_count: usize,
    r: usize,
    n: usize,
    kappa_target: f64,
    profile: SingularValueProfile,
    seed: u64,
) -> Result<ProblemInstance> {
    if r > d.min(t_count) || r == 0 {
        return Err(Error::InvalidRank { r, d, t: t_count });
    }
    if d == 0 || t_count == 0 || n == 0 {
        return Err(Error::Config(format!(
            "problem dimensions must be positive, got d={d}, T={t_count}, n={n}"
        )));
    }
    if kappa_target.is_nan() || kappa_target < 1.0 {
        return Err(Error::Config(format!(
            "kappa_target must be >= 1, got {kappa_target}"
        )));
    }

    let mut rng_u = stream_rng(seed, STREAM_USTAR);
    let (ustar, _) = thin_qr(&standard_normal_matrix(&mut rng_u, d, r))?;
    let mut rng_v = stream_rng(seed, STREAM_VSTAR);
    let (vstar, _) = thin_qr(&standard_normal_matrix(&mut rng_v, t_count, r))?;

    let sigmas = singular_values(r, kappa_target, profile);
    let sigma_max = sigmas[0];
    let sigma_min = sigmas[r - 1];

    // B* = Sigma* V*^T: scale row i of V*^T by sigma_i.
    let mut bstar: Matrix = vstar.as_matrix().t().to_owned();
    for (i, &sv) in sigmas.iter().enumerate() {
        for t in 0..t_count {
            bstar[[i, t]] *= sv;
        }
    }
    let theta_star = ustar.as_matrix().dot(&bstar);

    let mut xs = Vec::with_capacity(t_count);
    let mut ys = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let mut rng_t = stream_rng(seed, STREAM_TASK_BASE + t as u64);
        let x = standard_normal_matrix(&mut rng_t, n, d);
        let y = x.dot(&theta_star.column(t));
        xs.push(x);
        ys.push(y);
    }

    let max_b_sq = (0..t_count)
        .map(|t| {
            let col = bstar.column(t);
            col.dot(&col)
        })
        .fold(0.0f64, f64::max);
    let mu_measured = (max_b_sq * t_count as f64 / (r as f64 * sigma_max * sigma_max)).sqrt();

    Ok(ProblemInstance {
        d,
        t_count,
        r,
        n,
        seed,
        ustar,
        bstar,
        theta_star,
        sigma_max,
        sigma_min,
        kappa: sigma_max / sigma_min,
        mu_measured,
        xs,
        ys,
        split: None,
    })
}

/// Planted spectrum, sorted descending.
///
/// Geometric: `sigma_i = kappa^((r-1-i)/(r-1))`, running from `kappa` down
/// to 1. A rank-1 geometric spectrum degenerates to the single value 1.
fn singular_values(r: usize, kappa_target: f64, profile: SingularValueProfile) -> Vec<f64> {
    match profile {
        SingularValueProfile::Geometric => {
            if r == 1 {
                vec![1.0]
            } else {
                (0..r)
                    .map(|i| kappa_target.powf((r - 1 - i) as f64 / (r - 1) as f64))
                    .collect()
            }
        }
        SingularValueProfile::Equal => vec![kappa_target; r],
    }
}

impl ProblemInstance {
    /// Attaches a `2 T_GD + 2`-block contiguous sample split.
    ///
    /// Fails unless `n` is a multiple of the block count, so every block
    /// gets the same number of rows.
    pub fn sample_split(mut self, t_gd: usize) -> Result<Self> {
        let blocks = 2 * t_gd + 2;
        if !self.n.is_multiple_of(blocks) {
            return Err(Error::SplitSize {
                n: self.n,
                required_multiple: blocks,
            });
        }
        self.split = Some(SampleSplit {
            t_gd,
            block_len: self.n / blocks,
        });
        Ok(self)
    }

    /// Squared column norm of `b*_t`.
    pub fn bstar_col_norm_sq(&self, t: usize) -> f64 {
        let col = self.bstar.column(t);
        col.dot(&col)
    }

    /// Writes the instance as a one-line JSON header followed by
    /// little-endian row-major `f64` payloads, in the order `U*`, `B*`,
    /// `Theta*`, then `X_t`, `y_t` per task.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = BinaryHeader {
            format_version: 1,
            d: self.d,
            t_count: self.t_count,
            r: self.r,
            n: self.n,
            seed: self.seed,
            sigma_max: self.sigma_max,
            sigma_min: self.sigma_min,
            kappa: self.kappa,
            mu_measured: self.mu_measured,
            split_t_gd: self.split.map(|s| s.t_gd),
        };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        write_matrix(w, self.ustar.as_matrix())?;
        write_matrix(w, &self.bstar)?;
        write_matrix(w, &self.theta_star)?;
        for t in 0..self.t_count {
            write_matrix(w, &self.xs[t])?;
            for v in self.ys[t].iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads an instance previously written by [`write_binary`].
    ///
    /// [`write_binary`]: ProblemInstance::write_binary
    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut header_bytes = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            r.read_exact(&mut byte)?;
            if byte[0] == b'\n' {
                break;
            }
            header_bytes.push(byte[0]);
        }
        let header: BinaryHeader = serde_json::from_slice(&header_bytes)?;
        if header.format_version != 1 {
            return Err(Error::Config(format!(
                "unsupported problem file version {}",
                header.format_version
            )));
        }
        let ustar_m = read_matrix(r, header.d, header.r)?;
        let bstar = read_matrix(r, header.r, header.t_count)?;
        let theta_star = read_matrix(r, header.d, header.t_count)?;
        let mut xs = Vec::with_capacity(header.t_count);
        let mut ys = Vec::with_capacity(header.t_count);
        for _ in 0..header.t_count {
            xs.push(read_matrix(r, header.n, header.d)?);
            let ym = read_matrix(r, header.n, 1)?;
            ys.push(ym.column(0).to_owned());
        }
        let split = header.split_t_gd.map(|t_gd| SampleSplit {
            t_gd,
            block_len: header.n / (2 * t_gd + 2),
        });
        Ok(ProblemInstance {
            d: header.d,
            t_count: header.t_count,
            r: header.r,
            n: header.n,
            seed: header.seed,
            ustar: OrthonormalBasis::new(ustar_m)?,
            bstar,
            theta_star,
            sigma_max: header.sigma_max,
            sigma_min: header.sigma_min,
            kappa: header.kappa,
            mu_measured: header.mu_measured,
            xs,
            ys,
            split,
        })
    }

    /// [`write_binary`] to a filesystem path.
    ///
    /// [`write_binary`]: ProblemInstance::write_binary
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// [`read_binary`] from a filesystem path.
    ///
    /// [`read_binary`]: ProblemInstance::read_binary
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_binary(&mut r)
    }
}

#[derive(Serialize, Deserialize)]
struct BinaryHeader {
    format_version: u32,
    d: usize,
    t_count: usize,
    r: usize,
    n: usize,
    seed: u64,
    sigma_max: f64,
    sigma_min: f64,
    kappa: f64,
    mu_measured: f64,
    split_t_gd: Option<usize>,
}

fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    for row in m.rows() {
        for v in row.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros((rows, cols));
    let mut buf = [0u8; 8];
    for i in 0..rows {
        for j in 0..cols {
            r.read_exact(&mut buf)?;
            m[[i, j]] = f64::from_le_bytes(buf);
        }
    }
    Ok(m)
}
