//! Dense linear-algebra kernels shared by every other module: thin QR,
//! least squares, spectral norms, extreme singular values, symmetric
//! eigenvalues, and subspace distance.
//!
//! All routines are pure functions over real dense matrices. Sign and
//! ordering conventions are fixed (positive R diagonal, descending
//! eigenvalues) so that repeated runs are bit-comparable.

use ndarray::{s, Array1, Array2};

use crate::error::{Error, Result};

/// Dense real matrix.
pub type Matrix = Array2<f64>;
/// Dense real column vector.
pub type Vector = Array1<f64>;

/// Relative pivot threshold below which a matrix counts as rank deficient.
pub const RANK_TOL: f64 = 1e-12;
/// Convergence tolerance for power iteration, relative to the Gram trace.
pub const POWER_TOL: f64 = 1e-12;
/// Iteration cap for power iteration.
pub const POWER_MAX_ITERS: usize = 10_000;
/// Sweep cap for the cyclic Jacobi eigensolver.
const JACOBI_MAX_SWEEPS: usize = 60;

/// Matrix with orthonormal columns, validated on construction.
///
/// Wraps the `d x r` matrices that represent subspace estimates. The Gram
/// defect `max |M^T M - I|` must not exceed 1e-10.
#[derive(Clone, Debug)]
pub struct OrthonormalBasis {
    m: Matrix,
}

impl OrthonormalBasis {
    /// Validates orthonormality and wraps the matrix.
    pub fn new(m: Matrix) -> Result<Self> {
        let (d, r) = m.dim();
        if r > d {
            return Err(Error::dim(
                "orthonormal basis",
                "cols <= rows",
                format!("{d}x{r}"),
            ));
        }
        let defect = orthonormality_defect(&m);
        if defect.is_nan() || defect > 1e-10 {
            return Err(Error::NotOrthonormal { defect });
        }
        Ok(OrthonormalBasis { m })
    }

    /// (rows, cols) of the basis matrix.
    pub fn dims(&self) -> (usize, usize) {
        self.m.dim()
    }

    /// Borrow the underlying matrix.
    pub fn as_matrix(&self) -> &Matrix {
        &self.m
    }

    /// Unwrap into the underlying matrix.
    pub fn into_matrix(self) -> Matrix {
        self.m
    }
}

impl std::ops::Deref for OrthonormalBasis {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.m
    }
}

/// `max |M^T M - I|` over all entries of the Gram matrix.
pub fn orthonormality_defect(m: &Matrix) -> f64 {
    let r = m.ncols();
    let gram = m.t().dot(m);
    let mut defect = 0.0f64;
    for i in 0..r {
        for j in 0..r {
            let target = if i == j { 1.0 } else { 0.0 };
            defect = defect.max((gram[[i, j]] - target).abs());
        }
    }
    defect
}

/// Frobenius norm.
pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Thin QR factorization of a `d x r` matrix, `d >= r`, via Householder
/// reflections.
///
/// The diagonal of `R` is strictly positive; this pins down the otherwise
/// sign-ambiguous factorization so runs are reproducible bit for bit.
pub fn thin_qr(m: &Matrix) -> Result<(OrthonormalBasis, Matrix)> {
    let (d, r) = m.dim();
    if d < r {
        return Err(Error::dim("thin_qr", "rows >= cols", format!("{d}x{r}")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "thin_qr" });
    }

    // Pivot scale for the rank test: the largest original column norm.
    let mut scale = 0.0f64;
    for j in 0..r {
        let col = m.slice(s![.., j]);
        scale = scale.max(col.dot(&col).sqrt());
    }
    if scale == 0.0 {
        return Err(Error::RankDeficient { column: 0 });
    }

    let mut a = m.clone();
    // Householder vectors with their 2/v'v coefficients.
    let mut reflectors: Vec<(Array1<f64>, f64)> = Vec::with_capacity(r);
    for k in 0..r {
        let x = a.slice(s![k.., k]);
        let normx = x.dot(&x).sqrt();
        if normx <= RANK_TOL * scale {
            return Err(Error::RankDeficient { column: k });
        }
        // alpha gets the sign opposite x[0] to avoid cancellation.
        let alpha = if a[[k, k]] >= 0.0 { -normx } else { normx };
        let mut v = x.to_owned();
        v[0] -= alpha;
        let beta = 2.0 / v.dot(&v);
        for j in k..r {
            let t = beta * v.dot(&a.slice(s![k.., j]));
            a.slice_mut(s![k.., j]).scaled_add(-t, &v);
        }
        a[[k, k]] = alpha;
        reflectors.push((v, beta));
    }

    let mut rmat: Matrix = Array2::zeros((r, r));
    for i in 0..r {
        for j in i..r {
            rmat[[i, j]] = a[[i, j]];
        }
    }

    // Accumulate the thin Q by applying reflectors to I_{d x r} in reverse.
    let mut q: Matrix = Array2::zeros((d, r));
    for j in 0..r {
        q[[j, j]] = 1.0;
    }
    for k in (0..r).rev() {
        let (v, beta) = &reflectors[k];
        for j in 0..r {
            let t = beta * v.dot(&q.slice(s![k.., j]));
            q.slice_mut(s![k.., j]).scaled_add(-t, v);
        }
    }

    // Enforce the positive-diagonal convention.
    for k in 0..r {
        if rmat[[k, k]] < 0.0 {
            for j in k..r {
                rmat[[k, j]] = -rmat[[k, j]];
            }
            for i in 0..d {
                q[[i, k]] = -q[[i, k]];
            }
        }
    }

    Ok((OrthonormalBasis::new(q)?, rmat))
}

/// Solves `min_b || y - A b ||_2` for a full-column-rank `n x r` matrix,
/// `n >= r`, via the thin QR of `A`.
pub fn least_squares(a: &Matrix, y: &Vector) -> Result<Vector> {
    let (n, r) = a.dim();
    if y.len() != n {
        return Err(Error::dim(
            "least_squares",
            format!("rhs of length {n}"),
            format!("{}", y.len()),
        ));
    }
    if n < r {
        return Err(Error::Underdetermined { rows: n, cols: r });
    }
    let (q, rmat) = thin_qr(a)?;
    let qty = q.as_matrix().t().dot(y);
    back_substitute(&rmat, qty)
}

/// Solves `R b = rhs` for upper-triangular `R` with nonzero diagonal.
fn back_substitute(r: &Matrix, mut rhs: Vector) -> Result<Vector> {
    let n = r.nrows();
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in i + 1..n {
            s -= r[[i, j]] * rhs[j];
        }
        rhs[i] = s / r[[i, i]];
    }
    Ok(rhs)
}

/// Spectral-norm estimate from power iteration.
#[derive(Clone, Copy, Debug)]
pub struct SpectralNormEstimate {
    /// Largest-singular-value estimate.
    pub value: f64,
    /// False when the iteration cap was exhausted before the eigenvalue
    /// estimate settled; `value` is then the last iterate.
    pub converged: bool,
    /// Matrix-vector products performed.
    pub iterations: usize,
}

/// Largest singular value via power iteration on the Gram matrix of the
/// smaller dimension.
///
/// Stops when successive Rayleigh quotients differ by at most
/// [`POWER_TOL`] times the Gram trace, or after [`POWER_MAX_ITERS`]
/// products.
pub fn spectral_norm(m: &Matrix) -> SpectralNormEstimate {
    let (rows, cols) = m.dim();
    let g = if cols <= rows {
        m.t().dot(m)
    } else {
        m.dot(&m.t())
    };
    let k = g.nrows();
    // Trace of the Gram matrix bounds its top eigenvalue from above.
    let trace: f64 = g.diag().iter().sum();
    if trace <= 0.0 {
        return SpectralNormEstimate {
            value: 0.0,
            converged: true,
            iterations: 0,
        };
    }
    let mut v: Array1<f64> = Array1::from_iter((0..k).map(|i| 1.0 + 1e-3 * i as f64));
    let vn = v.dot(&v).sqrt();
    v /= vn;
    let mut lambda_prev = f64::INFINITY;
    for it in 1..=POWER_MAX_ITERS {
        let w = g.dot(&v);
        let lambda = v.dot(&w);
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            // Start vector fell in the null space; restart from the
            // largest-diagonal coordinate axis, which cannot.
            let imax = (0..k)
                .max_by(|&i, &j| g[[i, i]].partial_cmp(&g[[j, j]]).unwrap())
                .unwrap();
            v.fill(0.0);
            v[imax] = 1.0;
            continue;
        }
        v = w / wn;
        if (lambda - lambda_prev).abs() <= POWER_TOL * trace {
            return SpectralNormEstimate {
                value: lambda.max(0.0).sqrt(),
                converged: true,
                iterations: it,
            };
        }
        lambda_prev = lambda;
    }
    SpectralNormEstimate {
        value: lambda_prev.max(0.0).sqrt(),
        converged: false,
        iterations: POWER_MAX_ITERS,
    }
}

/// Distance between the column spaces of two orthonormal bases:
/// the spectral norm of `(I - U1 U1^T) U2`.
///
/// Zero when the spans coincide, one when some direction of `U2` is
/// orthogonal to all of `U1`. One-sided by definition.
pub fn subspace_distance(u1: &OrthonormalBasis, u2: &OrthonormalBasis) -> Result<f64> {
    if u1.dims() != u2.dims() {
        return Err(Error::dim(
            "subspace_distance",
            format!("{:?}", u1.dims()),
            format!("{:?}", u2.dims()),
        ));
    }
    let cross = u1.as_matrix().t().dot(u2.as_matrix());
    let resid = u2.as_matrix() - &u1.as_matrix().dot(&cross);
    Ok(spectral_norm(&resid).value.min(1.0))
}

/// `(sigma_max, sigma_min)` of an arbitrary matrix, from the eigenvalues of
/// the Gram matrix on the smaller dimension.
///
/// `sigma_min` is the smallest of the `min(rows, cols)` singular values.
pub fn extreme_singular_values(m: &Matrix) -> Result<(f64, f64)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "extreme_singular_values",
        });
    }
    let (rows, cols) = m.dim();
    let g = if cols <= rows {
        m.t().dot(m)
    } else {
        m.dot(&m.t())
    };
    let evals = jacobi_eigenvalues(g)?;
    let top = evals.first().copied().unwrap_or(0.0).max(0.0);
    let bottom = evals.last().copied().unwrap_or(0.0).max(0.0);
    Ok((top.sqrt(), bottom.sqrt()))
}

/// Eigenvalues of a symmetric matrix, sorted descending, via cyclic Jacobi
/// sweeps.
///
/// The input must be symmetric to within 1e-12 per entry.
pub fn symmetric_eigenvalues(s: &Matrix) -> Result<Vec<f64>> {
    let (n, ncols) = s.dim();
    if n != ncols {
        return Err(Error::dim(
            "symmetric_eigenvalues",
            "square matrix",
            format!("{n}x{ncols}"),
        ));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "symmetric_eigenvalues",
        });
    }
    let mut defect = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            defect = defect.max((s[[i, j]] - s[[j, i]]).abs());
        }
    }
    if defect > 1e-12 {
        return Err(Error::NotSymmetric { defect });
    }
    let sym = (s + &s.t()) * 0.5;
    jacobi_eigenvalues(sym)
}

/// Cyclic Jacobi eigensolver for a symmetric matrix; returns eigenvalues
/// sorted descending.
fn jacobi_eigenvalues(mut a: Matrix) -> Result<Vec<f64>> {
    let n = a.nrows();
    if n == 1 {
        return Ok(vec![a[[0, 0]]]);
    }
    let frob = frobenius_norm(&a);
    if frob == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let tol = 1e-14 * frob;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off += 2.0 * a[[p, q]] * a[[p, q]];
            }
        }
        if off.sqrt() <= tol {
            let mut evals: Vec<f64> = a.diag().to_vec();
            evals.sort_by(|x, y| y.partial_cmp(x).unwrap());
            return Ok(evals);
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sgn / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sv = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - sv * akq;
                    a[[k, q]] = sv * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - sv * aqk;
                    a[[q, k]] = sv * apk + c * aqk;
                }
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
            }
        }
    }
    Err(Error::NoConvergence {
        context: "jacobi eigensolver",
        max_iters: JACOBI_MAX_SWEEPS,
    })
}
