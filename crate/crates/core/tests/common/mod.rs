//! Independent numerical oracles for the integration tests.
//!
//! Comparison oracles (eigensolver, finite differences, normal equations)
//! are written from textbook formulas without calling the crate's linalg
//! kernels, so agreement is evidence of correctness rather than
//! self-confirmation. Construction helpers may use crate utilities.

#![allow(dead_code)]

use difmtrl::linalg::thin_qr;
use difmtrl::rng::{standard_normal_matrix, stream_rng};
use difmtrl::solvers::local_gradient;
use difmtrl::synth::ProblemInstance;
use difmtrl::{Matrix, OrthonormalBasis, Vector};
use ndarray::{s, Array2};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns eigenvalues in descending order with matching eigenvector
/// columns.
pub fn jacobi_eigen(sym: &Matrix) -> (Vec<f64>, Matrix) {
    let n = sym.nrows();
    assert_eq!(sym.ncols(), n, "square input");
    let mut a = sym.clone();
    let mut v: Matrix = Array2::eye(n);
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s_ = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s_ * akq;
                    a[[k, q]] = s_ * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s_ * aqk;
                    a[[q, k]] = s_ * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s_ * vkq;
                    v[[k, q]] = s_ * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].partial_cmp(&a[[i, i]]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[[i, i]]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &i) in order.iter().enumerate() {
        vectors.column_mut(col).assign(&v.column(i));
    }
    (eigenvalues, vectors)
}

/// Top-`r` eigenvector block of a symmetric matrix, columns orthonormal.
pub fn top_eigenspace(sym: &Matrix, r: usize) -> Matrix {
    let (_, vectors) = jacobi_eigen(sym);
    vectors.slice(s![.., ..r]).to_owned()
}

/// Subspace distance via the Jacobi oracle: largest singular value
/// of `(I - U1 U1^T) U2`, computed as `sqrt(lambda_max(B^T B))`.
pub fn sd_oracle(u1: &Matrix, u2: &Matrix) -> f64 {
    let proj = u1.dot(&u1.t().dot(u2));
    let b = u2 - &proj;
    let gram = b.t().dot(&b);
    let (eigenvalues, _) = jacobi_eigen(&gram);
    eigenvalues[0].max(0.0).sqrt()
}

pub fn frob(m: &Matrix) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves a square linear system by Gaussian elimination with partial
/// pivoting.
pub fn gauss_solve(mut a: Matrix, mut rhs: Vector) -> Vector {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(rhs.len(), n);
    for k in 0..n {
        let mut pivot = k;
        for i in (k + 1)..n {
            if a[[i, k]].abs() > a[[pivot, k]].abs() {
                pivot = i;
            }
        }
        if pivot != k {
            for j in 0..n {
                let tmp = a[[k, j]];
                a[[k, j]] = a[[pivot, j]];
                a[[pivot, j]] = tmp;
            }
            rhs.swap(k, pivot);
        }
        let akk = a[[k, k]];
        assert!(akk.abs() > 1e-300, "singular system in oracle");
        for i in (k + 1)..n {
            let f = a[[i, k]] / akk;
            for j in k..n {
                a[[i, j]] -= f * a[[k, j]];
            }
            rhs[i] -= f * rhs[k];
        }
    }
    let mut x = rhs;
    for k in (0..n).rev() {
        let mut acc = x[k];
        for j in (k + 1)..n {
            acc -= a[[k, j]] * x[j];
        }
        x[k] = acc / a[[k, k]];
    }
    x
}

/// Least squares through the normal equations `(A^T A) b = A^T y`.
pub fn normal_eq_solve(a: &Matrix, y: &Vector) -> Vector {
    let gram = a.t().dot(a);
    let rhs = a.t().dot(y);
    gauss_solve(gram, rhs)
}

/// Top-`k` singular values by power iteration with deflation on `M^T M`.
pub fn power_deflation_svals(m: &Matrix, k: usize) -> Vec<f64> {
    let mut gram = m.t().dot(m);
    let n = gram.nrows();
    let mut values = Vec::with_capacity(k);
    let mut rng = stream_rng(0xB0B, 700);
    for _ in 0..k {
        let mut v = standard_normal_matrix(&mut rng, n, 1).column(0).to_owned();
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w = gram.dot(&v);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= 1e-300 {
                lambda = 0.0;
                break;
            }
            let next = &w / norm;
            let delta: f64 = (&next - &v).iter().map(|x| x * x).sum::<f64>().sqrt();
            v = next;
            lambda = norm;
            if delta < 1e-14 {
                break;
            }
        }
        values.push(lambda.max(0.0).sqrt());
        let outer = v
            .view()
            .insert_axis(ndarray::Axis(1))
            .dot(&v.view().insert_axis(ndarray::Axis(0)));
        gram = &gram - &(outer * lambda);
    }
    values
}

/// `f(U) = (1/2) sum_t ||y_t - X_t U b_t||^2` over the given tasks; the
/// objective whose U-gradient the solver computes.
pub fn objective_half_sumsq(
    problem: &ProblemInstance,
    tasks: &[usize],
    u: &Matrix,
    b: &Matrix,
) -> f64 {
    let mut total = 0.0;
    for (k, &t) in tasks.iter().enumerate() {
        let pred = problem.xs[t].dot(&u.dot(&b.column(k)));
        let residual = &pred - &problem.ys[t];
        total += residual.iter().map(|x| x * x).sum::<f64>();
    }
    0.5 * total
}

/// Central finite differences of `objective_half_sumsq` in every `U`
/// coordinate.
pub fn fd_gradient(
    problem: &ProblemInstance,
    tasks: &[usize],
    u: &Matrix,
    b: &Matrix,
    h: f64,
) -> Matrix {
    let (d, r) = u.dim();
    let mut grad = Array2::zeros((d, r));
    let mut probe = u.clone();
    for i in 0..d {
        for j in 0..r {
            let orig = probe[[i, j]];
            probe[[i, j]] = orig + h;
            let fp = objective_half_sumsq(problem, tasks, &probe, b);
            probe[[i, j]] = orig - h;
            let fm = objective_half_sumsq(problem, tasks, &probe, b);
            probe[[i, j]] = orig;
            grad[[i, j]] = (fp - fm) / (2.0 * h);
        }
    }
    grad
}

/// Relative Frobenius error between the analytic local gradient and the
/// finite-difference oracle on one node's task set.
pub fn gradient_fd_relative_error(
    problem: &ProblemInstance,
    tasks: &[usize],
    u: &OrthonormalBasis,
    b: &Matrix,
) -> f64 {
    let analytic = local_gradient(problem, tasks, u, b, 0..problem.n);
    let oracle = fd_gradient(problem, tasks, u.as_matrix(), b, 1e-6);
    frob(&(&analytic - &oracle)) / frob(&oracle).max(1e-300)
}

/// Ring adjacency on `l` nodes (diameter `l/2`).
pub fn ring_adjacency(l: usize) -> Array2<bool> {
    let mut a = Array2::from_elem((l, l), false);
    for g in 0..l {
        let h = (g + 1) % l;
        a[[g, h]] = true;
        a[[h, g]] = true;
    }
    a
}

/// Orthonormal basis at subspace distance exactly `delta` from `ustar`:
/// every principal angle rotated by `asin(delta)` into the orthogonal
/// complement.
pub fn basis_at_distance(ustar: &OrthonormalBasis, delta: f64, seed: u64) -> OrthonormalBasis {
    let (d, r) = ustar.dims();
    assert!(d >= 2 * r, "need room for a complement of rank r");
    let mut rng = stream_rng(seed, 701);
    let g = standard_normal_matrix(&mut rng, d, r);
    let proj = ustar.as_matrix().dot(&ustar.as_matrix().t().dot(&g));
    let complement = thin_qr(&(&g - &proj)).unwrap().0;
    let theta = delta.asin();
    let rotated = ustar.as_matrix() * theta.cos() + complement.as_matrix() * theta.sin();
    OrthonormalBasis::new(rotated).unwrap()
}

/// Clones task 0's data and truth into task 1, so a two-node network with
/// one task per node sees identical local problems.
/// Copies tasks `0..T/2` onto tasks `T/2..T` so two nodes holding the
/// two halves see byte-identical local data. Requires even `t_count` and
/// `r <= t_count / 2` so the mirrored problem keeps rank `r`.
pub fn mirror_tasks(mut problem: ProblemInstance) -> ProblemInstance {
    let half = problem.t_count / 2;
    assert_eq!(half * 2, problem.t_count);
    assert!(problem.r <= half);
    for t in 0..half {
        problem.xs[half + t] = problem.xs[t].clone();
        problem.ys[half + t] = problem.ys[t].clone();
        let b = problem.bstar.column(t).to_owned();
        problem.bstar.column_mut(half + t).assign(&b);
        let th = problem.theta_star.column(t).to_owned();
        problem.theta_star.column_mut(half + t).assign(&th);
    }
    problem
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let m = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    (m * sxy - sx * sy) / (m * sxx - sx * sx)
}
