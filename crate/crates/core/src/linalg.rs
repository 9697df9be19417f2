//! Solvers for the assembled systems.
//!
//! The full perturbed system is symmetric positive definite for symmetric
//! elliptic coefficients and is solved with Jacobi-preconditioned conjugate
//! gradients. Slice systems are small and reused across hundreds of
//! right-hand sides, so they get a direct banded factorization computed
//! once and cached.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::assembly::{BandedMatrix, NodalField, SliceSystem, SparseSymSystem};

#[derive(Debug, Error, Clone)]
pub enum LinalgError {
    #[error("system is not flagged symmetric; conjugate gradients requires symmetry")]
    NotSymmetric,
    #[error(
        "conjugate gradients did not converge in {iterations} iterations \
         (relative residual {relative_residual:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        relative_residual: f64,
        /// Best iterate reached before giving up.
        best: Vec<f64>,
    },
    #[error("matrix diagonal entry {row} is not positive; cannot precondition")]
    BadDiagonal { row: usize },
    #[error("non-positive pivot {value:.3e} at row {row}: loss of ellipticity")]
    NonPositivePivot { row: usize, value: f64 },
    #[error("right-hand side has length {got}, system expects {expected}")]
    SizeMismatch { expected: usize, got: usize },
}

/// Iteration record of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub wall_time: Duration,
}

/// Jacobi-preconditioned conjugate gradients down to
/// `‖Mx − b‖ / ‖b‖ <= tol`.
pub fn solve_spd(
    system: &SparseSymSystem,
    tol: f64,
    max_iter: usize,
) -> Result<(NodalField, SolveStats), LinalgError> {
    if !system.symmetric {
        return Err(LinalgError::NotSymmetric);
    }
    let start = Instant::now();
    let m = &system.matrix;
    let b = &system.rhs;
    let n = m.n();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            NodalField::from_values(system.grid().clone(), x),
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
                wall_time: start.elapsed(),
            },
        ));
    }

    let mut diag_inv = Vec::with_capacity(n);
    for (row, d) in m.diagonal().into_iter().enumerate() {
        if !(d > 0.0) {
            return Err(LinalgError::BadDiagonal { row });
        }
        diag_inv.push(1.0 / d);
    }

    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&diag_inv).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz: f64 = dot(&r, &z);
    let mut rel = 1.0;

    for it in 1..=max_iter {
        m.spmv(&p, &mut q);
        let pq = dot(&p, &q);
        // Conjugate gradients decreases the energy functional
        // ½xᵀMx − bᵀx monotonically; its decrement this iteration is
        // −½·rz²/pq. The residual norms themselves may oscillate, so the
        // debug sanity checks are positivity of the curvature and of the
        // preconditioned inner product.
        debug_assert!(pq > 0.0, "pᵀMp = {pq:.6e} at iteration {it}: matrix not SPD");
        debug_assert!(
            rz > 0.0,
            "rᵀM⁻¹r = {rz:.6e} at iteration {it}: preconditioner not positive"
        );
        let alpha = rz / pq;
        debug_assert!(
            alpha * (0.5 * alpha * pq - rz) <= 0.0,
            "energy functional increased at iteration {it}"
        );
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        rel = norm2(&r) / bnorm;
        if rel <= tol {
            return Ok((
                NodalField::from_values(system.grid().clone(), x),
                SolveStats {
                    iterations: it,
                    relative_residual: rel,
                    wall_time: start.elapsed(),
                },
            ));
        }
        for i in 0..n {
            z[i] = r[i] * diag_inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }

    Err(LinalgError::NonConvergence {
        iterations: max_iter,
        relative_residual: rel,
        best: x,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Banded LU factorization without pivoting. Elliptic slice operators have
/// a positive definite symmetric part, so all pivots stay positive; a
/// non-positive pivot therefore signals loss of ellipticity.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedFactor {
    n: usize,
    p: usize,
    /// L below the diagonal (unit diagonal implied), U on and above,
    /// banded layout as in [`BandedMatrix`].
    lu: Vec<f64>,
}

impl BandedFactor {
    pub fn new(matrix: &BandedMatrix) -> Result<Self, LinalgError> {
        let n = matrix.n();
        let p = matrix.half_bandwidth();
        let width = 2 * p + 1;
        let mut lu = vec![0.0; width * n];
        let slot = |i: usize, j: usize| (i + p - j) * n + j;
        for i in 0..n {
            let lo = i.saturating_sub(p);
            let hi = (i + p).min(n - 1);
            for j in lo..=hi {
                lu[slot(i, j)] = matrix.get(i, j);
            }
        }
        for k in 0..n {
            let pivot = lu[slot(k, k)];
            if !(pivot > 0.0) {
                return Err(LinalgError::NonPositivePivot { row: k, value: pivot });
            }
            let imax = (k + p).min(n - 1);
            for i in k + 1..=imax {
                let l = lu[slot(i, k)] / pivot;
                lu[slot(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..=imax {
                        let ukj = lu[slot(k, j)];
                        if ukj != 0.0 {
                            lu[slot(i, j)] -= l * ukj;
                        }
                    }
                }
            }
        }
        Ok(BandedFactor { n, p, lu })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if rhs.len() != self.n {
            return Err(LinalgError::SizeMismatch {
                expected: self.n,
                got: rhs.len(),
            });
        }
        let slot = |i: usize, j: usize| (i + self.p - j) * self.n + j;
        let mut x = rhs.to_vec();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.p);
            let mut acc = x[i];
            for j in lo..i {
                acc -= self.lu[slot(i, j)] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.p).min(self.n - 1);
            let mut acc = x[i];
            for j in i + 1..=hi {
                acc -= self.lu[slot(i, j)] * x[j];
            }
            x[i] = acc / self.lu[slot(i, i)];
        }
        Ok(x)
    }
}

/// Solves the slice system for one right-hand side, factoring on first use
/// and reusing the cached factorization afterwards.
pub fn solve_banded(slice: &SliceSystem, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let factor = slice
        .factor
        .get_or_init(|| BandedFactor::new(&slice.matrix));
    match factor {
        Ok(f) => f.solve(rhs),
        Err(e) => Err(e.clone()),
    }
}
