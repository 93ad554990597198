//! Conjugate gradients for `diag(d) − Δ_h` on interior nodes with homogeneous Dirichlet data.
//!
//! Reductions use fixed-size chunks whose partial sums are added in index order, so results
//! do not depend on the number of worker threads.

use crate::grid::GridDomain;
use rayon::prelude::*;
use thiserror::Error;

const CHUNK: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum CgError {
    #[error("conjugate gradients did not reach relative residual {tol:e} in {iterations} iterations (reached {reached:e})")]
    NotConverged { tol: f64, iterations: usize, reached: f64 },
    #[error("conjugate gradients broke down: operator not positive definite")]
    Breakdown,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let parts: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    parts.iter().sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_chunks_mut(CHUNK).zip(x.par_chunks(CHUNK)).for_each(|(yc, xc)| {
        for (a, b) in yc.iter_mut().zip(xc) {
            *a += alpha * b;
        }
    });
}

/// `out = diag·x − Δ_h x` on interior nodes, 0 on the boundary. `x` must vanish on the boundary.
pub fn apply_shifted(d: &GridDomain, diag: &[f64], x: &[f64], out: &mut [f64]) {
    let n = d.n();
    let inv_h2 = 1.0 / (d.h() * d.h());
    out.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        if j == 0 || j + 1 == n {
            row.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        row[0] = 0.0;
        row[n - 1] = 0.0;
        for i in 1..n - 1 {
            let k = j * n + i;
            let lap = (x[k - 1] + x[k + 1] + x[k - n] + x[k + n] - 4.0 * x[k]) * inv_h2;
            row[i] = diag[k] * x[k] - lap;
        }
    });
}

/// Solve `(diag − Δ_h) x = b` with Jacobi preconditioning. Boundary entries of `b` are ignored.
/// Returns the solution (zero on the boundary) and the iteration count.
pub fn solve_shifted(d: &GridDomain, diag: &[f64], b: &[f64], rtol: f64, max_iter: usize) -> Result<(Vec<f64>, usize), CgError> {
    let n = d.n();
    let len = d.len();
    let inv_h2 = 1.0 / (d.h() * d.h());
    let interior = |k: usize| {
        let (i, j) = (k % n, k / n);
        i > 0 && j > 0 && i + 1 < n && j + 1 < n
    };
    let mut r: Vec<f64> = (0..len).into_par_iter().map(|k| if interior(k) { b[k] } else { 0.0 }).collect();
    let pinv: Vec<f64> = (0..len)
        .into_par_iter()
        .map(|k| if interior(k) { 1.0 / (diag[k] + 4.0 * inv_h2) } else { 0.0 })
        .collect();
    let mut x = vec![0.0; len];
    let bnorm = dot(&r, &r).sqrt();
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut z: Vec<f64> = r.par_iter().zip(pinv.par_iter()).map(|(a, p)| a * p).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; len];
    let mut rz = dot(&r, &z);
    let mut rnorm = bnorm;
    for it in 0..max_iter {
        if rnorm <= rtol * bnorm {
            return Ok((x, it));
        }
        apply_shifted(d, diag, &p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(CgError::Breakdown);
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        rnorm = dot(&r, &r).sqrt();
        z.par_iter_mut().zip(r.par_iter()).zip(pinv.par_iter()).for_each(|((zi, ri), pi)| *zi = ri * pi);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(z.par_iter()).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    if rnorm <= rtol * bnorm {
        return Ok((x, max_iter));
    }
    Err(CgError::NotConverged { tol: rtol, iterations: max_iter, reached: rnorm / bnorm })
}
