//! Diagonally preconditioned conjugate gradients and a generalized
//! power iteration built on it.

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    /// Relative residual target `|r| / |b|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-12,
            max_iter: 200_000,
        }
    }
}

impl CgOptions {
    pub fn with_tol(tol: f64) -> Self {
        CgOptions {
            tol,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CgStats {
    pub iterations: usize,
    /// Relative residual after every iteration, starting with the initial guess.
    pub residuals: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve the SPD system `A x = b`. Summation order is fixed, so equal
/// inputs give bitwise equal outputs.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], x0: Option<&[f64]>, opts: CgOptions) -> Result<(Vec<f64>, CgStats)> {
    let n = a.nrows;
    assert_eq!(b.len(), n, "right-hand side length mismatch");
    let bnorm = dot(b, b).sqrt();
    if n == 0 || bnorm == 0.0 {
        return Ok((vec![0.0; n], CgStats::default()));
    }

    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    a.mul_into(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);

    let mut stats = CgStats::default();
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    stats.residuals.push(rel);
    while rel > opts.tol {
        if stats.iterations >= opts.max_iter {
            return Err(Error::NonConvergence {
                iterations: stats.iterations,
                residuals: stats.residuals,
            });
        }
        a.mul_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Singular(format!(
                "non-positive curvature p.Ap = {pap:e} at iteration {}",
                stats.iterations
            )));
        }
        let alpha = rz / pap;
        let mut rr = 0.0;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
            rr += r[i] * r[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        stats.iterations += 1;
        rel = rr.sqrt() / bnorm;
        stats.residuals.push(rel);
    }
    Ok((x, stats))
}

/// Largest eigenvalue of `B v = λ K v` for SPD `K` and symmetric positive
/// semidefinite `B`, by power iteration on `K⁻¹B` with Rayleigh quotients.
/// Inner solves run at `tol/100`; the quotient error is quadratic in the
/// eigenvector error, so this does not limit the attainable accuracy.
pub fn generalized_max_eigenvalue(b: &CsrMatrix, k: &CsrMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    let n = k.nrows;
    if n == 0 {
        return Ok(0.0);
    }
    let mut v = vec![1.0; n];
    let mut lambda = 0.0;
    let cg = CgOptions::with_tol(tol * 1e-2);
    for it in 0..max_iter {
        let bv = b.mul(&v);
        let vbv = dot(&v, &bv);
        let vkv = k.form(&v, &v);
        let next = vbv / vkv;
        if it > 0 && (next - lambda).abs() <= tol * next.abs() {
            return Ok(next);
        }
        lambda = next;
        if vbv == 0.0 {
            return Ok(0.0);
        }
        let guess: Vec<f64> = v.iter().map(|x| x * lambda).collect();
        let (w, _) = solve_spd(k, &bv, Some(&guess), cg)?;
        let norm = k.form(&w, &w).sqrt();
        v = w.into_iter().map(|x| x / norm).collect();
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residuals: vec![lambda],
    })
}
