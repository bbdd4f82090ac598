//! Periodic cell problems on `Q = (-1/2, 1/2)^2`, correctors `N_l` and the
//! homogenized tensor `Â`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assembly::{element_stiffness, mean_coefficient, p1_gradients};
use crate::coefficient::{CoefficientField, Sym2};
use crate::error::{invalid, Error, Result};
use crate::mesh::{Mesh, Point, Rect, SideTags, BoundaryTag};
use crate::quadrature::DEFAULT_ORDER;
use crate::solver::{solve_spd, CgOptions};
use crate::sparse::CsrMatrix;

pub const MIN_CELL_N: usize = 8;
/// Asymmetry of `Â` above this is reported.
pub const ASYMMETRY_WARN: f64 = 1e-8;
/// Asymmetry of `Â` above this is an error.
pub const ASYMMETRY_FAIL: f64 = 1e-6;

/// Solved cell problems. Corrector arrays hold nodal values on the
/// periodic `n x n` lattice, index `j*n + i` at `y = (-1/2 + i/n, -1/2 + j/n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSolution {
    pub coefficient: String,
    pub n_cell: usize,
    pub a_hat: Sym2,
    /// `|Â12 - Â21|` before symmetrization, relative to `max |Â_ij|`.
    pub asymmetry: f64,
    pub correctors: [Vec<f64>; 2],
    /// Largest `|∇N_l|` over elements and both correctors.
    pub corrector_grad_bound: f64,
}

fn cell_rect() -> Rect {
    Rect::new(-0.5, -0.5, 0.5, 0.5)
}

fn periodic(n: usize, v: usize) -> usize {
    let (i, j) = (v % (n + 1), v / (n + 1));
    (j % n) * n + (i % n)
}

/// Solve `-div(A(∇N_l + e_l)) = 0` on the periodic cell with `n_cell`
/// subdivisions per side and compute `Â`.
pub fn solve_cell_problems(coef: &CoefficientField, n_cell: usize) -> Result<CellSolution> {
    if n_cell < MIN_CELL_N {
        return invalid(format!("cell resolution must be at least {MIN_CELL_N}, got {n_cell}"));
    }
    let n = n_cell;
    let mesh = Mesh::structured(cell_rect(), n, SideTags::uniform(BoundaryTag::Neumann))?;
    let map: Vec<[usize; 3]> = mesh
        .triangles
        .iter()
        .map(|t| [periodic(n, t[0]), periodic(n, t[1]), periodic(n, t[2])])
        .collect();
    let means: Vec<Sym2> = (0..mesh.triangle_count())
        .map(|t| mean_coefficient(coef, mesh.corners(t), None, DEFAULT_ORDER))
        .collect();

    let ndof = n * n;
    let mut k = CsrMatrix::from_groups(ndof, map.iter().map(|t| &t[..]));
    let mut rhs = [vec![0.0; ndof], vec![0.0; ndof]];
    for (t, tri) in map.iter().enumerate() {
        let c = mesh.corners(t);
        let ke = element_stiffness(c, means[t]);
        let (g, area) = p1_gradients(c);
        for a in 0..3 {
            for b in 0..3 {
                k.add(tri[a], tri[b], ke[a][b]);
            }
            for (l, r) in rhs.iter_mut().enumerate() {
                let ae = [means[t].get(0, l), means[t].get(1, l)];
                r[tri[a]] -= area * (ae[0] * g[a][0] + ae[1] * g[a][1]);
            }
        }
    }

    // Pin dof 0; the quotient system is SPD.
    let keep: Vec<Option<usize>> = (0..ndof).map(|i| (i > 0).then(|| i - 1)).collect();
    let reduced = k.restrict(&keep, ndof - 1);
    let mut correctors: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for l in 0..2 {
        let b = &rhs[l][1..];
        let (x, _) = solve_spd(&reduced, b, None, CgOptions::default())?;
        let mut full = Vec::with_capacity(ndof);
        full.push(0.0);
        full.extend_from_slice(&x);
        // Every periodic vertex carries the same P1 mass, so the nodal mean
        // is the integral mean.
        let mean = full.iter().sum::<f64>() / ndof as f64;
        full.iter_mut().for_each(|v| *v -= mean);
        correctors[l] = full;
    }

    let mut ahat = [[0.0; 2]; 2];
    let mut grad_bound = 0.0f64;
    for (t, tri) in map.iter().enumerate() {
        let (g, area) = p1_gradients(mesh.corners(t));
        for l in 0..2 {
            let mut grad = [0.0; 2];
            for a in 0..3 {
                let v = correctors[l][tri[a]];
                grad[0] += v * g[a][0];
                grad[1] += v * g[a][1];
            }
            grad_bound = grad_bound.max(grad[0].hypot(grad[1]));
            grad[l] += 1.0;
            let flux = means[t].apply(grad);
            ahat[0][l] += area * flux[0];
            ahat[1][l] += area * flux[1];
        }
    }
    let scale = ahat.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let asymmetry = (ahat[0][1] - ahat[1][0]).abs() / scale;
    if asymmetry > ASYMMETRY_FAIL {
        return Err(Error::Asymmetric(asymmetry));
    }
    if asymmetry > ASYMMETRY_WARN {
        log::warn!("homogenized tensor asymmetry {asymmetry:e} at n_cell={n}");
    }
    let off = 0.5 * (ahat[0][1] + ahat[1][0]);
    Ok(CellSolution {
        coefficient: coef.to_string(),
        n_cell: n,
        a_hat: Sym2([ahat[0][0], off, ahat[1][1]]),
        asymmetry,
        correctors,
        corrector_grad_bound: grad_bound,
    })
}

/// The symmetrized `Â` of a solved cell.
pub fn homogenized_tensor(cell: &CellSolution) -> Sym2 {
    cell.a_hat
}

impl CellSolution {
    /// `(N_l(y), ∇_y N_l(y))` at a cell point, `l ∈ {0, 1}`. Values are P1
    /// interpolants; gradients are the constant of the containing element.
    pub fn eval_cell(&self, l: usize, y: Point) -> (f64, [f64; 2]) {
        let n = self.n_cell;
        let nf = n as f64;
        // Lattice coordinates relative to the corner of Q, wrapped to [0, n).
        let wrap = |v: f64| {
            let u = (v + 0.5) * nf;
            let u = u - (u / nf).floor() * nf;
            if u >= nf { 0.0 } else { u }
        };
        let (u, v) = (wrap(y[0]), wrap(y[1]));
        let i = (u.floor() as usize).min(n - 1);
        let j = (v.floor() as usize).min(n - 1);
        let (s, t) = (u - i as f64, v - j as f64);
        let id = |a: usize, b: usize| (b % n) * n + (a % n);
        let nv = &self.correctors[l];
        let (v00, v10, v01, v11) = (nv[id(i, j)], nv[id(i + 1, j)], nv[id(i, j + 1)], nv[id(i + 1, j + 1)]);
        if s + t <= 1.0 {
            let val = (1.0 - s - t) * v00 + s * v10 + t * v01;
            (val, [(v10 - v00) * nf, (v01 - v00) * nf])
        } else {
            let val = (1.0 - t) * v10 + (s + t - 1.0) * v11 + (1.0 - s) * v01;
            (val, [(v11 - v01) * nf, (v11 - v10) * nf])
        }
    }

    /// `N_l(x/ε)` and `(∇_y N_l)(x/ε)`; the chain-rule factor `1/ε` is left
    /// to the caller.
    pub fn eval_corrector(&self, l: usize, x: Point, epsilon: f64) -> (f64, [f64; 2]) {
        self.eval_cell(l, [x[0] / epsilon, x[1] / epsilon])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cell: CellSolution = serde_json::from_str(text)?;
        if cell.n_cell < MIN_CELL_N || cell.correctors.iter().any(|c| c.len() != cell.n_cell * cell.n_cell) {
            return invalid("cell solution arrays do not match n_cell");
        }
        Ok(cell)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_correctors() {
        let cell = solve_cell_problems(&CoefficientField::Identity, 8).unwrap();
        assert!(cell.correctors.iter().flatten().all(|v| v.abs() < 1e-14));
        for (a, b) in cell.a_hat.0.iter().zip(Sym2::IDENTITY.0) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(solve_cell_problems(&CoefficientField::Identity, 4).is_err());
    }

    #[test]
    fn layered_matches_one_dimensional_means() {
        let coef = CoefficientField::layered(2.0, 1.8).unwrap();
        let cell = solve_cell_problems(&coef, 64).unwrap();
        assert!((cell.a_hat.a11() - 0.76f64.sqrt()).abs() < 1e-2);
        assert!((cell.a_hat.a22() - 2.0).abs() < 1e-10);
        assert!(cell.a_hat.a12().abs() < 1e-10);
        // N_2 vanishes for a coefficient independent of y_2.
        assert!(cell.correctors[1].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn evaluation_is_periodic_and_interpolates_nodes() {
        let cell = solve_cell_problems(&CoefficientField::separable(2.0, 1.0).unwrap(), 16).unwrap();
        let y = [0.13, -0.41];
        let (a, ga) = cell.eval_cell(0, y);
        let (b, gb) = cell.eval_cell(0, [y[0] + 1.0, y[1] - 3.0]);
        assert!((a - b).abs() < 1e-12);
        assert!((ga[0] - gb[0]).abs() < 1e-9 && (ga[1] - gb[1]).abs() < 1e-9);
        let node = cell.eval_cell(1, [-0.5 + 3.0 / 16.0, -0.5 + 5.0 / 16.0]).0;
        assert!((node - cell.correctors[1][5 * 16 + 3]).abs() < 1e-14);
        let eps = 0.125;
        let (c, _) = cell.eval_corrector(0, [y[0] * eps, y[1] * eps], eps);
        assert!((c - a).abs() < 1e-12);
    }

    #[test]
    fn json_roundtrip_is_bitwise() {
        let cell = solve_cell_problems(&CoefficientField::separable(2.0, 1.5).unwrap(), 8).unwrap();
        let back = CellSolution::from_json(&cell.to_json().unwrap()).unwrap();
        assert_eq!(back, cell);
        for y in [[0.1, 0.2], [-0.37, 0.49], [0.0, 0.0]] {
            for l in 0..2 {
                let (a, ga) = cell.eval_cell(l, y);
                let (b, gb) = back.eval_cell(l, y);
                assert_eq!(a.to_bits(), b.to_bits());
                assert_eq!(ga[0].to_bits(), gb[0].to_bits());
                assert_eq!(ga[1].to_bits(), gb[1].to_bits());
            }
        }
    }
}
