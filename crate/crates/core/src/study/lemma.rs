//! Single-triangle experiment: the `A^ε`-harmonic extension of a linear
//! function against its first-order expansion.

use std::sync::Arc;

use serde::Serialize;

use super::rates::{fit_rate, FitVariable, RateFit};
use crate::basis::LocalProblem;
use crate::cell::solve_cell_problems;
use crate::coefficient::CoefficientField;
use crate::error::{Error, Result};
use crate::expansion::{error_norms, first_order_expansion, NormContext};
use crate::field::{FeField, SmoothFunction};
use crate::mesh::{build_fine_submesh, BoundaryEdge, BoundaryTag, Mesh, TriangleShape};

/// Relative errors below this count as zero.
pub const ZERO_ERROR: f64 = 1e-10;

/// The reference triangle `(0,0), (1,0), (0,1)`.
pub fn reference_triangle() -> Result<Mesh> {
    let edges = [[0, 1], [1, 2], [2, 0]]
        .into_iter()
        .map(|vertices| BoundaryEdge {
            vertices,
            tag: BoundaryTag::Dirichlet,
        })
        .collect();
    Mesh::from_parts(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]], edges)
}

#[derive(Clone, Debug, Serialize)]
pub struct LemmaPoint {
    pub epsilon: f64,
    /// Fine subdivisions per triangle edge.
    pub m: usize,
    /// `|w_ε - w_{ε,1}|_{1,T} / |w₀|_{1,T}`
    pub relative_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LemmaReport {
    pub coefficient: String,
    /// Incircle radius of the triangle.
    pub inradius: f64,
    pub w0_gradient: [f64; 2],
    pub per_period: usize,
    pub points: Vec<LemmaPoint>,
    pub fit: Option<RateFit>,
    pub note: Option<String>,
}

/// For each `ε`, solve `-div(A^ε∇w_ε) = 0` with `w_ε = w₀` on the boundary
/// of the reference triangle on a submesh with `per_period` subdivisions
/// per period, and compare with `w₀ + ε N_l(x/ε) ∂_l w₀`.
pub fn lemma_triangle_experiment(
    coef: &CoefficientField,
    epsilons: &[f64],
    w0: [f64; 3],
    per_period: usize,
) -> Result<LemmaReport> {
    let tri = reference_triangle()?;
    let inradius = TriangleShape::of(tri.corners(0)).inradius;
    if epsilons.is_empty() {
        return Err(Error::InvalidInput("lemma experiment needs at least one epsilon".into()));
    }
    for &e in epsilons {
        if !(e > 0.0 && e < inradius / 4.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon {e} violates epsilon < r/4 = {:.5} for the reference triangle",
                inradius / 4.0
            )));
        }
    }
    let cell = solve_cell_problems(coef, per_period)?;
    let w0_fn = SmoothFunction::linear(w0[0], w0[1], w0[2]);
    let w0_norm = (w0[1] * w0[1] + w0[2] * w0[2]).sqrt() * (0.5f64).sqrt();

    let mut points = Vec::new();
    for &e in epsilons {
        let periods = 1.0 / e;
        let m = ((periods * per_period as f64).round() as usize).max(2);
        let sub = build_fine_submesh(&tri, 0, m)?;
        let data: Vec<f64> = sub.mesh.vertices.iter().map(|p| w0[0] + w0[1] * p[0] + w0[2] * p[1]).collect();
        let local = LocalProblem::new(&sub, coef, e)?;
        let (w, _) = local.extend(&data)?;
        let mesh = Arc::new(sub.mesh);
        let w_eps = FeField::new(mesh.clone(), w)?;
        let w1 = first_order_expansion(&w0_fn, &cell, e, mesh)?;
        let h1 = error_norms(&w_eps, &w1, &NormContext::default())?.h1_semi;
        let relative_error = if w0_norm > 0.0 { h1 / w0_norm } else { h1 };
        log::info!("lemma: epsilon={e}, m={m}, relative H1 error {relative_error:.4e}");
        points.push(LemmaPoint {
            epsilon: e,
            m,
            relative_error,
        });
    }

    let (fit, note) = if points.iter().all(|p| p.relative_error < ZERO_ERROR) {
        (None, Some("degenerate: zero error".to_string()))
    } else if points.len() < 3 {
        (None, Some("fit skipped: fewer than 3 points".to_string()))
    } else {
        let data: Vec<(f64, f64)> = points.iter().map(|p| (p.epsilon, p.relative_error)).collect();
        (Some(fit_rate(&data, FitVariable::Epsilon)?), None)
    };
    Ok(LemmaReport {
        coefficient: coef.to_string(),
        inradius,
        w0_gradient: [w0[1], w0[2]],
        per_period,
        points,
        fit,
        note,
    })
}
