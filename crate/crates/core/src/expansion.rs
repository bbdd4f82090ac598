//! Interpolation, the first-order expansion `u₀ + εN_l(x/ε)∂_l u₀`, the
//! oscillatory interpolant, and error norms on a common refinement.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::assembly::{mean_coefficient, p1_gradients};
use crate::basis::{downscale, MsBasis};
use crate::cell::CellSolution;
use crate::coefficient::CoefficientField;
use crate::error::{invalid, Error, Result};
use crate::field::{FeField, Sampler};
use crate::mesh::{BoundaryTag, Layout, Mesh, Point};
use crate::quadrature::{DEFAULT_ORDER, EDGE_GAUSS};

/// Nodal interpolant of `u0` on `mesh`.
pub fn interpolate(u0: &dyn Sampler, mesh: Arc<Mesh>) -> FeField {
    FeField::from_fn(mesh, |p| u0.value(p))
}

/// Nodal values of `u₀(x) + ε N_l(x/ε) ∂_l u₀(x)` on `target`.
pub fn first_order_expansion(u0: &dyn Sampler, cell: &CellSolution, epsilon: f64, target: Arc<Mesh>) -> Result<FeField> {
    if !(epsilon > 0.0) {
        return invalid(format!("epsilon must be positive, got {epsilon}"));
    }
    Ok(FeField::from_fn(target, |p| {
        let g = u0.gradient(p);
        let n1 = cell.eval_corrector(0, p, epsilon).0;
        let n2 = cell.eval_corrector(1, p, epsilon).0;
        u0.value(p) + epsilon * (n1 * g[0] + n2 * g[1])
    }))
}

/// `Σ_j u0I(x_j) Φ_j` on the fine grid of `basis`.
pub fn ms_interpolant(basis: &MsBasis, u0i: &FeField) -> Result<FeField> {
    if u0i.mesh.layout != basis.coarse.layout || u0i.values.len() != basis.coarse.vertex_count() {
        return invalid("interpolant does not live on the basis coarse mesh");
    }
    downscale(basis, &u0i.values)
}

/// Optional data for the energy norm and report labels.
#[derive(Clone, Copy, Default)]
pub struct NormContext<'a> {
    /// Coefficient of the energy norm; `None` skips it.
    pub coefficient: Option<&'a CoefficientField>,
    pub epsilon: Option<f64>,
    /// Robin weight on the whole boundary, added to the energy norm.
    pub robin: Option<&'a dyn Fn(Point) -> f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ErrorReport {
    pub h1_semi: f64,
    pub l2: f64,
    /// `(∫A^ε∇e·∇e + ∫α e²)^{1/2}` when a coefficient was supplied.
    pub energy: Option<f64>,
    pub boundary_l2: BTreeMap<BoundaryTag, f64>,
    pub epsilon: Option<f64>,
    pub h: Option<f64>,
    pub pair: Option<String>,
}

impl ErrorReport {
    pub fn labeled(mut self, epsilon: f64, h: f64, pair: impl Into<String>) -> Self {
        self.epsilon = Some(epsilon);
        self.h = Some(h);
        self.pair = Some(pair.into());
        self
    }

    /// Norm by name: `h1`, `l2`, `energy` or `boundary:<D|N|C>`.
    pub fn norm(&self, name: &str) -> Option<f64> {
        match name {
            "h1" => Some(self.h1_semi),
            "l2" => Some(self.l2),
            "energy" => self.energy,
            _ => {
                let code = name.strip_prefix("boundary:")?;
                self.boundary_l2.get(&BoundaryTag::from_code(code).ok()?).copied()
            }
        }
    }
}

fn same_mesh(a: &Arc<Mesh>, b: &Arc<Mesh>) -> bool {
    Arc::ptr_eq(a, b)
        || (a.layout == b.layout
            && a.layout != Layout::Unstructured
            && a.vertex_count() == b.vertex_count()
            && a.triangle_count() == b.triangle_count())
}

/// Exact transfer of a P1 field to a nested structured refinement.
pub fn prolongate(field: &FeField, fine: &Arc<Mesh>) -> Result<FeField> {
    if same_mesh(&field.mesh, fine) {
        return Ok(field.clone());
    }
    let k = fine.refinement_of(&field.mesh)?;
    let (_, nc) = field.mesh.grid().expect("refinement_of checked the layout");
    let (_, nf) = fine.grid().expect("refinement_of checked the layout");
    let vc = |i: usize, j: usize| field.values[j * (nc + 1) + i];
    let mut values = Vec::with_capacity(fine.vertex_count());
    for jf in 0..=nf {
        for if_ in 0..=nf {
            let (i, a) = ((if_ / k).min(nc - 1), if_ - (if_ / k).min(nc - 1) * k);
            let (j, b) = ((jf / k).min(nc - 1), jf - (jf / k).min(nc - 1) * k);
            let (s, t) = (a as f64 / k as f64, b as f64 / k as f64);
            let v = if a + b <= k {
                (1.0 - s - t) * vc(i, j) + s * vc(i + 1, j) + t * vc(i, j + 1)
            } else {
                (1.0 - t) * vc(i + 1, j) + (s + t - 1.0) * vc(i + 1, j + 1) + (1.0 - s) * vc(i, j + 1)
            };
            values.push(v);
        }
    }
    FeField::new(fine.clone(), values)
}

/// Bring two fields onto the finer of their meshes.
pub fn common_refinement(a: &FeField, b: &FeField) -> Result<(FeField, FeField)> {
    if same_mesh(&a.mesh, &b.mesh) {
        return Ok((a.clone(), b.clone()));
    }
    match (a.mesh.grid(), b.mesh.grid()) {
        (Some((_, na)), Some((_, nb))) => {
            if na >= nb {
                Ok((a.clone(), prolongate(b, &a.mesh)?))
            } else {
                Ok((prolongate(a, &b.mesh)?, b.clone()))
            }
        }
        _ => Err(Error::NonNested("fields live on unrelated meshes".into())),
    }
}

/// Norms of `a - b` computed on the common refinement.
pub fn error_norms(a: &FeField, b: &FeField, ctx: &NormContext) -> Result<ErrorReport> {
    let (a, b) = common_refinement(a, b)?;
    let mesh = &a.mesh;
    let e: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    let mut h1 = 0.0;
    let mut l2 = 0.0;
    let mut energy = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let c = mesh.corners(t);
        let (g, area) = p1_gradients(c);
        let ev = [e[tri[0]], e[tri[1]], e[tri[2]]];
        let grad = [
            ev[0] * g[0][0] + ev[1] * g[1][0] + ev[2] * g[2][0],
            ev[0] * g[0][1] + ev[1] * g[1][1] + ev[2] * g[2][1],
        ];
        h1 += area * (grad[0] * grad[0] + grad[1] * grad[1]);
        let s = ev[0] + ev[1] + ev[2];
        l2 += area / 12.0 * (ev[0] * ev[0] + ev[1] * ev[1] + ev[2] * ev[2] + s * s);
        if let Some(coef) = ctx.coefficient {
            energy += area * mean_coefficient(coef, c, ctx.epsilon, DEFAULT_ORDER).form(grad, grad);
        }
    }
    let mut boundary: BTreeMap<BoundaryTag, f64> = BTreeMap::new();
    for edge in &mesh.boundary_edges {
        let [i, j] = edge.vertices;
        let (p, q) = (mesh.vertices[i], mesh.vertices[j]);
        let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
        let mut acc = 0.0;
        let mut robin = 0.0;
        for (t, w) in EDGE_GAUSS {
            let v = (1.0 - t) * e[i] + t * e[j];
            acc += w * len * v * v;
            if let Some(alpha) = ctx.robin {
                let x = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
                robin += w * len * alpha(x) * v * v;
            }
        }
        *boundary.entry(edge.tag).or_insert(0.0) += acc;
        energy += robin;
    }
    Ok(ErrorReport {
        h1_semi: h1.sqrt(),
        l2: l2.sqrt(),
        energy: ctx.coefficient.map(|_| energy.sqrt()),
        boundary_l2: boundary.into_iter().map(|(k, v)| (k, v.sqrt())).collect(),
        ..Default::default()
    })
}
