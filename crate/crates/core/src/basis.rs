//! Multiscale basis functions: `A^ε`-harmonic extensions of the coarse hat
//! functions into each element, and the coarse Galerkin system they span.

use std::sync::Arc;

use serde::Serialize;

use crate::assembly::{add_boundary_load, assemble_load, assemble_stiffness, mesh_pattern, DofMap, SparseSystem};
use crate::coefficient::CoefficientField;
use crate::error::{invalid, Error, Result};
use crate::field::FeField;
use crate::mesh::{build_fine_submesh, BoundaryTag, Layout, Mesh, Point, SideTags, SubMesh};
use crate::quadrature::{DEFAULT_ORDER, EDGE_GAUSS};
use crate::solver::{solve_spd, CgOptions};
use crate::sparse::CsrMatrix;

/// Local solves stop at this residual relative to the size of the
/// Dirichlet lift `|K ψ_j|`.
pub const LOCAL_TOL: f64 = 1e-13;

#[derive(Clone, Debug)]
pub struct ElementBasis {
    pub submesh: SubMesh,
    /// Nodal values of `Φ_0, Φ_1, Φ_2` on the submesh.
    pub phi: [Vec<f64>; 3],
    /// `∫_T A^ε ∇Φ_i · ∇Φ_j`
    pub stiffness: [[f64; 3]; 3],
    /// `∫_T ∇Φ_i · ∇Φ_j`, the seminorm Gram matrix of the local basis.
    pub unit_stiffness: [[f64; 3]; 3],
    /// CG iterations of the three local solves.
    pub iterations: [usize; 3],
}

#[derive(Clone, Debug)]
pub struct MsBasis {
    pub coarse: Arc<Mesh>,
    pub coefficient: CoefficientField,
    pub epsilon: f64,
    pub m: usize,
    pub elements: Vec<ElementBasis>,
    /// The `n*m` structured refinement that every submesh nests into, when
    /// the coarse mesh is structured.
    pub fine: Option<Arc<Mesh>>,
}

/// `ceil(16 h / ε)` rounded up to a power of two, at least 2.
pub fn default_subdivisions(h: f64, epsilon: f64) -> usize {
    ((16.0 * h / epsilon).ceil().max(2.0) as usize).next_power_of_two()
}

fn coarse_spacing(coarse: &Mesh) -> f64 {
    match coarse.layout {
        Layout::Grid { rect, n } => rect.width().max(rect.height()) / n as f64,
        _ => coarse.h_max,
    }
}

/// Local `A^ε`-harmonic extension on a submesh.
pub struct LocalProblem {
    pub stiffness: CsrMatrix,
    interior: Vec<Option<usize>>,
    reduced: CsrMatrix,
}

impl LocalProblem {
    pub fn new(submesh: &SubMesh, coef: &CoefficientField, epsilon: f64) -> Result<Self> {
        let stiffness = assemble_stiffness(&submesh.mesh, coef, Some(epsilon), DEFAULT_ORDER)?;
        let interior = DofMap::from_constrained(&submesh.on_boundary());
        let reduced = stiffness.restrict(&interior.free, interior.n_free);
        Ok(LocalProblem {
            stiffness,
            interior: interior.free,
            reduced,
        })
    }

    /// Extension of the boundary values of `data` (interior entries are
    /// ignored) and the CG iteration count.
    pub fn extend(&self, data: &[f64]) -> Result<(Vec<f64>, usize)> {
        let mut lift = data.to_vec();
        for (v, slot) in self.interior.iter().enumerate() {
            if slot.is_some() {
                lift[v] = 0.0;
            }
        }
        // Start from the given interior values.
        let x0: Vec<f64> = self.interior.iter().enumerate().filter(|(_, s)| s.is_some()).map(|(v, _)| data[v]).collect();
        let klift = self.stiffness.mul(&lift);
        let scale = klift.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut rhs = vec![0.0; self.reduced.nrows];
        for (v, slot) in self.interior.iter().enumerate() {
            if let Some(i) = slot {
                rhs[*i] = -klift[v];
            }
        }
        let mut values = data.to_vec();
        if self.reduced.nrows == 0 {
            return Ok((values, 0));
        }
        // Stop at a residual relative to |K lift| rather than |rhs|, which
        // vanishes when the data is already harmonic.
        let mut res = self.reduced.mul(&x0);
        for (r, b) in res.iter_mut().zip(&rhs) {
            *r = b - *r;
        }
        let rnorm = res.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bnorm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut iterations = 0;
        if rnorm > LOCAL_TOL * scale && bnorm > 0.0 {
            let tol = (LOCAL_TOL * scale / bnorm).min(1e-2);
            let (w, stats) = solve_spd(&self.reduced, &rhs, Some(&x0), CgOptions::with_tol(tol))?;
            iterations = stats.iterations;
            for (v, slot) in self.interior.iter().enumerate() {
                if let Some(i) = slot {
                    values[v] = w[*i];
                }
            }
        }
        Ok((values, iterations))
    }
}

/// Solve the three local problems `-div(A^ε ∇Φ_j) = 0`, `Φ_j = ψ_j` on
/// `∂T` for element `e`.
pub fn build_element_basis(coarse: &Mesh, e: usize, coef: &CoefficientField, epsilon: f64, m: usize) -> Result<ElementBasis> {
    let submesh = build_fine_submesh(coarse, e, m)?;
    let local = LocalProblem::new(&submesh, coef, epsilon)?;
    let mut phi: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut iterations = [0; 3];
    for j in 0..3 {
        let psi: Vec<f64> = submesh.bary.iter().map(|b| b[j]).collect();
        let (values, its) = local.extend(&psi).map_err(|err| Error::LocalSolve {
            element: e,
            source: Box::new(err),
        })?;
        phi[j] = values;
        iterations[j] = its;
    }

    let stiffness = gram(&local.stiffness, &phi);
    let unit = assemble_stiffness(&submesh.mesh, &CoefficientField::Identity, None, 1)?;
    let unit_stiffness = gram(&unit, &phi);
    Ok(ElementBasis {
        submesh,
        phi,
        stiffness,
        unit_stiffness,
        iterations,
    })
}

/// Symmetrized `Φ_iᵀ K Φ_j`.
fn gram(k: &CsrMatrix, phi: &[Vec<f64>; 3]) -> [[f64; 3]; 3] {
    let kphi: Vec<Vec<f64>> = phi.iter().map(|p| k.mul(p)).collect();
    let mut g = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            g[i][j] = phi[i].iter().zip(&kphi[j]).map(|(a, b)| a * b).sum();
        }
    }
    for i in 0..3 {
        for j in (i + 1)..3 {
            let s = 0.5 * (g[i][j] + g[j][i]);
            g[i][j] = s;
            g[j][i] = s;
        }
    }
    g
}

/// Multiscale basis on every element of `coarse` with `m` fine
/// subdivisions per element edge (`None` picks [`default_subdivisions`]).
pub fn build_ms_basis(coarse: Arc<Mesh>, coef: &CoefficientField, epsilon: f64, m: Option<usize>) -> Result<MsBasis> {
    if !(epsilon > 0.0) {
        return invalid(format!("epsilon must be positive, got {epsilon}"));
    }
    let h = coarse_spacing(&coarse);
    let m = m.unwrap_or_else(|| default_subdivisions(h, epsilon));
    if h / m as f64 > epsilon / 16.0 {
        log::warn!("under-resolved basis: local fine size {:.3e} exceeds epsilon/16 = {:.3e}", h / m as f64, epsilon / 16.0);
    }
    let elements = (0..coarse.triangle_count())
        .map(|e| build_element_basis(&coarse, e, coef, epsilon, m))
        .collect::<Result<Vec<_>>>()?;
    let fine = match coarse.layout {
        Layout::Grid { rect, n } => {
            let tags = coarse_side_tags(&coarse, n);
            Some(Arc::new(Mesh::structured(rect, n * m, tags)?))
        }
        _ => None,
    };
    Ok(MsBasis {
        coarse,
        coefficient: coef.clone(),
        epsilon,
        m,
        elements,
        fine,
    })
}

/// Side tags of a structured mesh, read from its boundary edge list.
pub fn coarse_side_tags(mesh: &Mesh, n: usize) -> SideTags {
    let e = &mesh.boundary_edges;
    SideTags {
        bottom: e[0].tag,
        right: e[n].tag,
        top: e[2 * n].tag,
        left: e[3 * n].tag,
    }
}

/// Data entering the right-hand side and boundary operator of a system.
pub struct SystemTerms<'a> {
    pub source: &'a dyn Fn(Point) -> f64,
    /// `∫_{tag} g v`
    pub flux: Vec<(BoundaryTag, &'a dyn Fn(Point) -> f64)>,
    /// `∫_{tag} α u v`
    pub mass: Vec<(BoundaryTag, &'a dyn Fn(Point) -> f64)>,
}

impl<'a> SystemTerms<'a> {
    pub fn source_only(source: &'a dyn Fn(Point) -> f64) -> Self {
        SystemTerms {
            source,
            flux: Vec::new(),
            mass: Vec::new(),
        }
    }
}

/// Add boundary flux loads and boundary masses to a P1 system on `mesh`.
pub(crate) fn add_boundary_terms(mesh: &Mesh, terms: &SystemTerms, system: &mut SparseSystem) {
    for (tag, g) in &terms.flux {
        add_boundary_load(mesh, |t| t == *tag, *g, &mut system.rhs);
    }
    for (tag, alpha) in terms.mass.iter().filter(|(t, _)| mesh.has_tag(*t)) {
        let mass = crate::assembly::assemble_boundary_mass(mesh, *tag, *alpha);
        system.matrix = system.matrix.add_scaled(&mass, 1.0);
        system.has_boundary_mass = true;
    }
}

/// Coarse Galerkin system on the span of the `Φ_j`. Boundary integrals
/// use the linear traces; loads are integrated on the submeshes.
pub fn assemble_coarse_system(basis: &MsBasis, terms: &SystemTerms) -> SparseSystem {
    let coarse = &basis.coarse;
    let k = basis.coarse_matrix(|el| &el.stiffness);
    let mut rhs = vec![0.0; coarse.vertex_count()];
    for (e, el) in basis.elements.iter().enumerate() {
        let tri = coarse.triangles[e];
        let load = assemble_load(&el.submesh.mesh, terms.source, DEFAULT_ORDER);
        for j in 0..3 {
            rhs[tri[j]] += el.phi[j].iter().zip(&load).map(|(p, l)| p * l).sum::<f64>();
        }
    }
    let mut system = SparseSystem::new(k, rhs);
    add_boundary_terms(coarse, terms, &mut system);
    system
}

impl MsBasis {
    /// Coarse matrix assembled from the per-element 3x3 blocks chosen by `pick`.
    pub fn coarse_matrix(&self, pick: impl Fn(&ElementBasis) -> &[[f64; 3]; 3]) -> CsrMatrix {
        let mut k = mesh_pattern(&self.coarse);
        for (e, el) in self.elements.iter().enumerate() {
            let tri = self.coarse.triangles[e];
            let block = pick(el);
            for a in 0..3 {
                for b in 0..3 {
                    k.add(tri[a], tri[b], block[a][b]);
                }
            }
        }
        k
    }

    /// `Σ_j c_j Φ_j` on element `e`'s submesh.
    pub fn element_values(&self, e: usize, coarse_values: &[f64]) -> Vec<f64> {
        let tri = self.coarse.triangles[e];
        let el = &self.elements[e];
        let c = [coarse_values[tri[0]], coarse_values[tri[1]], coarse_values[tri[2]]];
        (0..el.submesh.mesh.vertex_count())
            .map(|v| c[0] * el.phi[0][v] + c[1] * el.phi[1][v] + c[2] * el.phi[2][v])
            .collect()
    }

    /// Largest `|Σ_j Φ_j - 1|` over all fine vertices.
    pub fn partition_of_unity_defect(&self) -> f64 {
        self.elements
            .iter()
            .flat_map(|el| (0..el.phi[0].len()).map(move |v| (el.phi[0][v] + el.phi[1][v] + el.phi[2][v] - 1.0).abs()))
            .fold(0.0, f64::max)
    }

    /// Largest `|Σ_j K_T[i][j]|` relative to the largest stiffness entry.
    pub fn row_sum_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for el in &self.elements {
            let scale = el.stiffness.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            for row in &el.stiffness {
                worst = worst.max(row.iter().sum::<f64>().abs() / scale);
            }
        }
        worst
    }
}

/// `Σ_j c_j Φ_j` as a field on the global fine grid.
pub fn downscale(basis: &MsBasis, coarse_values: &[f64]) -> Result<FeField> {
    let fine = basis
        .fine
        .clone()
        .ok_or_else(|| Error::InvalidInput("downscaling needs a structured coarse mesh".into()))?;
    if coarse_values.len() != basis.coarse.vertex_count() {
        return invalid(format!(
            "{} coefficients for {} coarse vertices",
            coarse_values.len(),
            basis.coarse.vertex_count()
        ));
    }
    let mut values = vec![0.0; fine.vertex_count()];
    for (e, el) in basis.elements.iter().enumerate() {
        let local = basis.element_values(e, coarse_values);
        let global = el.submesh.global_index.as_ref().expect("structured submesh has global indices");
        for (v, &g) in global.iter().enumerate() {
            values[g] = local[v];
        }
    }
    FeField::new(fine, values)
}

/// Nonlinear boundary load `∫_{tag} β(u) v` for a nodal `u`, by 2-point
/// Gauss on each edge with `u` interpolated linearly.
pub fn boundary_law_load(mesh: &Mesh, tag: BoundaryTag, u: &[f64], beta: &dyn Fn(f64) -> f64) -> Vec<f64> {
    let mut load = vec![0.0; mesh.vertex_count()];
    for e in mesh.edges_with(tag) {
        let [i, j] = e.vertices;
        let (a, b) = (mesh.vertices[i], mesh.vertices[j]);
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        for (t, w) in EDGE_GAUSS {
            let s = w * len * beta((1.0 - t) * u[i] + t * u[j]);
            load[i] += s * (1.0 - t);
            load[j] += s * t;
        }
    }
    load
}

#[derive(Serialize)]
struct DumpElement<'a> {
    element: usize,
    phi: &'a [Vec<f64>; 3],
}

#[derive(Serialize)]
struct Dump<'a> {
    format: &'static str,
    epsilon: f64,
    m: usize,
    coefficient: String,
    elements: Vec<DumpElement<'a>>,
}

/// Diagnostic JSON with the fine nodal arrays of every `Φ_j`.
pub fn dump_basis(basis: &MsBasis) -> Result<String> {
    let dump = Dump {
        format: "msfem-basis v1",
        epsilon: basis.epsilon,
        m: basis.m,
        coefficient: basis.coefficient.to_string(),
        elements: basis
            .elements
            .iter()
            .enumerate()
            .map(|(element, el)| DumpElement { element, phi: &el.phi })
            .collect(),
    };
    Ok(serde_json::to_string(&dump)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_boundary_mass, element_stiffness};
    use crate::coefficient::Sym2;
    use crate::mesh::Rect;

    fn coarse(n: usize) -> Arc<Mesh> {
        Arc::new(Mesh::structured(Rect::UNIT, n, SideTags::uniform(BoundaryTag::Dirichlet)).unwrap())
    }

    #[test]
    fn identity_basis_is_linear() {
        let b = build_ms_basis(coarse(2), &CoefficientField::Identity, 0.1, Some(8)).unwrap();
        for (e, el) in b.elements.iter().enumerate() {
            for j in 0..3 {
                for (v, bary) in el.submesh.bary.iter().enumerate() {
                    assert!((el.phi[j][v] - bary[j]).abs() < 1e-12);
                }
            }
            let p1 = element_stiffness(b.coarse.corners(e), Sym2::IDENTITY);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((el.stiffness[i][j] - p1[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn oscillatory_basis_invariants() {
        let coef = CoefficientField::layered(2.0, 1.8).unwrap();
        let b = build_ms_basis(coarse(2), &coef, 1.0 / 8.0, Some(16)).unwrap();
        assert!(b.partition_of_unity_defect() < 1e-10);
        assert!(b.row_sum_defect() < 1e-10);
        let ones = downscale(&b, &[1.0; 9]).unwrap();
        assert!(ones.values.iter().all(|v| (v - 1.0).abs() < 1e-10));
        let f = |_: Point| 1.0;
        let sys = assemble_coarse_system(&b, &SystemTerms::source_only(&f));
        assert!((sys.rhs.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(sys.matrix.asymmetry() < 1e-14);
    }

    #[test]
    fn robin_term_matches_p1_boundary_mass() {
        let c = coarse(3);
        let b = build_ms_basis(c.clone(), &CoefficientField::separable(2.0, 1.0).unwrap(), 0.1, Some(4)).unwrap();
        let f = |_: Point| 0.0;
        let alpha = |p: Point| 1.0 + p[0];
        let sys = assemble_coarse_system(
            &b,
            &SystemTerms {
                source: &f,
                flux: Vec::new(),
                mass: vec![(BoundaryTag::Dirichlet, &alpha)],
            },
        );
        let k_only = assemble_coarse_system(&b, &SystemTerms::source_only(&f));
        let mass = assemble_boundary_mass(&c, BoundaryTag::Dirichlet, &alpha);
        for i in 0..sys.matrix.nnz() {
            assert_eq!(sys.matrix.values[i], k_only.matrix.values[i] + mass.values[i]);
        }
        assert!(sys.has_boundary_mass);
    }

    #[test]
    fn downscale_is_conforming_and_reproduces_linears_for_identity() {
        let c = coarse(2);
        let b = build_ms_basis(c.clone(), &CoefficientField::Identity, 0.25, Some(4)).unwrap();
        let lin: Vec<f64> = c.vertices.iter().map(|p| 2.0 * p[0] - p[1]).collect();
        let u = downscale(&b, &lin).unwrap();
        for (p, v) in u.mesh.vertices.iter().zip(&u.values) {
            assert!((v - (2.0 * p[0] - p[1])).abs() < 1e-12);
        }
        // Shared fine vertices see the same value from both sides.
        let osc = build_ms_basis(c.clone(), &CoefficientField::layered(2.0, 1.5).unwrap(), 0.25, Some(8)).unwrap();
        let vals: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
        let fine = osc.fine.clone().unwrap();
        let mut seen: Vec<Option<f64>> = vec![None; fine.vertex_count()];
        for (e, el) in osc.elements.iter().enumerate() {
            let local = osc.element_values(e, &vals);
            for (v, &g) in el.submesh.global_index.as_ref().unwrap().iter().enumerate() {
                if let Some(prev) = seen[g] {
                    assert!((prev - local[v]).abs() < 1e-12);
                }
                seen[g] = Some(local[v]);
            }
        }
    }

    #[test]
    fn default_subdivisions_rounds_up() {
        assert_eq!(default_subdivisions(0.25, 1.0 / 64.0), 256);
        assert_eq!(default_subdivisions(0.25, 0.1), 64);
        assert_eq!(default_subdivisions(0.01, 1.0), 2);
    }
}
