//! P1 Lagrange assembly: stiffness, boundary mass, loads and homogeneous
//! Dirichlet elimination.

use crate::coefficient::{CoefficientField, Sym2};
use crate::error::{invalid, Error, Result};
use crate::mesh::{BoundaryTag, Mesh, Point};
use crate::quadrature::{map_point, triangle_rule, EDGE_GAUSS};
use crate::sparse::CsrMatrix;

/// Gradients of the three barycentric coordinates and the triangle area.
#[inline]
pub fn p1_gradients(c: [Point; 3]) -> ([[f64; 2]; 3], f64) {
    let det = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
    let inv = 1.0 / det;
    (
        [
            [(c[1][1] - c[2][1]) * inv, (c[2][0] - c[1][0]) * inv],
            [(c[2][1] - c[0][1]) * inv, (c[0][0] - c[2][0]) * inv],
            [(c[0][1] - c[1][1]) * inv, (c[1][0] - c[0][0]) * inv],
        ],
        0.5 * det,
    )
}

/// Quadrature average of `A` (or `A(x/ε)`) over a triangle.
#[inline]
pub fn mean_coefficient(coef: &CoefficientField, c: [Point; 3], epsilon: Option<f64>, order: u8) -> Sym2 {
    if coef.is_constant() {
        return coef.eval([0.0, 0.0]);
    }
    let rule = triangle_rule(order);
    let mut acc = Sym2([0.0; 3]);
    for (l, w) in rule.points.iter().zip(rule.weights) {
        acc = acc + coef.eval_scaled(map_point(c, *l), epsilon) * *w;
    }
    acc
}

/// `∫_T A ∇λ_i · ∇λ_j` for a tensor already averaged over `T`.
#[inline]
pub fn element_stiffness(c: [Point; 3], a: Sym2) -> [[f64; 3]; 3] {
    let (g, area) = p1_gradients(c);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        let ag = a.apply(g[i]);
        for j in i..3 {
            let v = area * (ag[0] * g[j][0] + ag[1] * g[j][1]);
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

pub fn mesh_pattern(mesh: &Mesh) -> CsrMatrix {
    CsrMatrix::from_groups(mesh.vertex_count(), mesh.triangles.iter().map(|t| &t[..]))
}

fn check_epsilon(epsilon: Option<f64>) -> Result<()> {
    match epsilon {
        Some(e) if !(e > 0.0) => invalid(format!("epsilon must be positive, got {e}")),
        _ => Ok(()),
    }
}

/// Global stiffness `∫ A(x/ε) ∇φ_i·∇φ_j` (or `A(x)` when `epsilon` is `None`).
pub fn assemble_stiffness(mesh: &Mesh, coef: &CoefficientField, epsilon: Option<f64>, quad_order: u8) -> Result<CsrMatrix> {
    check_epsilon(epsilon)?;
    if !(1..=4).contains(&quad_order) {
        return invalid(format!("quadrature order must be 1..=4, got {quad_order}"));
    }
    let mut k = mesh_pattern(mesh);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let c = mesh.corners(t);
        let ke = element_stiffness(c, mean_coefficient(coef, c, epsilon, quad_order));
        for a in 0..3 {
            for b in 0..3 {
                k.add(tri[a], tri[b], ke[a][b]);
            }
        }
    }
    Ok(k)
}

fn edge_len(a: Point, b: Point) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

/// `Σ_e ∫_e α φ_i φ_j` over edges with `tag`, on the mesh pattern.
pub fn assemble_boundary_mass(mesh: &Mesh, tag: BoundaryTag, weight: &dyn Fn(Point) -> f64) -> CsrMatrix {
    assemble_boundary_mass_where(mesh, |t| t == tag, weight)
}

/// Boundary mass over every boundary edge.
pub fn assemble_full_boundary_mass(mesh: &Mesh, weight: &dyn Fn(Point) -> f64) -> CsrMatrix {
    assemble_boundary_mass_where(mesh, |_| true, weight)
}

fn assemble_boundary_mass_where(mesh: &Mesh, pick: impl Fn(BoundaryTag) -> bool, weight: &dyn Fn(Point) -> f64) -> CsrMatrix {
    let mut m = mesh_pattern(mesh);
    let mut any = false;
    for e in mesh.boundary_edges.iter().filter(|e| pick(e.tag)) {
        any = true;
        let [i, j] = e.vertices;
        let (a, b) = (mesh.vertices[i], mesh.vertices[j]);
        let len = edge_len(a, b);
        for (t, w) in EDGE_GAUSS {
            let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            let s = w * len * weight(x);
            let phi = [1.0 - t, t];
            let idx = [i, j];
            for p in 0..2 {
                for q in 0..2 {
                    m.add(idx[p], idx[q], s * phi[p] * phi[q]);
                }
            }
        }
    }
    if !any {
        log::warn!("boundary mass requested on an empty edge set");
    }
    m
}

/// `∫ f φ_i` by triangle quadrature.
pub fn assemble_load(mesh: &Mesh, f: &dyn Fn(Point) -> f64, quad_order: u8) -> Vec<f64> {
    let rule = triangle_rule(quad_order);
    let mut load = vec![0.0; mesh.vertex_count()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let c = mesh.corners(t);
        let area = mesh.area(t);
        for (l, w) in rule.points.iter().zip(rule.weights) {
            let fx = f(map_point(c, *l)) * w * area;
            for k in 0..3 {
                load[tri[k]] += fx * l[k];
            }
        }
    }
    load
}

/// `∫_e g φ_i` over edges with `tag` by 2-point Gauss.
pub fn assemble_boundary_load(mesh: &Mesh, tag: BoundaryTag, g: &dyn Fn(Point) -> f64) -> Vec<f64> {
    let mut load = vec![0.0; mesh.vertex_count()];
    add_boundary_load(mesh, |t| t == tag, g, &mut load);
    load
}

pub(crate) fn add_boundary_load(mesh: &Mesh, pick: impl Fn(BoundaryTag) -> bool, g: &dyn Fn(Point) -> f64, load: &mut [f64]) {
    for e in mesh.boundary_edges.iter().filter(|e| pick(e.tag)) {
        let [i, j] = e.vertices;
        let (a, b) = (mesh.vertices[i], mesh.vertices[j]);
        let len = edge_len(a, b);
        for (t, w) in EDGE_GAUSS {
            let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            let s = w * len * g(x);
            load[i] += s * (1.0 - t);
            load[j] += s * t;
        }
    }
}

/// Free/constrained classification of vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    /// Reduced index of every vertex, `None` when constrained.
    pub free: Vec<Option<usize>>,
    pub n_free: usize,
}

impl DofMap {
    pub fn all_free(n: usize) -> Self {
        DofMap {
            free: (0..n).map(Some).collect(),
            n_free: n,
        }
    }

    pub fn from_constrained(constrained: &[bool]) -> Self {
        let mut next = 0;
        let free = constrained
            .iter()
            .map(|&c| {
                if c {
                    None
                } else {
                    next += 1;
                    Some(next - 1)
                }
            })
            .collect();
        DofMap { free, n_free: next }
    }

    /// Reduced vector to vertex vector, zero on constrained vertices.
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        self.free.iter().map(|f| f.map_or(0.0, |k| reduced[k])).collect()
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free];
        for (v, f) in self.free.iter().enumerate() {
            if let Some(k) = f {
                out[*k] = full[v];
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dof_map: DofMap,
    /// A boundary mass term (Robin or linearized contact) is part of `matrix`.
    pub has_boundary_mass: bool,
}

impl SparseSystem {
    pub fn new(matrix: CsrMatrix, rhs: Vec<f64>) -> Self {
        let n = matrix.nrows;
        SparseSystem {
            matrix,
            rhs,
            dof_map: DofMap::all_free(n),
            has_boundary_mass: false,
        }
    }

    /// No unknowns left after elimination; the solution is identically zero.
    pub fn is_trivial(&self) -> bool {
        self.dof_map.n_free == 0
    }
}

/// Eliminate the vertices on `tag` (homogeneous data).
pub fn apply_dirichlet(system: &SparseSystem, mesh: &Mesh, tag: BoundaryTag) -> Result<SparseSystem> {
    if !mesh.has_tag(tag) {
        if system.has_boundary_mass {
            return Ok(system.clone());
        }
        return Err(Error::Singular("pure Neumann unsupported: no Dirichlet edges and no boundary mass".into()));
    }
    let dof_map = DofMap::from_constrained(&mesh.vertices_on(tag));
    let matrix = system.matrix.restrict(&dof_map.free, dof_map.n_free);
    let rhs = dof_map.restrict(&system.rhs);
    Ok(SparseSystem {
        matrix,
        rhs,
        dof_map,
        has_boundary_mass: system.has_boundary_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Rect, SideTags};
    use approx::assert_relative_eq;

    fn unit(n: usize, tag: BoundaryTag) -> Mesh {
        Mesh::structured(Rect::UNIT, n, SideTags::uniform(tag)).unwrap()
    }

    #[test]
    fn reference_element_matrix() {
        let k = element_stiffness([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], Sym2::IDENTITY);
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(k[i][j], expected[i][j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn row_sums_vanish_and_linearity() {
        let m = unit(1, BoundaryTag::Dirichlet);
        let k = assemble_stiffness(&m, &CoefficientField::Identity, None, 2).unwrap();
        assert_eq!(k.nrows, 4);
        for s in k.mul(&[1.0; 4]) {
            assert!(s.abs() < 1e-14);
        }
        let k2 = assemble_stiffness(&m, &CoefficientField::Constant(Sym2::scalar(2.0)), None, 2).unwrap();
        for (a, b) in k.values.iter().zip(&k2.values) {
            assert_relative_eq!(2.0 * a, *b, epsilon = 1e-15);
        }
        let osc = assemble_stiffness(&unit(6, BoundaryTag::Neumann), &CoefficientField::separable(2.0, 1.8).unwrap(), Some(0.1), 2).unwrap();
        assert!(osc.asymmetry() < 1e-12);
        for s in osc.mul(&vec![1.0; osc.nrows]) {
            assert!(s.abs() < 1e-10);
        }
        assert!(assemble_stiffness(&m, &CoefficientField::Identity, Some(0.0), 2).is_err());
    }

    #[test]
    fn edge_mass_and_perimeter() {
        let m = unit(1, BoundaryTag::Neumann);
        let mass = assemble_full_boundary_mass(&m, &|_| 1.0);
        assert_relative_eq!(mass.form(&[1.0; 4], &[1.0; 4]), 4.0, epsilon = 1e-14);
        // Single edge of length 1 from vertex 0 to vertex 1.
        let bottom = Mesh::structured(
            Rect::UNIT,
            1,
            SideTags {
                bottom: BoundaryTag::Contact,
                right: BoundaryTag::Neumann,
                top: BoundaryTag::Neumann,
                left: BoundaryTag::Neumann,
            },
        )
        .unwrap();
        let mc = assemble_boundary_mass(&bottom, BoundaryTag::Contact, &|_| 1.0);
        assert_relative_eq!(mc.get(0, 0), 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(mc.get(0, 1), 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(mc.get(1, 1), 1.0 / 3.0, epsilon = 1e-15);
        let zero = assemble_full_boundary_mass(&m, &|_| 0.0);
        assert!(zero.values.iter().all(|&v| v == 0.0));
        let empty = assemble_boundary_mass(&m, BoundaryTag::Contact, &|_| 1.0);
        assert!(empty.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loads() {
        let m = unit(4, BoundaryTag::Neumann);
        assert_relative_eq!(assemble_load(&m, &|_| 1.0, 2).iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        let m1 = unit(1, BoundaryTag::Neumann);
        assert_relative_eq!(assemble_load(&m1, &|x| x[0], 2).iter().sum::<f64>(), 0.5, epsilon = 1e-15);
        let side = Mesh::structured(
            Rect::UNIT,
            3,
            SideTags {
                bottom: BoundaryTag::Neumann,
                right: BoundaryTag::Dirichlet,
                top: BoundaryTag::Dirichlet,
                left: BoundaryTag::Dirichlet,
            },
        )
        .unwrap();
        let g = assemble_boundary_load(&side, BoundaryTag::Neumann, &|_| 1.0);
        assert_relative_eq!(g.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn dirichlet_counts() {
        let m1 = unit(1, BoundaryTag::Dirichlet);
        let sys = SparseSystem::new(assemble_stiffness(&m1, &CoefficientField::Identity, None, 2).unwrap(), vec![0.0; 4]);
        let red = apply_dirichlet(&sys, &m1, BoundaryTag::Dirichlet).unwrap();
        assert!(red.is_trivial());

        let m2 = unit(2, BoundaryTag::Dirichlet);
        let sys = SparseSystem::new(assemble_stiffness(&m2, &CoefficientField::Identity, None, 2).unwrap(), vec![0.0; 9]);
        let red = apply_dirichlet(&sys, &m2, BoundaryTag::Dirichlet).unwrap();
        assert_eq!(red.dof_map.n_free, 1);
        assert_eq!(red.dof_map.free[4], Some(0));

        let mixed = Mesh::structured(
            Rect::UNIT,
            2,
            SideTags {
                bottom: BoundaryTag::Neumann,
                right: BoundaryTag::Dirichlet,
                top: BoundaryTag::Neumann,
                left: BoundaryTag::Dirichlet,
            },
        )
        .unwrap();
        let sys = SparseSystem::new(assemble_stiffness(&mixed, &CoefficientField::Identity, None, 2).unwrap(), vec![0.0; 9]);
        let red = apply_dirichlet(&sys, &mixed, BoundaryTag::Dirichlet).unwrap();
        // Middle column of Neumann vertices stays free.
        assert_eq!(red.dof_map.n_free, 3);
        assert!(red.dof_map.free[1].is_some() && red.dof_map.free[7].is_some());

        let neumann = unit(2, BoundaryTag::Neumann);
        let sys = SparseSystem::new(assemble_stiffness(&neumann, &CoefficientField::Identity, None, 2).unwrap(), vec![0.0; 9]);
        assert!(matches!(apply_dirichlet(&sys, &neumann, BoundaryTag::Dirichlet), Err(Error::Singular(_))));
    }
}
