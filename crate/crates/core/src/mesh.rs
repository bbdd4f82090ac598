//! Structured triangulations of rectangles, nested refinements of single
//! triangles, and shape-regularity diagnostics.
//!
//! Rectangles are split into `n x n` cells, each cut along its anti-diagonal
//! into a lower triangle `(i,j),(i+1,j),(i,j+1)` and an upper triangle
//! `(i+1,j),(i+1,j+1),(i,j+1)`. Uniform refinement of either triangle
//! reproduces the same pattern, so the submesh of a coarse element is an
//! exact piece of the `n*m` structured mesh of the whole rectangle.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Point = [f64; 2];

/// Boundary parts: `Γ_D`, `Γ_N` and `Γ_C`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundaryTag {
    #[serde(rename = "D")]
    Dirichlet,
    #[serde(rename = "N")]
    Neumann,
    #[serde(rename = "C")]
    Contact,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 3] = [
        BoundaryTag::Dirichlet,
        BoundaryTag::Neumann,
        BoundaryTag::Contact,
    ];

    pub fn code(self) -> char {
        match self {
            BoundaryTag::Dirichlet => 'D',
            BoundaryTag::Neumann => 'N',
            BoundaryTag::Contact => 'C',
        }
    }

    pub fn from_code(s: &str) -> Result<Self> {
        match s {
            "D" => Ok(BoundaryTag::Dirichlet),
            "N" => Ok(BoundaryTag::Neumann),
            "C" => Ok(BoundaryTag::Contact),
            other => invalid(format!("unknown boundary tag '{other}'")),
        }
    }
}

/// Axis-aligned rectangle `[x0,x1] x [y0,y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// One tag per side of the rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideTags {
    pub bottom: BoundaryTag,
    pub right: BoundaryTag,
    pub top: BoundaryTag,
    pub left: BoundaryTag,
}

impl SideTags {
    pub fn uniform(tag: BoundaryTag) -> Self {
        SideTags {
            bottom: tag,
            right: tag,
            top: tag,
            left: tag,
        }
    }

    /// Sides in counterclockwise order starting at the bottom.
    pub fn in_order(&self) -> [BoundaryTag; 4] {
        [self.bottom, self.right, self.top, self.left]
    }

    pub fn contains(&self, tag: BoundaryTag) -> bool {
        self.in_order().contains(&tag)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
}

/// How a mesh was generated; drives point location and nesting checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Layout {
    /// `n x n` anti-diagonal split of a rectangle, row-major vertices.
    Grid { rect: Rect, n: usize },
    /// Uniform `m`-fold refinement of a single triangle.
    Triangle { corners: [Point; 3], m: usize },
    Unstructured,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Largest element diameter.
    pub h_max: f64,
    /// Smallest incircle-to-circumcircle radius ratio.
    pub rho: f64,
    pub layout: Layout,
}

/// Shape quantities of a single triangle.
#[derive(Clone, Copy, Debug)]
pub struct TriangleShape {
    pub area: f64,
    pub diameter: f64,
    pub inradius: f64,
    pub circumradius: f64,
}

impl TriangleShape {
    pub fn of(p: [Point; 3]) -> Self {
        let area = signed_area(p);
        let len = |a: Point, b: Point| ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let a = len(p[1], p[2]);
        let b = len(p[2], p[0]);
        let c = len(p[0], p[1]);
        let abs_area = area.abs();
        TriangleShape {
            area,
            diameter: a.max(b).max(c),
            inradius: 2.0 * abs_area / (a + b + c),
            circumradius: a * b * c / (4.0 * abs_area),
        }
    }

    pub fn ratio(&self) -> f64 {
        self.inradius / self.circumradius
    }
}

pub fn signed_area(p: [Point; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
}

/// Default threshold below which `regularity_report` flags an element.
pub const DEFAULT_RHO_MIN: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct RegularityReport {
    pub rho: f64,
    pub h_max: f64,
    /// `r_T / h_T` per element.
    pub ratios: Vec<f64>,
    /// Elements with ratio below the threshold.
    pub flagged: Vec<usize>,
}

/// Recompute shape regularity from vertex coordinates.
pub fn regularity_report(mesh: &Mesh, rho_min: f64) -> Result<RegularityReport> {
    regularity_of(&mesh.vertices, &mesh.triangles, rho_min)
}

fn regularity_of(vertices: &[Point], triangles: &[[usize; 3]], rho_min: f64) -> Result<RegularityReport> {
    let mut ratios = Vec::with_capacity(triangles.len());
    let mut flagged = Vec::new();
    let mut rho = f64::INFINITY;
    let mut h_max: f64 = 0.0;
    for (e, t) in triangles.iter().enumerate() {
        let p = [vertices[t[0]], vertices[t[1]], vertices[t[2]]];
        let shape = TriangleShape::of(p);
        if shape.area <= 0.0 {
            return Err(Error::DegenerateElement {
                element: e,
                area: shape.area,
            });
        }
        let ratio = shape.ratio();
        if ratio < rho_min {
            flagged.push(e);
        }
        rho = rho.min(ratio);
        h_max = h_max.max(shape.diameter);
        ratios.push(ratio);
    }
    if !flagged.is_empty() {
        log::warn!("{} element(s) below shape-regularity threshold {rho_min}", flagged.len());
    }
    Ok(RegularityReport {
        rho,
        h_max,
        ratios,
        flagged,
    })
}

impl Mesh {
    /// Structured mesh of `rect` with `n` subdivisions per side.
    pub fn structured(rect: Rect, n: usize, tags: SideTags) -> Result<Mesh> {
        if n == 0 {
            return invalid("structured mesh needs n >= 1");
        }
        if !(rect.width() > 0.0 && rect.height() > 0.0) {
            return invalid(format!("degenerate rectangle {rect:?}"));
        }
        let dx = rect.width() / n as f64;
        let dy = rect.height() / n as f64;
        let vid = |i: usize, j: usize| j * (n + 1) + i;

        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            let y = if j == n { rect.y1 } else { rect.y0 + j as f64 * dy };
            for i in 0..=n {
                let x = if i == n { rect.x1 } else { rect.x0 + i as f64 * dx };
                vertices.push([x, y]);
            }
        }

        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                triangles.push([vid(i, j), vid(i + 1, j), vid(i, j + 1)]);
                triangles.push([vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]);
            }
        }

        let mut boundary_edges = Vec::with_capacity(4 * n);
        for i in 0..n {
            boundary_edges.push(BoundaryEdge {
                vertices: [vid(i, 0), vid(i + 1, 0)],
                tag: tags.bottom,
            });
        }
        for j in 0..n {
            boundary_edges.push(BoundaryEdge {
                vertices: [vid(n, j), vid(n, j + 1)],
                tag: tags.right,
            });
        }
        for i in (0..n).rev() {
            boundary_edges.push(BoundaryEdge {
                vertices: [vid(i + 1, n), vid(i, n)],
                tag: tags.top,
            });
        }
        for j in (0..n).rev() {
            boundary_edges.push(BoundaryEdge {
                vertices: [vid(0, j + 1), vid(0, j)],
                tag: tags.left,
            });
        }

        // Every element is congruent, so the first one carries the metrics.
        let shape = TriangleShape::of([vertices[0], vertices[1], vertices[n + 1]]);
        Ok(Mesh {
            vertices,
            triangles,
            boundary_edges,
            h_max: shape.diameter,
            rho: shape.ratio(),
            layout: Layout::Grid { rect, n },
        })
    }

    /// Mesh from raw arrays; rejects zero or negative area elements.
    pub fn from_parts(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<BoundaryEdge>,
    ) -> Result<Mesh> {
        for t in &triangles {
            if t.iter().any(|&v| v >= vertices.len()) {
                return invalid(format!("triangle {t:?} references a missing vertex"));
            }
        }
        let report = regularity_of(&vertices, &triangles, 0.0)?;
        Ok(Mesh {
            vertices,
            triangles,
            boundary_edges,
            h_max: report.h_max,
            rho: report.rho,
            layout: Layout::Unstructured,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        signed_area(self.corners(t))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangle_count()).map(|t| self.area(t)).sum()
    }

    /// Number of distinct edges.
    pub fn edge_count(&self) -> usize {
        let mut edges = HashSet::with_capacity(3 * self.triangles.len() / 2 + 1);
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    pub fn edges_with(&self, tag: BoundaryTag) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary_edges.iter().filter(move |e| e.tag == tag)
    }

    pub fn has_tag(&self, tag: BoundaryTag) -> bool {
        self.edges_with(tag).next().is_some()
    }

    /// `true` for every vertex touching an edge with `tag`.
    pub fn vertices_on(&self, tag: BoundaryTag) -> Vec<bool> {
        let mut on = vec![false; self.vertex_count()];
        for e in self.edges_with(tag) {
            on[e.vertices[0]] = true;
            on[e.vertices[1]] = true;
        }
        on
    }

    /// Total length of edges with `tag`.
    pub fn boundary_length(&self, tag: BoundaryTag) -> f64 {
        self.edges_with(tag)
            .map(|e| {
                let (a, b) = (self.vertices[e.vertices[0]], self.vertices[e.vertices[1]]);
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
            })
            .sum()
    }

    /// Grid subdivisions when the mesh is a structured rectangle mesh.
    pub fn grid(&self) -> Option<(Rect, usize)> {
        match self.layout {
            Layout::Grid { rect, n } => Some((rect, n)),
            _ => None,
        }
    }

    /// Lattice coordinates of a vertex of a structured rectangle mesh.
    pub fn grid_index(&self, v: usize) -> Option<(usize, usize)> {
        self.grid().map(|(_, n)| (v % (n + 1), v / (n + 1)))
    }

    /// Containing triangle and barycentric coordinates of `p`. Points on
    /// shared edges resolve to a single, deterministic element.
    pub fn locate(&self, p: Point) -> Option<(usize, [f64; 3])> {
        match self.layout {
            Layout::Grid { rect, n } => {
                let u = (p[0] - rect.x0) / rect.width() * n as f64;
                let v = (p[1] - rect.y0) / rect.height() * n as f64;
                let tol = 1e-9;
                if u < -tol || v < -tol || u > n as f64 + tol || v > n as f64 + tol {
                    return None;
                }
                let i = (u.floor().max(0.0) as usize).min(n - 1);
                let j = (v.floor().max(0.0) as usize).min(n - 1);
                let s = u - i as f64;
                let t = v - j as f64;
                let base = 2 * (j * n + i);
                if s + t <= 1.0 {
                    Some((base, [1.0 - s - t, s, t]))
                } else {
                    Some((base + 1, [1.0 - t, s + t - 1.0, 1.0 - s]))
                }
            }
            _ => (0..self.triangle_count()).find_map(|t| {
                let b = barycentric(self.corners(t), p);
                (b.iter().all(|&c| c >= -1e-12)).then_some((t, b))
            }),
        }
    }

    /// Every element whose closure contains `p` (up to `tol` in barycentric
    /// coordinates).
    pub fn containing(&self, p: Point, tol: f64) -> Vec<usize> {
        match self.layout {
            Layout::Grid { rect, n } => {
                let u = (p[0] - rect.x0) / rect.width() * n as f64;
                let v = (p[1] - rect.y0) / rect.height() * n as f64;
                let i0 = u.floor() as i64;
                let j0 = v.floor() as i64;
                let mut out = Vec::new();
                for j in (j0 - 1)..=(j0 + 1) {
                    for i in (i0 - 1)..=(i0 + 1) {
                        if i < 0 || j < 0 || i >= n as i64 || j >= n as i64 {
                            continue;
                        }
                        let base = 2 * (j as usize * n + i as usize);
                        for t in [base, base + 1] {
                            if barycentric(self.corners(t), p).iter().all(|&c| c >= -tol) {
                                out.push(t);
                            }
                        }
                    }
                }
                out
            }
            _ => (0..self.triangle_count())
                .filter(|&t| barycentric(self.corners(t), p).iter().all(|&c| c >= -tol))
                .collect(),
        }
    }

    /// Refinement factor `k` when `self` is the `k`-fold structured
    /// refinement of `coarse` (same rectangle).
    pub fn refinement_of(&self, coarse: &Mesh) -> Result<usize> {
        match (self.layout, coarse.layout) {
            (Layout::Grid { rect: rf, n: nf }, Layout::Grid { rect: rc, n: nc }) => {
                if rf != rc {
                    return Err(Error::NonNested(format!("rectangles differ: {rf:?} vs {rc:?}")));
                }
                if nf % nc != 0 {
                    return Err(Error::NonNested(format!("{nf} subdivisions do not refine {nc}")));
                }
                Ok(nf / nc)
            }
            _ => Err(Error::NonNested("only structured rectangle meshes can be nested".into())),
        }
    }

    /// Plain-text dump: `msfem-mesh v1`, then `v`, `t` and `b` records.
    pub fn dump(&self) -> String {
        let mut out = String::with_capacity(32 * (self.vertex_count() + self.triangle_count()));
        out.push_str("msfem-mesh v1\n");
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {}", v[0], v[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "t {} {} {}", t[0], t[1], t[2]);
        }
        for e in &self.boundary_edges {
            let _ = writeln!(out, "b {} {} {}", e.vertices[0], e.vertices[1], e.tag.code());
        }
        out
    }

    /// Inverse of [`Mesh::dump`]. The result has an unstructured layout.
    pub fn parse_dump(text: &str) -> Result<Mesh> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("msfem-mesh v1") {
            return invalid("missing 'msfem-mesh v1' header");
        }
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        let mut edges = Vec::new();
        for (k, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::InvalidInput(format!("malformed mesh record on line {}: '{line}'", k + 2));
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            let idx = |s: &str| s.parse::<usize>().map_err(|_| bad());
            match fields.as_slice() {
                [] => {}
                ["v", x, y] => vertices.push([num(x)?, num(y)?]),
                ["t", a, b, c] => triangles.push([idx(a)?, idx(b)?, idx(c)?]),
                ["b", a, b, tag] => edges.push(BoundaryEdge {
                    vertices: [idx(a)?, idx(b)?],
                    tag: BoundaryTag::from_code(tag)?,
                }),
                _ => return Err(bad()),
            }
        }
        Mesh::from_parts(vertices, triangles, edges)
    }
}

pub fn barycentric(c: [Point; 3], p: Point) -> [f64; 3] {
    let det = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
    let l1 = ((p[0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (p[1] - c[0][1])) / det;
    let l2 = ((c[1][0] - c[0][0]) * (p[1] - c[0][1]) - (p[0] - c[0][0]) * (c[1][1] - c[0][1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// A boundary vertex of a submesh with its barycentric coordinates
/// relative to the parent triangle's corners.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceDof {
    pub vertex: usize,
    pub bary: [f64; 3],
}

/// Uniform refinement of one coarse element.
#[derive(Clone, Debug)]
pub struct SubMesh {
    pub parent_element: usize,
    pub mesh: Mesh,
    /// The `3m` vertices on the parent boundary, counterclockwise from the
    /// first corner.
    pub trace_dofs: Vec<TraceDof>,
    /// Barycentric coordinates of every submesh vertex.
    pub bary: Vec<[f64; 3]>,
    /// Vertex indices in the `n*m` structured refinement of the parent
    /// mesh, when the parent is a structured rectangle mesh.
    pub global_index: Option<Vec<usize>>,
}

impl SubMesh {
    pub fn m(&self) -> usize {
        match self.mesh.layout {
            Layout::Triangle { m, .. } => m,
            _ => unreachable!("submesh always has a triangle layout"),
        }
    }

    /// `true` for vertices on the parent element boundary.
    pub fn on_boundary(&self) -> Vec<bool> {
        let mut on = vec![false; self.mesh.vertex_count()];
        for d in &self.trace_dofs {
            on[d.vertex] = true;
        }
        on
    }
}

/// Index of lattice point `(s,t)`, `s+t <= m`, in a refined triangle.
fn tri_index(m: usize, s: usize, t: usize) -> usize {
    t * (m + 1) - t * t.saturating_sub(1) / 2 + s
}

/// Uniform refinement of `element` into `m^2` congruent triangles.
pub fn build_fine_submesh(mesh: &Mesh, element: usize, m: usize) -> Result<SubMesh> {
    if m < 2 {
        return invalid(format!("fine submesh needs m >= 2, got {m}"));
    }
    if element >= mesh.triangle_count() {
        return invalid(format!("element {element} out of range"));
    }
    let corners = mesh.corners(element);
    let [a, b, c] = corners;
    let mf = m as f64;

    let nv = (m + 1) * (m + 2) / 2;
    let mut vertices = Vec::with_capacity(nv);
    let mut bary = Vec::with_capacity(nv);
    for t in 0..=m {
        for s in 0..=(m - t) {
            // Exact corner coordinates keep the trace on the parent edges.
            let (ls, lt) = (s as f64 / mf, t as f64 / mf);
            let l0 = if s + t == m { 0.0 } else { 1.0 - ls - lt };
            let p = if s == m {
                b
            } else if t == m {
                c
            } else if s == 0 && t == 0 {
                a
            } else {
                [
                    a[0] + ls * (b[0] - a[0]) + lt * (c[0] - a[0]),
                    a[1] + ls * (b[1] - a[1]) + lt * (c[1] - a[1]),
                ]
            };
            vertices.push(p);
            bary.push([l0, ls, lt]);
        }
    }

    let mut triangles = Vec::with_capacity(m * m);
    for t in 0..m {
        for s in 0..(m - t) {
            triangles.push([tri_index(m, s, t), tri_index(m, s + 1, t), tri_index(m, s, t + 1)]);
            if s + t + 1 < m {
                triangles.push([
                    tri_index(m, s + 1, t),
                    tri_index(m, s + 1, t + 1),
                    tri_index(m, s, t + 1),
                ]);
            }
        }
    }

    let mut ring = Vec::with_capacity(3 * m);
    for s in 0..m {
        ring.push(tri_index(m, s, 0));
    }
    for k in 0..m {
        ring.push(tri_index(m, m - k, k));
    }
    for k in 0..m {
        ring.push(tri_index(m, 0, m - k));
    }
    let trace_dofs = ring
        .iter()
        .map(|&v| TraceDof {
            vertex: v,
            bary: bary[v],
        })
        .collect();
    let boundary_edges = (0..ring.len())
        .map(|k| BoundaryEdge {
            vertices: [ring[k], ring[(k + 1) % ring.len()]],
            tag: BoundaryTag::Dirichlet,
        })
        .collect();

    let global_index = match mesh.layout {
        Layout::Grid { n, .. } => {
            let tri = mesh.triangles[element];
            let lat = |v: usize| ((v % (n + 1)) as i64, (v / (n + 1)) as i64);
            let (la, lb, lc) = (lat(tri[0]), lat(tri[1]), lat(tri[2]));
            let nf = n * m;
            let mi = m as i64;
            let mut idx = Vec::with_capacity(nv);
            for t in 0..=m as i64 {
                for s in 0..=(mi - t) {
                    let gi = mi * la.0 + s * (lb.0 - la.0) + t * (lc.0 - la.0);
                    let gj = mi * la.1 + s * (lb.1 - la.1) + t * (lc.1 - la.1);
                    idx.push(gj as usize * (nf + 1) + gi as usize);
                }
            }
            Some(idx)
        }
        _ => None,
    };

    let shape = TriangleShape::of([vertices[0], vertices[1], vertices[m + 1]]);
    let sub = Mesh {
        vertices,
        triangles,
        boundary_edges,
        h_max: shape.diameter,
        rho: shape.ratio(),
        layout: Layout::Triangle { corners, m },
    };
    Ok(SubMesh {
        parent_element: element,
        mesh: sub,
        trace_dofs,
        bary,
        global_index,
    })
}
