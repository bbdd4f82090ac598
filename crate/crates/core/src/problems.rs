//! The three boundary value problems (mixed, Robin, hemivariational) and
//! their fine, homogenized and multiscale solvers.

use std::fmt;
use std::str::FromStr;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::assembly::{apply_dirichlet, assemble_boundary_mass, assemble_load, assemble_stiffness, SparseSystem};
use crate::basis::{add_boundary_terms, assemble_coarse_system, boundary_law_load, coarse_side_tags, downscale, MsBasis, SystemTerms};
use crate::cell::CellSolution;
use crate::coefficient::{CoefficientField, Sym2};
use crate::error::{invalid, Error, Result};
use crate::field::{FeField, SmoothFunction};
use crate::mesh::{BoundaryTag, Mesh, Point, Rect, SideTags};
use crate::quadrature::{DEFAULT_ORDER, EDGE_GAUSS};
use crate::solver::{generalized_max_eigenvalue, solve_spd, CgOptions};
use crate::sparse::CsrMatrix;

pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Mixed,
    Robin,
    #[serde(alias = "hemi")]
    Hemivariational,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Mixed => "mixed",
            ProblemKind::Robin => "robin",
            ProblemKind::Hemivariational => "hemivariational",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(ProblemKind::Mixed),
            "robin" => Ok(ProblemKind::Robin),
            "hemivariational" | "hemi" => Ok(ProblemKind::Hemivariational),
            _ => invalid(format!("unknown problem kind '{s}'")),
        }
    }
}

/// Robin weight `α` with declared bounds `0 < α₁ ≤ α ≤ α₂`.
#[derive(Clone)]
pub struct RobinWeight {
    pub func: ScalarFn,
    pub lower: f64,
    pub upper: f64,
}

impl RobinWeight {
    pub fn constant(a: f64) -> Self {
        RobinWeight {
            func: Arc::new(move |_| a),
            lower: a,
            upper: a,
        }
    }
}

/// Single-valued boundary law `β = j'` with Lipschitz constant `L_β` and
/// bound `M_β` (`∞` when unbounded).
#[derive(Clone)]
pub struct BoundaryLaw {
    pub name: String,
    pub func: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub lipschitz: f64,
    pub bound: f64,
    /// `β ≡ 0`; the problem reduces to a linear mixed problem.
    pub zero: bool,
}

impl fmt::Debug for BoundaryLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BoundaryLaw({}, L={}, M={})", self.name, self.lipschitz, self.bound)
    }
}

impl BoundaryLaw {
    pub fn zero() -> Self {
        BoundaryLaw {
            name: "zero".into(),
            func: Arc::new(|_| 0.0),
            lipschitz: 0.0,
            bound: 0.0,
            zero: true,
        }
    }

    /// `β(s) = a s`
    pub fn linear(a: f64) -> Self {
        BoundaryLaw {
            name: format!("linear:{a}"),
            func: Arc::new(move |s| a * s),
            lipschitz: a.abs(),
            bound: if a == 0.0 { 0.0 } else { f64::INFINITY },
            zero: a == 0.0,
        }
    }

    /// `β(s) = 0.1 s/(1+s²) + 0.05 tanh s`, nonmonotone for `|s| > 1`.
    /// `|β'| ≤ 0.1 + 0.05` and `|β| ≤ 0.05 + 0.05`.
    pub fn nonmonotone() -> Self {
        BoundaryLaw {
            name: "nonmonotone".into(),
            func: Arc::new(|s| 0.1 * s / (1.0 + s * s) + 0.05 * s.tanh()),
            lipschitz: 0.15,
            bound: 0.1,
            zero: false,
        }
    }

    /// `c β`
    pub fn scaled(&self, c: f64) -> Self {
        let f = self.func.clone();
        BoundaryLaw {
            name: format!("{c}*{}", self.name),
            func: Arc::new(move |s| c * f(s)),
            lipschitz: c.abs() * self.lipschitz,
            bound: if c == 0.0 { 0.0 } else { c.abs() * self.bound },
            zero: self.zero || c == 0.0,
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.func)(s)
    }
}

impl FromStr for BoundaryLaw {
    type Err = Error;

    /// `zero`, `linear:<a>`, `nonmonotone` or `nonmonotone:<scale>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let num = || arg.trim().parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad boundary law '{s}'")));
        match kind {
            "zero" => Ok(BoundaryLaw::zero()),
            "linear" => Ok(BoundaryLaw::linear(num()?)),
            "nonmonotone" if arg.is_empty() => Ok(BoundaryLaw::nonmonotone()),
            "nonmonotone" => Ok(BoundaryLaw::nonmonotone().scaled(num()?)),
            _ => invalid(format!("unknown boundary law '{s}'")),
        }
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub rect: Rect,
    pub tags: SideTags,
    pub f: ScalarFn,
    /// Flux data on `Γ_N` (mixed, hemivariational) or on `∂Ω` (Robin).
    pub g: ScalarFn,
    pub alpha: Option<RobinWeight>,
    pub beta: Option<BoundaryLaw>,
    pub epsilon: f64,
    pub coefficient: CoefficientField,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("kind", &self.kind)
            .field("rect", &self.rect)
            .field("tags", &self.tags)
            .field("beta", &self.beta)
            .field("epsilon", &self.epsilon)
            .field("coefficient", &self.coefficient.to_string())
            .finish()
    }
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, tags: SideTags, coefficient: CoefficientField, epsilon: f64) -> Self {
        ProblemSpec {
            kind,
            rect: Rect::UNIT,
            tags,
            f: Arc::new(|_| 0.0),
            g: Arc::new(|_| 0.0),
            alpha: None,
            beta: None,
            epsilon,
            coefficient,
        }
    }

    pub fn with_source(mut self, f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        self.f = Arc::new(f);
        self
    }

    pub fn with_flux(mut self, g: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        self.g = Arc::new(g);
        self
    }

    pub fn with_alpha(mut self, alpha: RobinWeight) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn with_beta(mut self, beta: BoundaryLaw) -> Self {
        self.beta = Some(beta);
        self
    }

    /// Source and flux data for which `u0` solves the homogenized problem
    /// with tensor `a_hat`: `f = -div(Â∇u₀)`, `g = Â∇u₀·n (+ α u₀)`.
    /// `u0` must vanish on `Γ_D`.
    pub fn manufactured(mut self, u0: &SmoothFunction, a_hat: Sym2) -> Self {
        let (hess, grad, val) = (u0.hessian.clone(), u0.gradient.clone(), u0.value.clone());
        self.f = Arc::new(move |p| {
            let h = hess(p);
            -(a_hat.a11() * h.a11() + 2.0 * a_hat.a12() * h.a12() + a_hat.a22() * h.a22())
        });
        let rect = self.rect;
        let alpha = self.alpha.as_ref().map(|a| a.func.clone());
        self.g = Arc::new(move |p| {
            let n = outward_normal(rect, p);
            let flux = a_hat.apply(grad(p));
            let robin = alpha.as_ref().map_or(0.0, |a| a(p) * val(p));
            flux[0] * n[0] + flux[1] * n[1] + robin
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return invalid(format!("epsilon must be positive, got {}", self.epsilon));
        }
        match self.kind {
            ProblemKind::Mixed => {
                if !self.tags.contains(BoundaryTag::Dirichlet) {
                    return invalid("mixed problem needs a nonempty Dirichlet boundary");
                }
            }
            ProblemKind::Robin => {
                let a = self.alpha.as_ref().ok_or_else(|| Error::InvalidInput("Robin problem needs alpha".into()))?;
                if !(a.lower > 0.0 && a.lower <= a.upper) {
                    return invalid(format!("Robin bounds need 0 < lower <= upper, got [{}, {}]", a.lower, a.upper));
                }
            }
            ProblemKind::Hemivariational => {
                if !self.tags.contains(BoundaryTag::Dirichlet) {
                    return invalid("hemivariational problem needs a nonempty Dirichlet boundary");
                }
                if !self.tags.contains(BoundaryTag::Contact) {
                    return invalid("hemivariational problem needs a nonempty contact boundary");
                }
                let b = self.beta.as_ref().ok_or_else(|| Error::InvalidInput("hemivariational problem needs beta".into()))?;
                if !(b.lipschitz >= 0.0 && b.lipschitz.is_finite()) {
                    return invalid(format!("boundary law needs a finite Lipschitz constant, got {}", b.lipschitz));
                }
            }
        }
        Ok(())
    }
}

/// Outward unit normal of `rect` at a boundary point (nearest side).
pub fn outward_normal(rect: Rect, p: Point) -> [f64; 2] {
    let d = [p[1] - rect.y0, rect.x1 - p[0], rect.y1 - p[1], p[0] - rect.x0];
    let k = (0..4).min_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs())).unwrap();
    [[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]][k]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Fine,
    Homogenized,
    MsFem,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Fine => "fine",
            BackendKind::Homogenized => "homogenized",
            BackendKind::MsFem => "msfem",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine" => Ok(BackendKind::Fine),
            "homog" | "homogenized" => Ok(BackendKind::Homogenized),
            "msfem" => Ok(BackendKind::MsFem),
            _ => invalid(format!("unknown backend '{s}'")),
        }
    }
}

/// A solver backend with its resolution.
#[derive(Clone, Debug)]
pub enum Backend {
    /// P1 on the `n x n` structured mesh with `A(x/ε)`.
    Fine { n: usize },
    /// P1 on the `n x n` structured mesh with the constant tensor `Â`.
    Homogenized { n: usize, cell: Arc<CellSolution> },
    MsFem { basis: Arc<MsBasis> },
}

impl Backend {
    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Fine { .. } => BackendKind::Fine,
            Backend::Homogenized { .. } => BackendKind::Homogenized,
            Backend::MsFem { .. } => BackendKind::MsFem,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub cg: CgOptions,
    /// Fixed-point stop: energy increment relative to the iterate's energy.
    pub hemi_tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            cg: CgOptions::default(),
            hemi_tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HemiFeasibility {
    /// Discrete trace constant `c_j = max |v|_{0,Γ_C} / |v|_{1,Ω}`.
    pub c_j: f64,
    /// `α_j = L_β`
    pub alpha_j: f64,
    pub kappa1: f64,
    /// `κ₁ - α_j c_j²`
    pub delta: f64,
    /// `α_j c_j² / κ₁`
    pub contraction_bound: f64,
    /// Growth constants `|β(s)| ≤ c₀ + c₁|s|` derived from `M_β` and `L_β`.
    pub c0: f64,
    pub c1: f64,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub backend: BackendKind,
    /// Fine-grid field for the fine and multiscale backends, the solve
    /// mesh field for the homogenized backend.
    pub field: FeField,
    /// Nodal coefficients on the mesh the system was solved on.
    pub dofs: FeField,
    /// Fixed-point iterations; 1 for linear problems.
    pub iterations: usize,
    /// Energy norms of the fixed-point increments.
    pub increments: Vec<f64>,
    /// Largest increment ratio above the solver noise floor.
    pub contraction_observed: Option<f64>,
    /// Relative CG residuals of the last linear solve.
    pub residuals: Vec<f64>,
    pub cg_iterations: usize,
    pub feasibility: Option<HemiFeasibility>,
    pub notes: Vec<String>,
}

struct Discrete {
    kind: BackendKind,
    mesh: Arc<Mesh>,
    system: SparseSystem,
    basis: Option<Arc<MsBasis>>,
    notes: Vec<String>,
}

fn structured(spec: &ProblemSpec, n: usize) -> Result<Arc<Mesh>> {
    Ok(Arc::new(Mesh::structured(spec.rect, n, spec.tags)?))
}

fn check_alpha_bounds(mesh: &Mesh, alpha: &RobinWeight) -> Result<()> {
    for e in &mesh.boundary_edges {
        let (a, b) = (mesh.vertices[e.vertices[0]], mesh.vertices[e.vertices[1]]);
        for (t, _) in EDGE_GAUSS {
            let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            let v = (alpha.func)(x);
            if !(v >= alpha.lower && v <= alpha.upper) {
                return invalid(format!(
                    "Robin weight {v} at ({:.4}, {:.4}) violates declared bounds [{}, {}]",
                    x[0], x[1], alpha.lower, alpha.upper
                ));
            }
        }
    }
    Ok(())
}

fn discretize(spec: &ProblemSpec, backend: &Backend) -> Result<Discrete> {
    spec.validate()?;
    let f = spec.f.clone();
    let g = spec.g.clone();
    let source = move |p: Point| f(p);
    let flux = move |p: Point| g(p);
    let alpha_fn = spec.alpha.as_ref().map(|a| a.func.clone());
    let alpha = move |p: Point| alpha_fn.as_ref().map_or(0.0, |a| a(p));
    let mut terms = SystemTerms::source_only(&source);
    match spec.kind {
        ProblemKind::Mixed | ProblemKind::Hemivariational => terms.flux.push((BoundaryTag::Neumann, &flux)),
        ProblemKind::Robin => {
            for tag in BoundaryTag::ALL {
                terms.flux.push((tag, &flux));
                terms.mass.push((tag, &alpha));
            }
        }
    }

    let mut notes = Vec::new();
    let (mesh, system, basis) = match backend {
        Backend::Fine { n } => {
            let mesh = structured(spec, *n)?;
            let hf = spec.rect.width().max(spec.rect.height()) / *n as f64;
            if hf > spec.epsilon / 16.0 {
                let note = format!("under-resolved fine mesh: h_f = {hf:.3e} > epsilon/16 = {:.3e}", spec.epsilon / 16.0);
                log::warn!("{note}");
                notes.push(note);
            }
            let k = assemble_stiffness(&mesh, &spec.coefficient, Some(spec.epsilon), DEFAULT_ORDER)?;
            let mut sys = SparseSystem::new(k, assemble_load(&mesh, &source, DEFAULT_ORDER));
            add_boundary_terms(&mesh, &terms, &mut sys);
            (mesh, sys, None)
        }
        Backend::Homogenized { n, cell } => {
            if cell.coefficient != spec.coefficient.to_string() {
                let note = format!("cell solution computed for '{}', problem uses '{}'", cell.coefficient, spec.coefficient);
                log::warn!("{note}");
                notes.push(note);
            }
            let mesh = structured(spec, *n)?;
            let k = assemble_stiffness(&mesh, &CoefficientField::Constant(cell.a_hat), None, DEFAULT_ORDER)?;
            let mut sys = SparseSystem::new(k, assemble_load(&mesh, &source, DEFAULT_ORDER));
            add_boundary_terms(&mesh, &terms, &mut sys);
            (mesh, sys, None)
        }
        Backend::MsFem { basis } => {
            let (rect, n) = basis
                .coarse
                .grid()
                .ok_or_else(|| Error::InvalidInput("multiscale backend needs a structured coarse mesh".into()))?;
            if rect != spec.rect || coarse_side_tags(&basis.coarse, n) != spec.tags {
                return invalid("multiscale basis was built on a different domain or boundary partition");
            }
            if basis.epsilon != spec.epsilon || basis.coefficient != spec.coefficient {
                return invalid("multiscale basis was built for a different coefficient or epsilon");
            }
            (basis.coarse.clone(), assemble_coarse_system(basis, &terms), Some(basis.clone()))
        }
    };
    if let Some(a) = &spec.alpha {
        if spec.kind == ProblemKind::Robin {
            check_alpha_bounds(&mesh, a)?;
        }
    }
    let system = match spec.kind {
        ProblemKind::Robin => system,
        _ => apply_dirichlet(&system, &mesh, BoundaryTag::Dirichlet)?,
    };
    Ok(Discrete {
        kind: backend.kind(),
        mesh,
        system,
        basis,
        notes,
    })
}

fn finish(d: Discrete, reduced: &[f64]) -> Result<(FeField, FeField)> {
    let full = d.system.dof_map.expand(reduced);
    let dofs = FeField::new(d.mesh.clone(), full)?;
    let field = match &d.basis {
        Some(basis) => downscale(basis, &dofs.values)?,
        None => dofs.clone(),
    };
    Ok((field, dofs))
}

fn solve_linear(spec: &ProblemSpec, backend: &Backend, opts: &SolveOptions) -> Result<SolveResult> {
    let d = discretize(spec, backend)?;
    let (x, stats) = solve_spd(&d.system.matrix, &d.system.rhs, None, opts.cg)?;
    let energy = d.system.matrix.form(&x, &x).max(0.0).sqrt();
    let kind = d.kind;
    let notes = d.notes.clone();
    let (field, dofs) = finish(d, &x)?;
    Ok(SolveResult {
        backend: kind,
        field,
        dofs,
        iterations: 1,
        increments: vec![energy],
        contraction_observed: None,
        cg_iterations: stats.iterations,
        residuals: stats.residuals,
        feasibility: None,
        notes,
    })
}

/// Mixed Dirichlet-Neumann problem. Contact-tagged sides, if any, carry
/// zero flux.
pub fn solve_mixed(spec: &ProblemSpec, backend: &Backend, opts: &SolveOptions) -> Result<SolveResult> {
    if spec.kind != ProblemKind::Mixed {
        return invalid(format!("solve_mixed called on a {} problem", spec.kind));
    }
    solve_linear(spec, backend, opts)
}

/// Robin problem on the whole boundary.
pub fn solve_robin(spec: &ProblemSpec, backend: &Backend, opts: &SolveOptions) -> Result<SolveResult> {
    if spec.kind != ProblemKind::Robin {
        return invalid(format!("solve_robin called on a {} problem", spec.kind));
    }
    solve_linear(spec, backend, opts)
}

/// Dispatch on the problem kind.
pub fn solve(spec: &ProblemSpec, backend: &Backend, opts: &SolveOptions) -> Result<SolveResult> {
    match spec.kind {
        ProblemKind::Mixed => solve_mixed(spec, backend, opts),
        ProblemKind::Robin => solve_robin(spec, backend, opts),
        ProblemKind::Hemivariational => solve_hemivariational(spec, backend, opts),
    }
}

/// Relative tolerance of the trace constant power iteration.
pub const TRACE_TOL: f64 = 1e-7;

/// Largest `λ` of `B v = λ K v` with `K` the `Γ_D`-reduced `A = I`
/// stiffness and `B` the `Γ_C` boundary mass, both on `mesh` (P1).
fn trace_constant_squared(unit: &CsrMatrix, mesh: &Mesh) -> Result<f64> {
    // Depends only on the discrete space; structured meshes are memoized.
    let key = mesh.grid().map(|(r, n)| {
        let tags = mesh.boundary_edges.iter().map(|e| e.tag.code()).collect::<String>();
        format!("{:?}/{}/{}/{}/{}/{}", tags, n, r.x0, r.y0, r.x1, r.y1)
    });
    static MEMO: OnceLock<Mutex<HashMap<String, f64>>> = OnceLock::new();
    let memo = MEMO.get_or_init(Default::default);
    if let Some(c2) = key.as_ref().and_then(|k| memo.lock().ok()?.get(k).copied()) {
        return Ok(c2);
    }
    let mass = assemble_boundary_mass(mesh, BoundaryTag::Contact, &|_| 1.0);
    let dofs = crate::assembly::DofMap::from_constrained(&mesh.vertices_on(BoundaryTag::Dirichlet));
    let k = unit.restrict(&dofs.free, dofs.n_free);
    let b = mass.restrict(&dofs.free, dofs.n_free);
    let c2 = generalized_max_eigenvalue(&b, &k, TRACE_TOL, 10_000)?;
    if let (Some(k), Ok(mut m)) = (key, memo.lock()) {
        m.insert(k, c2);
    }
    Ok(c2)
}

fn feasibility_from(spec: &ProblemSpec, c2: f64) -> Result<HemiFeasibility> {
    let beta = spec
        .beta
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("feasibility check needs a boundary law".into()))?;
    let kappa1 = spec.coefficient.kappa1();
    let l = beta.lipschitz;
    let delta = kappa1 - l * c2;
    let feas = HemiFeasibility {
        c_j: c2.sqrt(),
        alpha_j: l,
        kappa1,
        delta,
        contraction_bound: l * c2 / kappa1,
        c0: if beta.bound.is_finite() { beta.bound } else { beta.eval(0.0).abs() },
        c1: if beta.bound.is_finite() { 0.0 } else { l },
    };
    if !(delta > 0.0) {
        return Err(Error::Infeasible(format!(
            "Δ = κ₁ − α_j c_j² = {kappa1} − {l}·{c2:.6} = {delta:.6} must be positive"
        )));
    }
    Ok(feas)
}

/// Feasibility on the P1 space of `mesh`.
pub fn check_hemi_feasibility(spec: &ProblemSpec, mesh: &Mesh) -> Result<HemiFeasibility> {
    spec.validate()?;
    let unit = assemble_stiffness(mesh, &CoefficientField::Identity, None, 1)?;
    feasibility_from(spec, trace_constant_squared(&unit, mesh)?)
}

/// Feasibility on the discrete space the backend solves in.
pub fn check_hemi_feasibility_on(spec: &ProblemSpec, backend: &Backend) -> Result<HemiFeasibility> {
    match backend {
        Backend::Fine { n } | Backend::Homogenized { n, .. } => check_hemi_feasibility(spec, &*structured(spec, *n)?),
        Backend::MsFem { basis } => {
            spec.validate()?;
            let unit = basis.coarse_matrix(|el| &el.unit_stiffness);
            feasibility_from(spec, trace_constant_squared(&unit, &basis.coarse)?)
        }
    }
}

/// Fixed-point solve of `a(u,v) + ∫_{Γ_C} β(u) v = F(v)` from `u⁰ = 0`.
pub fn solve_hemivariational(spec: &ProblemSpec, backend: &Backend, opts: &SolveOptions) -> Result<SolveResult> {
    if spec.kind != ProblemKind::Hemivariational {
        return invalid(format!("solve_hemivariational called on a {} problem", spec.kind));
    }
    let feas = check_hemi_feasibility_on(spec, backend)?;
    let law = spec.beta.clone().expect("validated");
    let d = discretize(spec, backend)?;
    let k = &d.system.matrix;
    let n = d.system.dof_map.n_free;

    let mut u = vec![0.0; n];
    let mut increments = Vec::new();
    let mut observed: Option<f64> = None;
    let mut cg_iterations = 0;
    let mut residuals = Vec::new();
    let mut converged = false;
    for it in 1..=opts.max_iter {
        let rhs = if law.zero {
            d.system.rhs.clone()
        } else {
            let full = d.system.dof_map.expand(&u);
            let bl = d.system.dof_map.restrict(&boundary_law_load(&d.mesh, BoundaryTag::Contact, &full, &*law.func));
            d.system.rhs.iter().zip(&bl).map(|(f, b)| f - b).collect()
        };
        let (next, stats) = solve_spd(k, &rhs, Some(&u), opts.cg)?;
        cg_iterations += stats.iterations;
        residuals = stats.residuals;
        let delta: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let inc = k.form(&delta, &delta).max(0.0).sqrt();
        let norm = k.form(&next, &next).max(0.0).sqrt();
        u = next;
        if let Some(&prev) = increments.last() {
            let floor = 1e3 * opts.cg.tol * norm;
            if inc > floor && prev > floor {
                let ratio: f64 = inc / prev;
                if ratio > 1.0 {
                    return Err(Error::Divergence {
                        iteration: it,
                        ratio,
                        bound: feas.contraction_bound,
                    });
                }
                observed = Some(observed.map_or(ratio, |o: f64| o.max(ratio)));
            }
        }
        increments.push(inc);
        if law.zero || inc <= opts.hemi_tol * norm.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: opts.max_iter,
            residuals: increments,
        });
    }
    if let Some(o) = observed {
        if o > feas.contraction_bound {
            log::warn!("observed contraction {o:.4} above bound {:.4}", feas.contraction_bound);
        }
    }
    let kind = d.kind;
    let notes = d.notes.clone();
    let iterations = increments.len();
    let (field, dofs) = finish(d, &u)?;
    Ok(SolveResult {
        backend: kind,
        field,
        dofs,
        iterations,
        increments,
        contraction_observed: observed,
        residuals,
        cg_iterations,
        feasibility: Some(feas),
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sides(bottom: BoundaryTag, right: BoundaryTag, top: BoundaryTag, left: BoundaryTag) -> SideTags {
        SideTags { bottom, right, top, left }
    }

    #[test]
    fn robin_constant_solution() {
        let spec = ProblemSpec::new(ProblemKind::Robin, SideTags::uniform(BoundaryTag::Neumann), CoefficientField::Identity, 0.1)
            .with_alpha(RobinWeight::constant(1.0))
            .with_flux(|_| 1.0);
        let r = solve_robin(&spec, &Backend::Fine { n: 4 }, &SolveOptions::default()).unwrap();
        assert!(r.field.values.iter().all(|v| (v - 1.0).abs() < 1e-11));
    }

    #[test]
    fn alpha_bounds_are_enforced() {
        let spec = ProblemSpec::new(ProblemKind::Robin, SideTags::uniform(BoundaryTag::Neumann), CoefficientField::Identity, 0.1)
            .with_alpha(RobinWeight {
                func: Arc::new(|p| 1.0 + p[0]),
                lower: 1.0,
                upper: 1.5,
            });
        assert!(matches!(solve_robin(&spec, &Backend::Fine { n: 4 }, &SolveOptions::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let spec = ProblemSpec::new(
            ProblemKind::Mixed,
            sides(BoundaryTag::Neumann, BoundaryTag::Dirichlet, BoundaryTag::Neumann, BoundaryTag::Dirichlet),
            CoefficientField::layered(2.0, 1.0).unwrap(),
            0.25,
        );
        let r = solve_mixed(&spec, &Backend::Fine { n: 8 }, &SolveOptions::default()).unwrap();
        assert!(r.field.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn infeasible_law_is_rejected() {
        let tags = sides(BoundaryTag::Neumann, BoundaryTag::Contact, BoundaryTag::Neumann, BoundaryTag::Dirichlet);
        let base = ProblemSpec::new(ProblemKind::Hemivariational, tags, CoefficientField::Identity, 0.1).with_beta(BoundaryLaw::zero());
        let mesh = Mesh::structured(Rect::UNIT, 8, tags).unwrap();
        let feas = check_hemi_feasibility(&base, &mesh).unwrap();
        assert_eq!(feas.delta, 1.0);
        let l = 1.01 * feas.kappa1 / (feas.c_j * feas.c_j);
        let bad = base.clone().with_beta(BoundaryLaw::linear(l));
        assert!(matches!(check_hemi_feasibility(&bad, &mesh), Err(Error::Infeasible(_))));
        assert!(matches!(
            solve_hemivariational(&bad, &Backend::Fine { n: 8 }, &SolveOptions::default()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn parsing() {
        assert_eq!("hemi".parse::<ProblemKind>().unwrap(), ProblemKind::Hemivariational);
        assert_eq!("homog".parse::<BackendKind>().unwrap(), BackendKind::Homogenized);
        assert!("nonmonotone:0.5".parse::<BoundaryLaw>().unwrap().lipschitz == 0.075);
        assert!("bogus".parse::<BoundaryLaw>().is_err());
    }

    #[test]
    fn normals() {
        assert_eq!(outward_normal(Rect::UNIT, [0.3, 0.0]), [0.0, -1.0]);
        assert_eq!(outward_normal(Rect::UNIT, [1.0, 0.4]), [1.0, 0.0]);
        assert_eq!(outward_normal(Rect::UNIT, [0.2, 1.0]), [0.0, 1.0]);
        assert_eq!(outward_normal(Rect::UNIT, [0.0, 0.7]), [-1.0, 0.0]);
    }
}
