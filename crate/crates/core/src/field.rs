//! Nodal P1 fields and smooth analytic samplers.

use std::fmt;
use std::sync::Arc;

use crate::assembly::p1_gradients;
use crate::coefficient::Sym2;
use crate::error::{invalid, Result};
use crate::mesh::{Mesh, Point};

/// Anything that can be evaluated pointwise with a gradient.
pub trait Sampler {
    fn value(&self, p: Point) -> f64;
    fn gradient(&self, p: Point) -> [f64; 2];
}

/// A continuous piecewise linear function on a mesh.
#[derive(Clone)]
pub struct FeField {
    pub mesh: Arc<Mesh>,
    pub values: Vec<f64>,
}

impl fmt::Debug for FeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeField")
            .field("vertices", &self.mesh.vertex_count())
            .field("layout", &self.mesh.layout)
            .finish()
    }
}

impl FeField {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.vertex_count() {
            return invalid(format!(
                "field has {} values for {} vertices",
                values.len(),
                mesh.vertex_count()
            ));
        }
        Ok(FeField { mesh, values })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.vertex_count();
        FeField { mesh, values: vec![0.0; n] }
    }

    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn(Point) -> f64) -> Self {
        let values = mesh.vertices.iter().map(|&p| f(p)).collect();
        FeField { mesh, values }
    }

    /// Constant gradient on element `t`.
    pub fn element_gradient(&self, t: usize) -> [f64; 2] {
        let tri = self.mesh.triangles[t];
        let (g, _) = p1_gradients(self.mesh.corners(t));
        let mut out = [0.0; 2];
        for k in 0..3 {
            let v = self.values[tri[k]];
            out[0] += v * g[k][0];
            out[1] += v * g[k][1];
        }
        out
    }

    /// Value at `p`, `None` outside the mesh.
    pub fn eval(&self, p: Point) -> Option<f64> {
        self.mesh.locate(p).map(|(t, b)| {
            let tri = self.mesh.triangles[t];
            b[0] * self.values[tri[0]] + b[1] * self.values[tri[1]] + b[2] * self.values[tri[2]]
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self - other` on the same mesh.
    pub fn sub(&self, other: &FeField) -> Result<FeField> {
        if self.values.len() != other.values.len() {
            return invalid("fields live on different meshes");
        }
        Ok(FeField {
            mesh: self.mesh.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scaled(&self, s: f64) -> FeField {
        FeField {
            mesh: self.mesh.clone(),
            values: self.values.iter().map(|v| s * v).collect(),
        }
    }
}

impl Sampler for FeField {
    /// Zero outside the mesh.
    fn value(&self, p: Point) -> f64 {
        self.eval(p).unwrap_or(0.0)
    }

    fn gradient(&self, p: Point) -> [f64; 2] {
        self.mesh.locate(p).map_or([0.0; 2], |(t, _)| self.element_gradient(t))
    }
}

type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;
type HessianFn = Arc<dyn Fn(Point) -> Sym2 + Send + Sync>;

/// A smooth function with exact first and second derivatives.
#[derive(Clone)]
pub struct SmoothFunction {
    pub name: String,
    pub value: ScalarFn,
    pub gradient: VectorFn,
    pub hessian: HessianFn,
}

impl fmt::Debug for SmoothFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SmoothFunction({})", self.name)
    }
}

impl SmoothFunction {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(Point) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(Point) -> [f64; 2] + Send + Sync + 'static,
        hessian: impl Fn(Point) -> Sym2 + Send + Sync + 'static,
    ) -> Self {
        SmoothFunction {
            name: name.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
        }
    }

    /// `c + a x + b y`
    pub fn linear(c: f64, a: f64, b: f64) -> Self {
        SmoothFunction::new(
            format!("{c}+{a}x+{b}y"),
            move |p| c + a * p[0] + b * p[1],
            move |_| [a, b],
            |_| Sym2([0.0; 3]),
        )
    }

    pub fn constant(c: f64) -> Self {
        Self::linear(c, 0.0, 0.0)
    }

    /// `s * self`
    pub fn scaled(&self, s: f64) -> Self {
        let (v, g, h) = (self.value.clone(), self.gradient.clone(), self.hessian.clone());
        SmoothFunction::new(
            format!("{s}*{}", self.name),
            move |p| s * v(p),
            move |p| {
                let d = g(p);
                [s * d[0], s * d[1]]
            },
            move |p| h(p) * s,
        )
    }
}

impl Sampler for SmoothFunction {
    fn value(&self, p: Point) -> f64 {
        (self.value)(p)
    }

    fn gradient(&self, p: Point) -> [f64; 2] {
        (self.gradient)(p)
    }
}
