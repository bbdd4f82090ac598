//! Periodic symmetric coefficient fields `A(y)` on the unit cell.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mesh::Point;

/// Symmetric 2x2 matrix stored as `[a11, a12, a22]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sym2(pub [f64; 3]);

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2([1.0, 0.0, 1.0]);

    pub fn scalar(a: f64) -> Self {
        Sym2([a, 0.0, a])
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Sym2([a, 0.0, b])
    }

    pub fn a11(&self) -> f64 {
        self.0[0]
    }
    pub fn a12(&self) -> f64 {
        self.0[1]
    }
    pub fn a22(&self) -> f64 {
        self.0[2]
    }

    /// Entry `(i,j)`, zero-based.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match (i, j) {
            (0, 0) => self.0[0],
            (1, 1) => self.0[2],
            _ => self.0[1],
        }
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.0[0] * v[0] + self.0[1] * v[1], self.0[1] * v[0] + self.0[2] * v[1]]
    }

    /// `a . A b`
    pub fn form(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let ab = self.apply(b);
        a[0] * ab[0] + a[1] * ab[1]
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let [a, b, c] = self.0;
        let mean = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        [mean - rad, mean + rad]
    }

    /// Eigenvalue clamp into `[lo, hi]`.
    pub fn clamp_spectrum(&self, lo: f64, hi: f64) -> Sym2 {
        let [l1, l2] = self.eigenvalues();
        if l1 >= lo && l2 <= hi {
            return *self;
        }
        let [a, b, c] = self.0;
        // Eigenvector of the larger eigenvalue.
        let (vx, vy) = if b.abs() > 1e-300 {
            (b, l2 - a)
        } else if a >= c {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let norm = (vx * vx + vy * vy).sqrt();
        let (ux, uy) = (vx / norm, vy / norm);
        let (m1, m2) = (l1.clamp(lo, hi), l2.clamp(lo, hi));
        // A = m2 u u^T + m1 w w^T with w perpendicular to u.
        Sym2([
            m2 * ux * ux + m1 * uy * uy,
            (m2 - m1) * ux * uy,
            m2 * uy * uy + m1 * ux * ux,
        ])
    }
}

impl std::ops::Add for Sym2 {
    type Output = Sym2;
    fn add(self, o: Sym2) -> Sym2 {
        Sym2([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl std::ops::Mul<f64> for Sym2 {
    type Output = Sym2;
    fn mul(self, s: f64) -> Sym2 {
        Sym2([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

/// Bilinearly interpolated samples of `A` on an `N x N` periodic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCoefficient {
    pub n: usize,
    pub kappa1: f64,
    pub kappa2: f64,
    /// Row-major: sample `j*n + i` sits at `y = (i/n, j/n)`.
    pub samples: Vec<Sym2>,
}

impl GridCoefficient {
    /// Parse `N kappa1 kappa2` followed by `N^2` lines `a11 a12 a22`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::InvalidInput("empty grid coefficient file".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 {
            return invalid(format!("grid header must be 'N kappa1 kappa2', got '{header}'"));
        }
        let n: usize = h[0].parse().map_err(|_| Error::InvalidInput(format!("bad N '{}'", h[0])))?;
        let k1: f64 = h[1].parse().map_err(|_| Error::InvalidInput(format!("bad kappa1 '{}'", h[1])))?;
        let k2: f64 = h[2].parse().map_err(|_| Error::InvalidInput(format!("bad kappa2 '{}'", h[2])))?;
        if n == 0 || !(k1 > 0.0 && k2 >= k1) {
            return invalid(format!("grid header needs N >= 1 and 0 < kappa1 <= kappa2, got '{header}'"));
        }
        let mut samples = Vec::with_capacity(n * n);
        for line in lines {
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidInput(format!("bad grid sample '{line}'")))?;
            if v.len() != 3 {
                return invalid(format!("grid sample must be 'a11 a12 a22', got '{line}'"));
            }
            samples.push(Sym2([v[0], v[1], v[2]]).clamp_spectrum(k1, k2));
        }
        if samples.len() != n * n {
            return invalid(format!("expected {} grid samples, found {}", n * n, samples.len()));
        }
        Ok(GridCoefficient {
            n,
            kappa1: k1,
            kappa2: k2,
            samples,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.n, self.kappa1, self.kappa2);
        for s in &self.samples {
            out.push_str(&format!("{} {} {}\n", s.0[0], s.0[1], s.0[2]));
        }
        out
    }

    fn eval(&self, y: Point) -> Sym2 {
        let n = self.n;
        let u = y[0].rem_euclid(1.0) * n as f64;
        let v = y[1].rem_euclid(1.0) * n as f64;
        let i = (u.floor() as usize).min(n - 1);
        let j = (v.floor() as usize).min(n - 1);
        let (s, t) = (u - i as f64, v - j as f64);
        let at = |i: usize, j: usize| self.samples[(j % n) * n + (i % n)];
        let a = at(i, j) * ((1.0 - s) * (1.0 - t))
            + at(i + 1, j) * (s * (1.0 - t))
            + at(i, j + 1) * ((1.0 - s) * t)
            + at(i + 1, j + 1) * (s * t);
        // Convex combinations of clamped samples stay in [kappa1, kappa2].
        a
    }
}

/// The catalog of periodic coefficients, plus constant tensors such as `Â`.
#[derive(Clone, Debug, PartialEq)]
pub enum CoefficientField {
    Identity,
    /// `(p + q sin 2πy₁) I`
    Layered { p: f64, q: f64 },
    /// `(p + q sin 2πy₁) / (p + q cos 2πy₂) I`
    Separable { p: f64, q: f64 },
    Grid(Arc<GridCoefficient>),
    Constant(Sym2),
}

impl CoefficientField {
    pub fn layered(p: f64, q: f64) -> Result<Self> {
        check_pq(p, q)?;
        Ok(CoefficientField::Layered { p, q })
    }

    pub fn separable(p: f64, q: f64) -> Result<Self> {
        check_pq(p, q)?;
        Ok(CoefficientField::Separable { p, q })
    }

    pub fn constant(a: Sym2) -> Result<Self> {
        let [l1, _] = a.eigenvalues();
        if !(l1 > 0.0) {
            return invalid(format!("constant tensor {a:?} is not positive definite"));
        }
        Ok(CoefficientField::Constant(a))
    }

    /// `A(y)`; 1-periodic in both arguments for every catalog entry.
    #[inline]
    pub fn eval(&self, y: Point) -> Sym2 {
        match self {
            CoefficientField::Identity => Sym2::IDENTITY,
            CoefficientField::Layered { p, q } => Sym2::scalar(p + q * (2.0 * PI * y[0]).sin()),
            CoefficientField::Separable { p, q } => {
                Sym2::scalar((p + q * (2.0 * PI * y[0]).sin()) / (p + q * (2.0 * PI * y[1]).cos()))
            }
            CoefficientField::Grid(g) => g.eval(y),
            CoefficientField::Constant(a) => *a,
        }
    }

    /// `A(x/ε)` when `epsilon` is given, `A(x)` otherwise.
    #[inline]
    pub fn eval_scaled(&self, x: Point, epsilon: Option<f64>) -> Sym2 {
        match epsilon {
            Some(e) => self.eval([x[0] / e, x[1] / e]),
            None => self.eval(x),
        }
    }

    pub fn kappa1(&self) -> f64 {
        match self {
            CoefficientField::Identity => 1.0,
            CoefficientField::Layered { p, q } => p - q.abs(),
            CoefficientField::Separable { p, q } => (p - q.abs()) / (p + q.abs()),
            CoefficientField::Grid(g) => g.kappa1,
            CoefficientField::Constant(a) => a.eigenvalues()[0],
        }
    }

    pub fn kappa2(&self) -> f64 {
        match self {
            CoefficientField::Identity => 1.0,
            CoefficientField::Layered { p, q } => p + q.abs(),
            CoefficientField::Separable { p, q } => (p + q.abs()) / (p - q.abs()),
            CoefficientField::Grid(g) => g.kappa2,
            CoefficientField::Constant(a) => a.eigenvalues()[1],
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, CoefficientField::Identity | CoefficientField::Constant(_))
    }
}

fn check_pq(p: f64, q: f64) -> Result<()> {
    if !(p > q.abs()) {
        return invalid(format!("coefficient needs p > |q|, got p={p}, q={q}"));
    }
    Ok(())
}

impl fmt::Display for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientField::Identity => write!(f, "identity"),
            CoefficientField::Layered { p, q } => write!(f, "layered:{p},{q}"),
            CoefficientField::Separable { p, q } => write!(f, "separable:{p},{q}"),
            CoefficientField::Grid(g) => write!(f, "grid:{}x{}", g.n, g.n),
            CoefficientField::Constant(a) => write!(f, "constant:{},{},{}", a.0[0], a.0[1], a.0[2]),
        }
    }
}

impl FromStr for CoefficientField {
    type Err = Error;

    /// `identity`, `layered:p,q`, `separable:p,q`, `constant:a11,a12,a22`
    /// or `grid:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<f64>> {
            args.split(',')
                .map(|a| a.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidInput(format!("bad coefficient parameters in '{s}'")))
        };
        match kind {
            "identity" => Ok(CoefficientField::Identity),
            "layered" | "separable" => {
                let v = nums()?;
                if v.len() != 2 {
                    return invalid(format!("'{kind}' takes two parameters p,q: '{s}'"));
                }
                if kind == "layered" {
                    CoefficientField::layered(v[0], v[1])
                } else {
                    CoefficientField::separable(v[0], v[1])
                }
            }
            "constant" => {
                let v = nums()?;
                if v.len() != 3 {
                    return invalid(format!("'constant' takes a11,a12,a22: '{s}'"));
                }
                CoefficientField::constant(Sym2([v[0], v[1], v[2]]))
            }
            "grid" => Ok(CoefficientField::Grid(Arc::new(GridCoefficient::load(Path::new(args))?))),
            _ => invalid(format!("unknown coefficient '{s}'")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn catalog() -> Vec<CoefficientField> {
        let grid = GridCoefficient::parse("2 0.5 3\n1 0 1\n2 0.5 2\n3 0 0.5\n1 0.2 1.5\n").unwrap();
        vec![
            CoefficientField::Identity,
            CoefficientField::layered(2.0, 1.8).unwrap(),
            CoefficientField::separable(2.0, 1.8).unwrap(),
            CoefficientField::Grid(Arc::new(grid)),
        ]
    }

    #[test]
    fn ellipticity_symmetry_periodicity_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for coef in catalog() {
            let (k1, k2) = (coef.kappa1(), coef.kappa2());
            for _ in 0..500 {
                let y = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
                let xi = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let a = coef.eval(y);
                let q = a.form(xi, xi);
                let n2 = xi[0] * xi[0] + xi[1] * xi[1];
                assert!(q >= k1 * n2 * (1.0 - 1e-12) && q <= k2 * n2 * (1.0 + 1e-12), "{coef}");
                assert_eq!(a.get(0, 1), a.get(1, 0));
                let z = [rng.gen_range(-4..4) as f64, rng.gen_range(-4..4) as f64];
                let b = coef.eval([y[0] + z[0], y[1] + z[1]]);
                for k in 0..3 {
                    assert!((a.0[k] - b.0[k]).abs() < 1e-9, "{coef} not periodic");
                }
            }
        }
    }

    #[test]
    fn spectrum_clamp() {
        let a = Sym2([5.0, 1.0, 0.1]).clamp_spectrum(0.5, 3.0);
        let [l1, l2] = a.eigenvalues();
        assert_relative_eq!(l1, 0.5, epsilon = 1e-12);
        assert_relative_eq!(l2, 3.0, epsilon = 1e-12);
        let b = Sym2([1.0, 0.0, 2.0]);
        assert_eq!(b.clamp_spectrum(0.5, 3.0), b);
    }

    #[test]
    fn grid_file_roundtrip_and_errors() {
        let g = GridCoefficient::parse("2 0.5 3\n1 0 1\n2 0.5 2\n3 0 0.5\n1 0.2 1.5\n").unwrap();
        assert_eq!(GridCoefficient::parse(&g.to_text()).unwrap(), g);
        // Sample at a node reproduces the (clamped) sample.
        let c = CoefficientField::Grid(Arc::new(g.clone()));
        assert_eq!(c.eval([0.5, 0.0]), g.samples[1]);
        assert!(GridCoefficient::parse("2 0.5 3\n1 0 1\n").is_err());
        assert!(GridCoefficient::parse("x").is_err());
    }

    #[test]
    fn parse_ids() {
        assert_eq!("identity".parse::<CoefficientField>().unwrap(), CoefficientField::Identity);
        assert_eq!(
            "layered:2,1.8".parse::<CoefficientField>().unwrap(),
            CoefficientField::Layered { p: 2.0, q: 1.8 }
        );
        assert!("layered:1,2".parse::<CoefficientField>().is_err());
        assert!("bogus".parse::<CoefficientField>().is_err());
        let c = CoefficientField::separable(2.0, 1.8).unwrap();
        assert_eq!(c.to_string().parse::<CoefficientField>().unwrap(), c);
    }
}
