//! Study configuration documents and the manufactured-solution catalog.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::coefficient::{CoefficientField, Sym2};
use crate::error::{Error, Result};
use crate::field::{Sampler, SmoothFunction};
use crate::mesh::{BoundaryTag, Rect, SideTags};
use crate::problems::{BoundaryLaw, ProblemKind, ProblemSpec, RobinWeight};

/// A positive number written as `"p/q"` or a decimal.
#[derive(Clone, Debug, PartialEq)]
pub struct Rational {
    pub text: String,
    pub value: f64,
}

impl Rational {
    pub fn new(num: u64, den: u64) -> Self {
        Rational {
            text: format!("{num}/{den}"),
            value: num as f64 / den as f64,
        }
    }

    /// `round(1/value)` when the reciprocal is an integer.
    pub fn reciprocal_integer(&self) -> Option<usize> {
        let r = 1.0 / self.value;
        let k = r.round();
        ((r - k).abs() <= 1e-9 * r && k >= 1.0).then_some(k as usize)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl FromStr for Rational {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("'{s}' is not a positive rational"));
        let value = match s.split_once('/') {
            Some((p, q)) => {
                let p: f64 = p.trim().parse().map_err(|_| bad())?;
                let q: f64 = q.trim().parse().map_err(|_| bad())?;
                p / q
            }
            None => s.parse::<f64>().map_err(|_| bad())?,
        };
        if !(value > 0.0 && value.is_finite()) {
            return Err(bad());
        }
        Ok(Rational { text: s.to_string(), value })
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Text(t) => t,
            Raw::Number(v) => v.to_string(),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Which two fields a report row compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// Multiscale solution against the fine reference.
    MsVsFine,
    /// Homogenized solution against the multiscale solution.
    U0VsMs,
    /// First-order expansion against the fine reference.
    U1VsFine,
    /// Homogenized solution against the fine reference.
    U0VsFine,
}

impl Comparison {
    pub const ALL: [Comparison; 4] = [
        Comparison::MsVsFine,
        Comparison::U0VsMs,
        Comparison::U1VsFine,
        Comparison::U0VsFine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Comparison::MsVsFine => "ms_vs_fine",
            Comparison::U0VsMs => "u0_vs_ms",
            Comparison::U1VsFine => "u1_vs_fine",
            Comparison::U0VsFine => "u0_vs_fine",
        }
    }

    /// Whether the comparison involves the coarse mesh.
    pub fn uses_coarse(self) -> bool {
        matches!(self, Comparison::MsVsFine | Comparison::U0VsMs)
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Comparison {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Comparison::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown comparison '{s}'")))
    }
}

/// Homogenized solutions with closed-form derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Manufactured {
    /// `x (1 + y)`, zero on the left side.
    Bilinear,
    /// `sin(πx) (1 + y/2)`, zero on the left and right sides.
    Sine,
}

impl Manufactured {
    pub fn function(self) -> SmoothFunction {
        match self {
            Manufactured::Bilinear => SmoothFunction::new(
                "x(1+y)",
                |p| p[0] * (1.0 + p[1]),
                |p| [1.0 + p[1], p[0]],
                |_| Sym2([0.0, 1.0, 0.0]),
            ),
            Manufactured::Sine => SmoothFunction::new(
                "sin(pi x)(1+y/2)",
                |p| (PI * p[0]).sin() * (1.0 + 0.5 * p[1]),
                |p| [PI * (PI * p[0]).cos() * (1.0 + 0.5 * p[1]), 0.5 * (PI * p[0]).sin()],
                |p| {
                    Sym2([
                        -PI * PI * (PI * p[0]).sin() * (1.0 + 0.5 * p[1]),
                        0.5 * PI * (PI * p[0]).cos(),
                        0.0,
                    ])
                },
            ),
        }
    }

    /// Default side tags for a problem kind.
    pub fn default_tags(self, kind: ProblemKind) -> SideTags {
        use BoundaryTag::*;
        match (self, kind) {
            (_, ProblemKind::Robin) => SideTags::uniform(Neumann),
            (Manufactured::Bilinear, ProblemKind::Mixed) => SideTags {
                bottom: Neumann,
                right: Neumann,
                top: Neumann,
                left: Dirichlet,
            },
            (Manufactured::Bilinear, ProblemKind::Hemivariational) => SideTags {
                bottom: Contact,
                right: Neumann,
                top: Neumann,
                left: Dirichlet,
            },
            (Manufactured::Sine, ProblemKind::Mixed) => SideTags {
                bottom: Neumann,
                right: Dirichlet,
                top: Neumann,
                left: Dirichlet,
            },
            (Manufactured::Sine, ProblemKind::Hemivariational) => SideTags {
                bottom: Contact,
                right: Dirichlet,
                top: Neumann,
                left: Dirichlet,
            },
        }
    }
}

/// Side tags from four codes in the order bottom, right, top, left,
/// e.g. `"NDND"`.
pub fn parse_side_tags(codes: &str) -> Result<SideTags> {
    let tags: Vec<BoundaryTag> = codes
        .chars()
        .map(|c| BoundaryTag::from_code(&c.to_string()))
        .collect::<Result<_>>()
        .map_err(|e| Error::Config(e.to_string()))?;
    if tags.len() != 4 {
        return Err(Error::Config(format!("boundary needs four side codes, got '{codes}'")));
    }
    Ok(SideTags {
        bottom: tags[0],
        right: tags[1],
        top: tags[2],
        left: tags[3],
    })
}

fn default_name() -> String {
    "study".into()
}
fn default_solution() -> Manufactured {
    Manufactured::Bilinear
}
fn default_fine_ratio() -> Rational {
    Rational::new(1, 16)
}
fn default_comparisons() -> Vec<Comparison> {
    vec![Comparison::MsVsFine]
}
fn default_norms() -> Vec<String> {
    vec!["h1".into(), "l2".into()]
}
fn default_alpha() -> f64 {
    1.0
}
fn default_beta() -> String {
    "nonmonotone".into()
}
fn default_cg_tol() -> f64 {
    1e-10
}
fn default_true() -> bool {
    true
}
fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default = "OutputPaths::default_csv")]
    pub csv: String,
    #[serde(default = "OutputPaths::default_summary")]
    pub summary: String,
    #[serde(default = "default_true")]
    pub plots: bool,
}

impl OutputPaths {
    fn default_csv() -> String {
        "rows.csv".into()
    }
    fn default_summary() -> String {
        "summary.json".into()
    }
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths {
            csv: Self::default_csv(),
            summary: Self::default_summary(),
            plots: true,
        }
    }
}

/// A convergence study: one problem, a grid of `(ε, n)` pairs and the
/// comparisons and norms to report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub problem: ProblemKind,
    #[serde(default = "default_solution")]
    pub solution: Manufactured,
    /// Side codes bottom, right, top, left; defaults per solution.
    #[serde(default)]
    pub boundary: Option<String>,
    pub coefficient: String,
    pub epsilons: Vec<Rational>,
    /// Coarse subdivisions per side.
    pub coarse: Vec<usize>,
    /// Explicit `(ε, n)` pairs replacing the product of the two lists.
    #[serde(default)]
    pub pairs: Option<Vec<(Rational, usize)>>,
    /// Fine mesh size as a fraction of `ε`.
    #[serde(default = "default_fine_ratio")]
    pub fine_ratio: Rational,
    /// Cell resolution; defaults to the fine points per period.
    #[serde(default)]
    pub cell_n: Option<usize>,
    #[serde(default = "default_comparisons")]
    pub comparisons: Vec<Comparison>,
    /// `h1`, `l2`, `energy` or `boundary:<D|N|C>`.
    #[serde(default = "default_norms")]
    pub norms: Vec<String>,
    /// Constant Robin weight.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Contact law of the hemivariational problem.
    #[serde(default = "default_beta")]
    pub beta: String,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub cache: bool,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub output: OutputPaths,
}

impl StudyConfig {
    /// A config with defaults for everything but the grid.
    pub fn new(problem: ProblemKind, coefficient: &str, epsilons: Vec<Rational>, coarse: Vec<usize>) -> Self {
        StudyConfig {
            name: default_name(),
            problem,
            solution: default_solution(),
            boundary: None,
            coefficient: coefficient.into(),
            epsilons,
            coarse,
            pairs: None,
            fine_ratio: default_fine_ratio(),
            cell_n: None,
            comparisons: default_comparisons(),
            norms: default_norms(),
            alpha: default_alpha(),
            beta: default_beta(),
            cg_tol: default_cg_tol(),
            seed: 0,
            cache: true,
            workers: 1,
            output: OutputPaths::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn coefficient_field(&self) -> Result<CoefficientField> {
        self.coefficient.parse().map_err(|e: Error| Error::Config(e.to_string()))
    }

    pub fn tags(&self) -> Result<SideTags> {
        match &self.boundary {
            Some(codes) => parse_side_tags(codes),
            None => Ok(self.solution.default_tags(self.problem)),
        }
    }

    /// Fine subdivisions per period, `1 / fine_ratio`.
    pub fn per_period(&self) -> Result<usize> {
        self.fine_ratio
            .reciprocal_integer()
            .ok_or_else(|| Error::Config(format!("fine ratio {} must be 1/k for an integer k", self.fine_ratio)))
    }

    pub fn cell_resolution(&self) -> Result<usize> {
        Ok(self.cell_n.unwrap_or(self.per_period()?))
    }

    /// Fine subdivisions per side for `ε`.
    pub fn fine_n(&self, epsilon: &Rational) -> Result<usize> {
        let periods = epsilon
            .reciprocal_integer()
            .ok_or_else(|| Error::Config(format!("epsilon {epsilon} must be 1/k for an integer k")))?;
        Ok(periods * self.per_period()?)
    }

    /// The `(ε, n)` grid in sweep order.
    pub fn grid(&self) -> Vec<(Rational, usize)> {
        match &self.pairs {
            Some(p) => p.clone(),
            None => self
                .epsilons
                .iter()
                .flat_map(|e| self.coarse.iter().map(move |&n| (e.clone(), n)))
                .collect(),
        }
    }

    /// Distinct epsilons in first-appearance order.
    pub fn epsilon_list(&self) -> Vec<Rational> {
        let mut out: Vec<Rational> = Vec::new();
        for (e, _) in self.grid() {
            if !out.iter().any(|o| o.text == e.text) {
                out.push(e);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.epsilons.is_empty() || self.coarse.is_empty() {
            return cfg("epsilon and coarse lists must be nonempty".into());
        }
        if self.pairs.as_ref().is_some_and(|p| p.is_empty()) {
            return cfg("pairs must be nonempty when given".into());
        }
        if self.fine_ratio.value > 0.125 + 1e-15 {
            return cfg(format!("fine ratio {} exceeds 1/8", self.fine_ratio));
        }
        if self.comparisons.is_empty() || self.norms.is_empty() {
            return cfg("comparisons and norms must be nonempty".into());
        }
        for norm in &self.norms {
            let ok = matches!(norm.as_str(), "h1" | "l2" | "energy")
                || norm.strip_prefix("boundary:").is_some_and(|c| BoundaryTag::from_code(c).is_ok());
            if !ok {
                return cfg(format!("unknown norm '{norm}'"));
            }
        }
        if self.workers == 0 {
            return cfg("workers must be at least 1".into());
        }
        if !(self.cg_tol > 0.0 && self.cg_tol < 1.0) {
            return cfg(format!("cg_tol must lie in (0, 1), got {}", self.cg_tol));
        }
        self.coefficient_field()?;
        let tags = self.tags()?;
        let spec = self.problem_spec(&self.epsilons[0], Sym2::IDENTITY)?;
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        // The catalog solution must satisfy the homogeneous Dirichlet data.
        let u0 = self.solution.function();
        let rect = Rect::UNIT;
        for (side, tag) in tags.in_order().into_iter().enumerate() {
            if tag != BoundaryTag::Dirichlet {
                continue;
            }
            for k in 0..=8 {
                let t = k as f64 / 8.0;
                let p = [[t, rect.y0], [rect.x1, t], [t, rect.y1], [rect.x0, t]][side];
                if u0.value(p).abs() > 1e-12 {
                    return cfg(format!("solution '{}' does not vanish on Dirichlet side {side}", u0.name));
                }
            }
        }
        let cell_n = self.cell_resolution()?;
        if cell_n < crate::cell::MIN_CELL_N {
            return cfg(format!("cell resolution {cell_n} below {}", crate::cell::MIN_CELL_N));
        }
        for (e, n) in self.grid() {
            let nf = self.fine_n(&e)?;
            if n == 0 || nf % n != 0 || nf / n < 2 {
                return cfg(format!("coarse n={n} does not divide the fine grid {nf} for epsilon {e} into at least 2 per element"));
            }
        }
        Ok(())
    }

    /// Problem data for `ε` with homogenized tensor `a_hat`.
    pub fn problem_spec(&self, epsilon: &Rational, a_hat: Sym2) -> Result<ProblemSpec> {
        let mut spec = ProblemSpec::new(self.problem, self.tags()?, self.coefficient_field()?, epsilon.value);
        match self.problem {
            ProblemKind::Robin => {
                if !(self.alpha > 0.0) {
                    return Err(Error::Config(format!("Robin weight must be positive, got {}", self.alpha)));
                }
                spec = spec.with_alpha(RobinWeight::constant(self.alpha));
            }
            ProblemKind::Hemivariational => {
                let beta: BoundaryLaw = self.beta.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
                spec = spec.with_beta(beta);
            }
            ProblemKind::Mixed => {}
        }
        Ok(spec.manufactured(&self.solution.function(), a_hat))
    }
}
