//! Sweeps over `(ε, h)` grids with a content-addressed artifact cache.

use std::any::Any;
use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{Comparison, Rational, StudyConfig};
use crate::basis::build_ms_basis;
use crate::cell::{solve_cell_problems, CellSolution};
use crate::error::{Error, Result};
use crate::expansion::{error_norms, first_order_expansion, interpolate, ErrorReport, NormContext};
use crate::field::FeField;
use crate::mesh::{Mesh, Rect};
use crate::problems::{solve, Backend, ProblemKind, SolveOptions};
use crate::solver::CgOptions;

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub problem: String,
    pub comparison: Comparison,
    pub norm: String,
    pub epsilon: f64,
    pub h: f64,
    pub error: f64,
    pub backend_meta: String,
}

/// A grid entry whose computation failed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowFailure {
    pub epsilon: f64,
    pub h: Option<f64>,
    pub message: String,
    /// Numerical failure as opposed to a configuration error.
    pub numerical: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepOutput {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<RowFailure>,
    pub cache: CacheStats,
    /// Homogenized tensor used for the manufactured data.
    pub a_hat: [f64; 3],
}

type Slot = Arc<Mutex<Option<Arc<dyn Any + Send + Sync>>>>;

/// Artifacts keyed by the SHA-256 of a JSON fragment describing their
/// inputs. Concurrent requests for one key compute it once.
pub struct ArtifactCache {
    enabled: bool,
    slots: Mutex<HashMap<String, Slot>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl ArtifactCache {
    pub fn new(enabled: bool) -> Self {
        ArtifactCache {
            enabled,
            slots: Mutex::new(HashMap::new()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn key(fragment: &serde_json::Value) -> String {
        hex::encode(Sha256::digest(fragment.to_string().as_bytes()))
    }

    pub fn get_or_compute<T: Send + Sync + 'static>(
        &self,
        fragment: &serde_json::Value,
        compute: impl FnOnce() -> Result<T>,
    ) -> Result<Arc<T>> {
        if !self.enabled {
            self.misses.fetch_add(1, Ordering::Relaxed);
            return compute().map(Arc::new);
        }
        let key = Self::key(fragment);
        let slot = self.slots.lock().expect("cache poisoned").entry(key.clone()).or_default().clone();
        let mut guard = slot.lock().expect("cache slot poisoned");
        if let Some(v) = guard.as_ref() {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return v
                .clone()
                .downcast::<T>()
                .map_err(|_| Error::InvalidInput(format!("cache entry {key} has an unexpected type")));
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let value = Arc::new(compute()?);
        *guard = Some(value.clone());
        Ok(value)
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }
}

enum Task {
    Coarse { epsilon: Rational, n: usize },
    Fine { epsilon: Rational },
}

struct Context<'a> {
    cfg: &'a StudyConfig,
    cache: &'a ArtifactCache,
    cell: Arc<CellSolution>,
    opts: SolveOptions,
}

impl Context<'_> {
    fn fragment(&self, kind: &str, epsilon: &Rational, extra: serde_json::Value) -> serde_json::Value {
        let c = self.cfg;
        json!({
            "kind": kind,
            "problem": c.problem,
            "solution": c.solution,
            "boundary": c.boundary,
            "coefficient": c.coefficient,
            "epsilon": epsilon.value,
            "fine_ratio": c.fine_ratio.value,
            "cell_n": self.cell.n_cell,
            "alpha": c.alpha,
            "beta": c.beta,
            "cg_tol": c.cg_tol,
            "extra": extra,
        })
    }

    fn fine(&self, epsilon: &Rational) -> Result<Arc<FeField>> {
        let nf = self.cfg.fine_n(epsilon)?;
        self.cache.get_or_compute(&self.fragment("fine", epsilon, json!(nf)), || {
            let spec = self.cfg.problem_spec(epsilon, self.cell.a_hat)?;
            log::info!("fine solve: epsilon={epsilon}, n={nf}");
            Ok(solve(&spec, &Backend::Fine { n: nf }, &self.opts)?.field)
        })
    }

    /// `u₀` on the fine grid: the manufactured solution, or the homogenized
    /// solve for the hemivariational problem whose contact law breaks it.
    fn homogenized(&self, epsilon: &Rational) -> Result<Arc<FeField>> {
        let nf = self.cfg.fine_n(epsilon)?;
        self.cache.get_or_compute(&self.fragment("u0", epsilon, json!(nf)), || {
            let spec = self.cfg.problem_spec(epsilon, self.cell.a_hat)?;
            if self.cfg.problem == ProblemKind::Hemivariational {
                let backend = Backend::Homogenized { n: nf, cell: self.cell.clone() };
                Ok(solve(&spec, &backend, &self.opts)?.field)
            } else {
                let mesh = Arc::new(Mesh::structured(Rect::UNIT, nf, spec.tags)?);
                Ok(interpolate(&self.cfg.solution.function(), mesh))
            }
        })
    }

    fn multiscale(&self, epsilon: &Rational, n: usize) -> Result<Arc<FeField>> {
        let nf = self.cfg.fine_n(epsilon)?;
        let m = nf / n;
        self.cache.get_or_compute(&self.fragment("msfem", epsilon, json!([n, m])), || {
            let spec = self.cfg.problem_spec(epsilon, self.cell.a_hat)?;
            log::info!("multiscale solve: epsilon={epsilon}, n={n}, m={m}");
            let coarse = Arc::new(Mesh::structured(Rect::UNIT, n, spec.tags)?);
            let basis = Arc::new(build_ms_basis(coarse, &spec.coefficient, epsilon.value, Some(m))?);
            Ok(solve(&spec, &Backend::MsFem { basis }, &self.opts)?.field)
        })
    }

    fn expansion(&self, epsilon: &Rational) -> Result<Arc<FeField>> {
        let nf = self.cfg.fine_n(epsilon)?;
        self.cache.get_or_compute(&self.fragment("u1", epsilon, json!(nf)), || {
            let u0 = self.homogenized(epsilon)?;
            let mesh = u0.mesh.clone();
            if self.cfg.problem == ProblemKind::Hemivariational {
                first_order_expansion(&*u0, &self.cell, epsilon.value, mesh)
            } else {
                first_order_expansion(&self.cfg.solution.function(), &self.cell, epsilon.value, mesh)
            }
        })
    }

    fn report(&self, a: &FeField, b: &FeField, epsilon: &Rational) -> Result<ErrorReport> {
        let coef = self.cfg.coefficient_field()?;
        let alpha = self.cfg.alpha;
        let robin = move |_: crate::mesh::Point| alpha;
        let ctx = NormContext {
            coefficient: Some(&coef),
            epsilon: Some(epsilon.value),
            robin: (self.cfg.problem == ProblemKind::Robin).then_some(&robin as &dyn Fn(crate::mesh::Point) -> f64),
        };
        error_norms(a, b, &ctx)
    }

    fn rows(&self, comparison: Comparison, report: &ErrorReport, epsilon: &Rational, h: f64, meta: &str) -> Vec<ReportRow> {
        self.cfg
            .norms
            .iter()
            .filter_map(|norm| {
                report.norm(norm).map(|error| ReportRow {
                    problem: self.cfg.problem.to_string(),
                    comparison,
                    norm: norm.clone(),
                    epsilon: epsilon.value,
                    h,
                    error,
                    backend_meta: meta.to_string(),
                })
            })
            .collect()
    }

    fn run(&self, task: &Task) -> Result<Vec<ReportRow>> {
        let mut out = Vec::new();
        match task {
            Task::Coarse { epsilon, n } => {
                let nf = self.cfg.fine_n(epsilon)?;
                let meta = format!("n={n};m={};nf={nf};cell={};cg_tol={:e}", nf / n, self.cell.n_cell, self.cfg.cg_tol);
                let h = 1.0 / *n as f64;
                let ms = self.multiscale(epsilon, *n)?;
                for &c in self.cfg.comparisons.iter().filter(|c| c.uses_coarse()) {
                    let other = match c {
                        Comparison::MsVsFine => self.fine(epsilon)?,
                        _ => self.homogenized(epsilon)?,
                    };
                    let report = self.report(&ms, &other, epsilon)?;
                    out.extend(self.rows(c, &report, epsilon, h, &meta));
                }
            }
            Task::Fine { epsilon } => {
                let nf = self.cfg.fine_n(epsilon)?;
                let meta = format!("nf={nf};cell={};cg_tol={:e}", self.cell.n_cell, self.cfg.cg_tol);
                let h = 1.0 / nf as f64;
                for &c in self.cfg.comparisons.iter().filter(|c| !c.uses_coarse()) {
                    let fine = self.fine(epsilon)?;
                    let other = match c {
                        Comparison::U1VsFine => self.expansion(epsilon)?,
                        _ => self.homogenized(epsilon)?,
                    };
                    let report = self.report(&other, &fine, epsilon)?;
                    out.extend(self.rows(c, &report, epsilon, h, &meta));
                }
            }
        }
        Ok(out)
    }
}

/// Cell problem for a study, cached across calls with the same cache.
pub fn study_cell(cfg: &StudyConfig, cache: &ArtifactCache) -> Result<Arc<CellSolution>> {
    let n = cfg.cell_resolution()?;
    let coef = cfg.coefficient_field()?;
    cache.get_or_compute(&json!({"kind": "cell", "coefficient": cfg.coefficient, "n": n}), || {
        solve_cell_problems(&coef, n)
    })
}

/// Run every grid entry of `cfg`; failures are recorded and the sweep
/// continues.
pub fn run_sweep(cfg: &StudyConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let cache = ArtifactCache::new(cfg.cache);
    run_sweep_with(cfg, &cache)
}

/// [`run_sweep`] with a caller-owned cache.
pub fn run_sweep_with(cfg: &StudyConfig, cache: &ArtifactCache) -> Result<SweepOutput> {
    let cell = study_cell(cfg, cache)?;
    let ctx = Context {
        cfg,
        cache,
        cell: cell.clone(),
        opts: SolveOptions {
            cg: CgOptions::with_tol(cfg.cg_tol),
            ..Default::default()
        },
    };
    let mut tasks: Vec<Task> = Vec::new();
    if cfg.comparisons.iter().any(|c| c.uses_coarse()) {
        tasks.extend(cfg.grid().into_iter().map(|(epsilon, n)| Task::Coarse { epsilon, n }));
    }
    if cfg.comparisons.iter().any(|c| !c.uses_coarse()) {
        tasks.extend(cfg.epsilon_list().into_iter().map(|epsilon| Task::Fine { epsilon }));
    }

    let results: Vec<Mutex<Option<Result<Vec<ReportRow>>>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.workers.min(tasks.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let r = ctx.run(&tasks[i]);
                *results[i].lock().expect("result slot poisoned") = Some(r);
            });
        }
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (task, slot) in tasks.iter().zip(results) {
        match slot.into_inner().expect("result slot poisoned").expect("every task ran") {
            Ok(r) => rows.extend(r),
            Err(err) => {
                let (epsilon, h) = match task {
                    Task::Coarse { epsilon, n } => (epsilon.value, Some(1.0 / *n as f64)),
                    Task::Fine { epsilon } => (epsilon.value, None),
                };
                log::error!("sweep entry epsilon={epsilon} h={h:?} failed: {err}");
                failures.push(RowFailure {
                    epsilon,
                    h,
                    numerical: !err.is_config(),
                    message: err.to_string(),
                });
            }
        }
    }
    Ok(SweepOutput {
        rows,
        failures,
        cache: cache.stats(),
        a_hat: cell.a_hat.0,
    })
}
