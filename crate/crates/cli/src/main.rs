use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::json;

use msfem::basis::build_ms_basis;
use msfem::cell::solve_cell_problems;
use msfem::expansion::{error_norms, interpolate, NormContext};
use msfem::problems::{solve, Backend, BackendKind, ProblemKind, SolveOptions};
use msfem::solver::CgOptions;
use msfem::study::{
    compute_fits, emit_reports, lemma_triangle_experiment, parse_csv, run_sweep, summary_json, Manufactured, Rational,
    StudyConfig,
};
use msfem::{CoefficientField, Error, Mesh, Rect, Result};

#[derive(Parser)]
#[command(name = "msfem", version, about = "Multiscale finite element convergence studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cell problems and write the correctors and Â as JSON.
    Cell {
        #[arg(long)]
        coef: String,
        /// Cell subdivisions per side.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one problem with one backend and print a JSON summary.
    Solve {
        #[arg(long)]
        problem: ProblemKind,
        #[arg(long)]
        eps: Rational,
        /// Coarse subdivisions per side (multiscale backend).
        #[arg(long)]
        coarse: usize,
        #[arg(long, default_value = "1/16")]
        fine_ratio: Rational,
        #[arg(long, default_value = "fine")]
        backend: BackendKind,
        #[arg(long, default_value = "layered:2,1.8")]
        coef: String,
        /// Manufactured homogenized solution: bilinear or sine.
        #[arg(long, default_value = "bilinear")]
        solution: String,
        /// Side codes bottom, right, top, left, e.g. NNND.
        #[arg(long)]
        boundary: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value = "nonmonotone")]
        beta: String,
        #[arg(long, default_value_t = 1e-10)]
        cg_tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a study configuration and write CSV, JSON and SVG reports.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Fit rates to a study CSV.
    Rates {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-triangle experiment for the first-order expansion.
    Lemma {
        #[arg(long)]
        coef: String,
        /// Comma-separated epsilons, e.g. 1/16,1/32,1/64.
        #[arg(long)]
        eps_list: String,
        #[arg(long)]
        out: PathBuf,
        /// Linear boundary data `c + a x + b y` as c,a,b.
        #[arg(long, default_value = "0,1,0")]
        w0: String,
        /// Fine subdivisions per period.
        #[arg(long, default_value_t = 8)]
        per_period: usize,
    },
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn write_json(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Cell { coef, n, out } => {
            let coef: CoefficientField = coef.parse()?;
            let cell = solve_cell_problems(&coef, n)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            cell.save(&out)?;
            println!("{}", json!({"coefficient": cell.coefficient, "n_cell": n, "a_hat": cell.a_hat.0, "asymmetry": cell.asymmetry}));
        }
        Command::Solve {
            problem,
            eps,
            coarse,
            fine_ratio,
            backend,
            coef,
            solution,
            boundary,
            alpha,
            beta,
            cg_tol,
            out,
        } => {
            let mut cfg = StudyConfig::new(problem, &coef, vec![eps.clone()], vec![coarse]);
            cfg.fine_ratio = fine_ratio;
            cfg.solution = serde_json::from_value::<Manufactured>(json!(solution))
                .map_err(|_| config_err(format!("unknown solution '{solution}'")))?;
            cfg.boundary = boundary;
            cfg.alpha = alpha;
            cfg.beta = beta;
            cfg.cg_tol = cg_tol;
            cfg.validate()?;
            let cell = Arc::new(solve_cell_problems(&cfg.coefficient_field()?, cfg.cell_resolution()?)?);
            let spec = cfg.problem_spec(&eps, cell.a_hat)?;
            let nf = cfg.fine_n(&eps)?;
            let backend = match backend {
                BackendKind::Fine => Backend::Fine { n: nf },
                BackendKind::Homogenized => Backend::Homogenized { n: nf, cell: cell.clone() },
                BackendKind::MsFem => {
                    let mesh = Arc::new(Mesh::structured(Rect::UNIT, coarse, spec.tags)?);
                    Backend::MsFem {
                        basis: Arc::new(build_ms_basis(mesh, &spec.coefficient, eps.value, Some(nf / coarse))?),
                    }
                }
            };
            let opts = SolveOptions {
                cg: CgOptions::with_tol(cg_tol),
                ..Default::default()
            };
            let result = solve(&spec, &backend, &opts)?;
            let u0 = interpolate(&cfg.solution.function(), result.field.mesh.clone());
            let vs_u0 = error_norms(&result.field, &u0, &NormContext::default())?;
            let text = serde_json::to_string_pretty(&json!({
                "problem": problem,
                "backend": result.backend,
                "epsilon": eps.value,
                "fine_n": nf,
                "coarse_n": coarse,
                "a_hat": cell.a_hat.0,
                "dofs": result.dofs.values.len(),
                "iterations": result.iterations,
                "cg_iterations": result.cg_iterations,
                "contraction_observed": result.contraction_observed,
                "feasibility": result.feasibility,
                "vs_manufactured_u0": {"h1": vs_u0.h1_semi, "l2": vs_u0.l2},
                "notes": result.notes,
            }))?;
            write_json(out.as_deref(), &text)?;
        }
        Command::Sweep { config, out_dir, workers } => {
            let text = fs::read_to_string(&config).map_err(|e| config_err(format!("{}: {e}", config.display())))?;
            let mut cfg = StudyConfig::from_json(&text)?;
            if let Some(w) = workers {
                cfg.workers = w;
                cfg.validate()?;
            }
            let output = run_sweep(&cfg)?;
            let fits = compute_fits(&output.rows);
            let files = emit_reports(&output.rows, &fits, &out_dir, Some((&cfg, &output)))?;
            log::info!("wrote {} and {}", files.csv.display(), files.summary.display());
            if let Some(f) = output.failures.first() {
                let failed = output.failures.len();
                return Err(if output.failures.iter().all(|f| !f.numerical) {
                    config_err(format!("{failed} sweep entries failed; first: {}", f.message))
                } else {
                    Error::StudyFailed(format!("{failed} of them; first: {}", f.message))
                });
            }
        }
        Command::Rates { input, out } => {
            let text = fs::read_to_string(&input).map_err(|e| config_err(format!("{}: {e}", input.display())))?;
            let rows = parse_csv(&text)?;
            let fits = compute_fits(&rows);
            write_json(Some(&out), &summary_json(&rows, &fits, None)?)?;
        }
        Command::Lemma {
            coef,
            eps_list,
            out,
            w0,
            per_period,
        } => {
            let coef: CoefficientField = coef.parse()?;
            let eps: Vec<f64> = eps_list
                .split(',')
                .map(|s| s.parse::<Rational>().map(|r| r.value))
                .collect::<Result<_>>()?;
            let w: Vec<f64> = w0
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| config_err(format!("bad w0 '{w0}'"))))
                .collect::<Result<_>>()?;
            let w: [f64; 3] = w.try_into().map_err(|_| config_err("w0 takes three numbers c,a,b"))?;
            let report = lemma_triangle_experiment(&coef, &eps, w, per_period)?;
            write_json(Some(&out), &serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
