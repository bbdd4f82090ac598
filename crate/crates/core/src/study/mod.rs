//! Convergence studies: `(ε, h)` sweeps, rate fits, the single-triangle
//! experiment and report output.

pub mod config;
pub mod lemma;
pub mod rates;
pub mod report;
pub mod sweep;

pub use config::{Comparison, Manufactured, Rational, StudyConfig};
pub use lemma::{lemma_triangle_experiment, LemmaReport};
pub use rates::{fit_rate, FitVariable, RateFit};
pub use report::{compute_fits, emit_reports, parse_csv, rows_to_csv, summary_json, LabeledFit};
pub use sweep::{run_sweep, ArtifactCache, ReportRow, SweepOutput};
