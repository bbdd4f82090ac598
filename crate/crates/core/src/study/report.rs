//! Rate fits over sweep rows and CSV, JSON and SVG output.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{Comparison, StudyConfig};
use super::rates::{fit_rate, FitVariable, RateFit};
use super::sweep::{ReportRow, SweepOutput};
use crate::error::{Error, Result};
use crate::mesh::BoundaryTag;

pub const CSV_HEADER: &str = "problem,comparison,norm,epsilon,h,error,backend_meta";

/// A fit over one slice of the rows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabeledFit {
    pub comparison: Comparison,
    pub norm: String,
    /// The quantity held fixed, e.g. `h=0.125`, or `none`.
    pub fixed: String,
    pub fit: RateFit,
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let set: BTreeSet<u64> = values.map(f64::to_bits).collect();
    let mut v: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn try_fit(points: Vec<(f64, f64)>, variable: FitVariable) -> Option<RateFit> {
    if points.len() < 3 || points.iter().any(|p| !(p.1 > 0.0)) {
        return None;
    }
    fit_rate(&points, variable).ok()
}

/// Fits per `(comparison, norm)`: against `ε` at each fixed `h`, against
/// `h` at each fixed `ε`, and against `√(ε/h)` over all coarse rows.
/// Fine-only comparisons are fitted against `ε`.
pub fn compute_fits(rows: &[ReportRow]) -> Vec<LabeledFit> {
    let mut keys: Vec<(Comparison, String)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(c, n)| *c == r.comparison && *n == r.norm) {
            keys.push((r.comparison, r.norm.clone()));
        }
    }
    let mut out = Vec::new();
    for (comparison, norm) in keys {
        let group: Vec<&ReportRow> = rows.iter().filter(|r| r.comparison == comparison && r.norm == norm).collect();
        let mut push = |fixed: String, fit: Option<RateFit>| {
            if let Some(fit) = fit {
                out.push(LabeledFit {
                    comparison,
                    norm: norm.clone(),
                    fixed,
                    fit,
                });
            }
        };
        if !comparison.uses_coarse() {
            let pts = group.iter().map(|r| (r.epsilon, r.error)).collect();
            push("none".into(), try_fit(pts, FitVariable::Epsilon));
            continue;
        }
        for h in distinct(group.iter().map(|r| r.h)) {
            let pts = group.iter().filter(|r| r.h == h).map(|r| (r.epsilon, r.error)).collect();
            push(format!("h={h}"), try_fit(pts, FitVariable::Epsilon));
        }
        for e in distinct(group.iter().map(|r| r.epsilon)) {
            let pts = group.iter().filter(|r| r.epsilon == e).map(|r| (r.h, r.error)).collect();
            push(format!("epsilon={e}"), try_fit(pts, FitVariable::H));
        }
        let ratios = distinct(group.iter().map(|r| (r.epsilon / r.h).sqrt()));
        if ratios.len() >= 3 {
            let pts = group.iter().map(|r| ((r.epsilon / r.h).sqrt(), r.error)).collect();
            push("none".into(), try_fit(pts, FitVariable::SqrtRatio));
        }
    }
    out
}

/// Descriptions of the regimes the rows sample.
pub fn regime_notes(rows: &[ReportRow]) -> Vec<String> {
    let mut notes = Vec::new();
    let coarse: Vec<&ReportRow> = rows.iter().filter(|r| r.comparison.uses_coarse()).collect();
    if coarse.iter().any(|r| r.h <= r.epsilon) {
        notes.push("some coarse meshes resolve the period (h <= epsilon); those rows are outside the multiscale regime".into());
    }
    for h in distinct(coarse.iter().map(|r| r.h)) {
        let eps = distinct(coarse.iter().filter(|r| r.h == h).map(|r| r.epsilon));
        if eps.len() >= 3 {
            notes.push(format!(
                "fixed h={h}: epsilon from {} to {}; the epsilon slope mixes sqrt(epsilon) with the resonance term sqrt(epsilon/h)",
                eps[0],
                eps[eps.len() - 1]
            ));
        }
    }
    for e in distinct(coarse.iter().map(|r| r.epsilon)) {
        let hs = distinct(coarse.iter().filter(|r| r.epsilon == e).map(|r| r.h));
        if hs.len() >= 3 {
            notes.push(format!(
                "fixed epsilon={e}: h from {} to {}; growth as h decreases toward epsilon is the resonance term",
                hs[0],
                hs[hs.len() - 1]
            ));
        }
    }
    let ratios = distinct(coarse.iter().map(|r| r.epsilon / r.h));
    for q in ratios {
        let levels = distinct(coarse.iter().filter(|r| ((r.epsilon / r.h) / q - 1.0).abs() < 1e-9).map(|r| r.h));
        if levels.len() >= 3 {
            notes.push(format!(
                "fixed ratio epsilon/h={q}: {} levels; a plateau is expected since the resonance term is constant",
                levels.len()
            ));
        }
    }
    if rows.iter().any(|r| !r.comparison.uses_coarse()) {
        notes.push("fine-only comparisons are fitted against epsilon at the fine resolution h_f = fine_ratio * epsilon".into());
    }
    notes
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:e},{:e},{:e},{}",
            r.problem, r.comparison, r.norm, r.epsilon, r.h, r.error, r.backend_meta
        );
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(Error::Config(format!("unexpected CSV header {other:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.splitn(7, ',').collect();
        let bad = |what: &str| Error::Config(format!("CSV line {}: bad {what}", i + 2));
        if f.len() != 7 {
            return Err(bad("column count"));
        }
        let num = |s: &str, what: &str| s.trim().parse::<f64>().map_err(|_| bad(what));
        rows.push(ReportRow {
            problem: f[0].to_string(),
            comparison: f[1].parse().map_err(|_| bad("comparison"))?,
            norm: f[2].to_string(),
            epsilon: num(f[3], "epsilon")?,
            h: num(f[4], "h")?,
            error: num(f[5], "error")?,
            backend_meta: f[6].to_string(),
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct Environment {
    pub package: &'static str,
    pub version: &'static str,
    pub os: &'static str,
    pub arch: &'static str,
    pub available_parallelism: usize,
}

impl Environment {
    pub fn current() -> Self {
        Environment {
            package: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            available_parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// The JSON summary document.
#[derive(Clone, Debug, Serialize)]
pub struct Summary<'a> {
    pub name: &'a str,
    pub config: Option<&'a StudyConfig>,
    pub rows: usize,
    pub fits: &'a [LabeledFit],
    /// Slope of `|u_ε - u₀|` on the contact boundary against `ε`.
    pub r_epsilon: Option<&'a RateFit>,
    pub failures: Vec<serde_json::Value>,
    pub regime_notes: Vec<String>,
    pub a_hat: Option<[f64; 3]>,
    pub cache: Option<serde_json::Value>,
    pub environment: Environment,
}

/// The contact-boundary fit of `u0_vs_fine`, if present.
pub fn r_epsilon_fit(fits: &[LabeledFit]) -> Option<&RateFit> {
    let norm = format!("boundary:{}", BoundaryTag::Contact.code());
    fits.iter()
        .find(|f| f.comparison == Comparison::U0VsFine && f.norm == norm)
        .map(|f| &f.fit)
}

/// The JSON summary for `rows` and their fits.
pub fn summary_json(rows: &[ReportRow], fits: &[LabeledFit], sweep: Option<(&StudyConfig, &SweepOutput)>) -> Result<String> {
    let summary = Summary {
        name: sweep.map_or("rates", |(c, _)| c.name.as_str()),
        config: sweep.map(|(c, _)| c),
        rows: rows.len(),
        fits,
        r_epsilon: r_epsilon_fit(fits),
        failures: sweep.map_or_else(Vec::new, |(_, s)| s.failures.iter().map(|f| serde_json::json!(f)).collect()),
        regime_notes: regime_notes(rows),
        a_hat: sweep.map(|(_, s)| s.a_hat),
        cache: sweep.map(|(_, s)| serde_json::json!(s.cache)),
        environment: Environment::current(),
    };
    Ok(serde_json::to_string_pretty(&summary)?)
}

/// Files written by [`emit_reports`].
#[derive(Clone, Debug, Default)]
pub struct EmittedFiles {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Write the CSV, the JSON summary and one SVG per comparison.
pub fn emit_reports(rows: &[ReportRow], fits: &[LabeledFit], out_dir: &Path, sweep: Option<(&StudyConfig, &SweepOutput)>) -> Result<EmittedFiles> {
    fs::create_dir_all(out_dir)?;
    let outputs = sweep.map(|(c, _)| c.output.clone()).unwrap_or_default();
    let csv = out_dir.join(&outputs.csv);
    fs::write(&csv, rows_to_csv(rows))?;

    let summary_path = out_dir.join(&outputs.summary);
    fs::write(&summary_path, summary_json(rows, fits, sweep)?)?;

    let mut plots = Vec::new();
    if outputs.plots {
        let mut comparisons: Vec<Comparison> = Vec::new();
        for r in rows {
            if !comparisons.contains(&r.comparison) {
                comparisons.push(r.comparison);
            }
        }
        for c in comparisons {
            let path = out_dir.join(format!("plot_{c}.svg"));
            fs::write(&path, svg_plot(rows, c))?;
            plots.push(path);
        }
    }
    Ok(EmittedFiles {
        csv,
        summary: summary_path,
        plots,
    })
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Log-log plot of one comparison with guide slopes 1/2, 1 and 2.
pub fn svg_plot(rows: &[ReportRow], comparison: Comparison) -> String {
    let rows: Vec<&ReportRow> = rows.iter().filter(|r| r.comparison == comparison && r.error > 0.0).collect();
    let n_eps = distinct(rows.iter().map(|r| r.epsilon)).len();
    let n_h = distinct(rows.iter().map(|r| r.h)).len();
    let against_h = comparison.uses_coarse() && n_h > n_eps;
    let (xlabel, series_key) = if against_h { ("h", "epsilon") } else { ("epsilon", "h") };
    let x_of = |r: &ReportRow| if against_h { r.h } else { r.epsilon };
    let key_of = |r: &ReportRow| match (comparison.uses_coarse(), against_h) {
        (false, _) => 0.0,
        (true, true) => r.epsilon,
        (true, false) => r.h,
    };

    let (w, h, pad) = (640.0, 480.0, 60.0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="16" text-anchor="middle">{comparison}</text>"#, w / 2.0);
    if rows.is_empty() {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">no positive errors</text>"#, w / 2.0, h / 2.0);
        s.push_str("</svg>\n");
        return s;
    }
    let lx: Vec<f64> = rows.iter().map(|r| x_of(r).log10()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.error.log10()).collect();
    let span = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let m = ((hi - lo) * 0.1).max(0.1);
        (lo - m, hi + m)
    };
    let (x0, x1) = span(&lx);
    let (y0, y1) = span(&ly);
    let px = |v: f64| pad + (v - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |v: f64| h - pad - (v - y0) / (y1 - y0) * (h - 2.0 * pad);
    let _ = writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    for d in (x0.ceil() as i32)..=(x1.floor() as i32) {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" font-size="11" text-anchor="middle">1e{d}</text>"#, px(d as f64), h - pad + 16.0);
    }
    for d in (y0.ceil() as i32)..=(y1.floor() as i32) {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">1e{d}</text>"#, pad - 4.0, py(d as f64) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{xlabel}</text>"#, w / 2.0, h - 16.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" font-size="13" transform="rotate(-90 16 {})" text-anchor="middle">error</text>"#, h / 2.0, h / 2.0);

    // Guides through the point with the smallest abscissa.
    let anchor = (0..rows.len()).min_by(|&a, &b| lx[a].total_cmp(&lx[b])).expect("rows nonempty");
    let (ax, ay) = (lx[anchor], ly[anchor]);
    for (label, slope) in [("1/2", 0.5), ("1", 1.0), ("2", 2.0)] {
        let end = x1;
        let (ex, ey) = (end, ay + slope * (end - ax));
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-dasharray="4 3"/><text x="{:.1}" y="{:.1}" font-size="11" fill="#666">slope {label}</text>"##,
            px(ax),
            py(ay),
            px(ex),
            py(ey),
            px(ex) - 40.0,
            py(ey) - 4.0
        );
    }

    let mut legend_y = pad + 16.0;
    let mut series = 0;
    let norms: Vec<String> = rows.iter().fold(Vec::new(), |mut v, r| {
        if !v.contains(&r.norm) {
            v.push(r.norm.clone());
        }
        v
    });
    for norm in &norms {
        for key in distinct(rows.iter().filter(|r| &r.norm == norm).map(|r| key_of(r))) {
            let mut pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| &r.norm == norm && key_of(r) == key)
                .map(|r| (x_of(r).log10(), r.error.log10()))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let color = PALETTE[series % PALETTE.len()];
            series += 1;
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.1},{:.1}", px(*x), py(*y))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
            for (x, y) in &pts {
                let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(*x), py(*y));
            }
            let label = if comparison.uses_coarse() { format!("{norm}, {series_key}={key}") } else { norm.clone() };
            let _ = writeln!(s, r#"<text x="{}" y="{legend_y:.1}" font-size="11" fill="{color}">{label}</text>"#, pad + 8.0);
            legend_y += 14.0;
        }
    }
    s.push_str("</svg>\n");
    s
}
