//! Least-squares rates on log-log data.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Abscissa of a rate fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FitVariable {
    #[serde(rename = "h")]
    H,
    #[serde(rename = "epsilon")]
    Epsilon,
    #[serde(rename = "sqrt(eps/h)")]
    SqrtRatio,
}

impl FitVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            FitVariable::H => "h",
            FitVariable::Epsilon => "epsilon",
            FitVariable::SqrtRatio => "sqrt(eps/h)",
        }
    }
}

impl fmt::Display for FitVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FitVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h" => Ok(FitVariable::H),
            "epsilon" | "eps" => Ok(FitVariable::Epsilon),
            "sqrt(eps/h)" => Ok(FitVariable::SqrtRatio),
            _ => invalid(format!("unknown fit variable '{s}'")),
        }
    }
}

/// `log(error) ≈ intercept + slope · log(value)`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub variable: FitVariable,
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl RateFit {
    /// Fitted error at `value`.
    pub fn predict(&self, value: f64) -> f64 {
        (self.intercept + self.slope * value.ln()).exp()
    }
}

/// Ordinary least squares on `(log value, log error)`.
pub fn fit_rate(points: &[(f64, f64)], variable: FitVariable) -> Result<RateFit> {
    if points.len() < 3 {
        return invalid(format!("rate fit needs at least 3 points, got {}", points.len()));
    }
    if let Some(p) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
        return invalid(format!("rate fit needs positive finite data, got ({}, {})", p.0, p.1));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 1e-24 * n) {
        return invalid(format!("rate fit needs distinct {variable} values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy <= 1e-300 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(RateFit {
        variable,
        points: points.to_vec(),
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let hs = [0.25, 0.125, 0.0625];
        let lin: Vec<_> = hs.iter().map(|&h| (h, 3.0 * h)).collect();
        let f = fit_rate(&lin, FitVariable::H).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12 && (f.r_squared - 1.0).abs() < 1e-12);
        assert!((f.predict(0.5) - 1.5).abs() < 1e-12);
        let quad: Vec<_> = hs.iter().map(|&h| (h, h * h)).collect();
        assert!((fit_rate(&quad, FitVariable::H).unwrap().slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_rate(&[(0.1, 1.0), (0.2, 2.0)], FitVariable::H).is_err());
        assert!(fit_rate(&[(0.1, 1.0), (0.2, 0.0), (0.3, 1.0)], FitVariable::H).is_err());
        assert!(fit_rate(&[(-0.1, 1.0), (0.2, 1.0), (0.3, 1.0)], FitVariable::H).is_err());
        assert!(fit_rate(&[(0.1, 1.0), (0.1, 2.0), (0.1, 3.0)], FitVariable::H).is_err());
    }

    #[test]
    fn variable_names_round_trip() {
        for v in [FitVariable::H, FitVariable::Epsilon, FitVariable::SqrtRatio] {
            assert_eq!(v.as_str().parse::<FitVariable>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.as_str()));
        }
    }
}
