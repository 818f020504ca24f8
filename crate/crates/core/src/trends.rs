//! Day-indexed trend curves for expected availability and the standardized
//! proximal effect.
//!
//! A trend is elicited through at most three numbers: the average over the
//! study, the value on day 1, and (for quadratics) the day at which the
//! curve peaks or bottoms out. Every decision time within a day shares the
//! day's value.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendRole {
    Availability,
    Effect,
}

impl TrendRole {
    pub fn as_str(self) -> &'static str {
        match self {
            TrendRole::Availability => "availability",
            TrendRole::Effect => "effect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrendSpec {
    Constant {
        average: f64,
    },
    Linear {
        average: f64,
        initial: f64,
    },
    Quadratic {
        average: f64,
        initial: f64,
        changing_point: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrendError {
    #[error("a study needs at least one day")]
    NoDays,
    #[error("{field} must be finite")]
    NonFinite { field: &'static str },
    #[error("a linear trend over a single day needs average equal to initial")]
    LinearSingleDay,
    #[error("changing point {changing_point} lies outside days 1..={days}")]
    ChangingPointOutOfRange { changing_point: u32, days: u32 },
    #[error("changing point {changing_point} makes the quadratic elicitation degenerate")]
    DegenerateQuadratic { changing_point: u32 },
}

/// Values of a trend on days `1..=D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayCurve {
    values: Vec<f64>,
}

impl DayCurve {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(value: f64, days: u32) -> Self {
        Self {
            values: vec![value; days as usize],
        }
    }

    pub fn days(&self) -> u32 {
        self.values.len() as u32
    }

    /// Value on a 1-based day.
    pub fn on_day(&self, day: u32) -> f64 {
        self.values[day as usize - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// A validation finding on a built curve. Findings are hard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveIssue {
    pub role: TrendRole,
    pub code: String,
    pub message: String,
    /// 1-based days on which the curve leaves its admissible range.
    pub days: Vec<u32>,
}

impl TrendSpec {
    pub fn average(&self) -> f64 {
        match *self {
            TrendSpec::Constant { average }
            | TrendSpec::Linear { average, .. }
            | TrendSpec::Quadratic { average, .. } => average,
        }
    }

    pub fn initial(&self) -> Option<f64> {
        match *self {
            TrendSpec::Constant { .. } => None,
            TrendSpec::Linear { initial, .. } | TrendSpec::Quadratic { initial, .. } => Some(initial),
        }
    }

    pub fn changing_point(&self) -> Option<u32> {
        match *self {
            TrendSpec::Quadratic { changing_point, .. } => Some(changing_point),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            TrendSpec::Constant { .. } => "constant",
            TrendSpec::Linear { .. } => "linear",
            TrendSpec::Quadratic { .. } => "quadratic",
        }
    }

    /// Dimension of the polynomial-in-day basis that represents this trend.
    pub fn basis_dim(&self) -> usize {
        match self {
            TrendSpec::Constant { .. } => 1,
            TrendSpec::Linear { .. } => 2,
            TrendSpec::Quadratic { .. } => 3,
        }
    }

    fn check(&self, days: u32) -> Result<(), TrendError> {
        if days == 0 {
            return Err(TrendError::NoDays);
        }
        if !self.average().is_finite() {
            return Err(TrendError::NonFinite { field: "average" });
        }
        if let Some(initial) = self.initial() {
            if !initial.is_finite() {
                return Err(TrendError::NonFinite { field: "initial" });
            }
        }
        if let Some(cp) = self.changing_point() {
            if cp < 1 || cp > days {
                return Err(TrendError::ChangingPointOutOfRange {
                    changing_point: cp,
                    days,
                });
            }
        }
        Ok(())
    }
}

/// Mean over days 1..=D of (day - c)^2.
fn mean_sq_distance(c: f64, days: u32) -> f64 {
    (1..=days).map(|d| (d as f64 - c).powi(2)).sum::<f64>() / days as f64
}

/// Vertex value and curvature of the quadratic `v + kappa (day - c)^2`.
fn quadratic_params(average: f64, initial: f64, changing_point: u32, days: u32) -> Result<(f64, f64), TrendError> {
    let c = changing_point as f64;
    let m = mean_sq_distance(c, days);
    let denom = (1.0 - c).powi(2) - m;
    if denom.abs() <= 1e-12 * m.max(1.0) {
        return Err(TrendError::DegenerateQuadratic { changing_point });
    }
    let kappa = (initial - average) / denom;
    Ok((average - kappa * m, kappa))
}

fn linear_slope(average: f64, initial: f64, days: u32) -> Result<f64, TrendError> {
    if days == 1 {
        if average != initial {
            return Err(TrendError::LinearSingleDay);
        }
        return Ok(0.0);
    }
    Ok(2.0 * (average - initial) / (days as f64 - 1.0))
}

/// Materializes a trend on days `1..=days`. The curve's mean over days is
/// `average` and, for linear and quadratic trends, its day-1 value is
/// `initial`.
pub fn build_curve(spec: &TrendSpec, days: u32) -> Result<DayCurve, TrendError> {
    spec.check(days)?;
    let values = match *spec {
        TrendSpec::Constant { average } => vec![average; days as usize],
        TrendSpec::Linear { average, initial } => {
            let slope = linear_slope(average, initial, days)?;
            (1..=days).map(|d| initial + slope * (d as f64 - 1.0)).collect()
        }
        TrendSpec::Quadratic {
            average,
            initial,
            changing_point,
        } => {
            let (_, kappa) = quadratic_params(average, initial, changing_point, days)?;
            let c = changing_point as f64;
            // anchored at day 1 so the initial value is reproduced exactly
            let anchor = (1.0 - c).powi(2);
            (1..=days)
                .map(|d| initial + kappa * ((d as f64 - c).powi(2) - anchor))
                .collect()
        }
    };
    Ok(DayCurve { values })
}

/// Checks a curve against its role's admissible range: effects must be
/// nonnegative on every day, availabilities must lie in `[0, 1]`.
pub fn validate_curve(curve: &DayCurve, role: TrendRole) -> Vec<CurveIssue> {
    let mut issues = Vec::new();
    match role {
        TrendRole::Effect => {
            let days: Vec<u32> = offending_days(curve, |v| v < 0.0);
            if !days.is_empty() {
                issues.push(CurveIssue {
                    role,
                    code: "effect_negative".into(),
                    message: format!(
                        "the proximal effect is negative on {} day(s); adjust the initial value or the day of maximal effect",
                        days.len()
                    ),
                    days,
                });
            }
        }
        TrendRole::Availability => {
            let days: Vec<u32> = offending_days(curve, |v| !(0.0..=1.0).contains(&v));
            if !days.is_empty() {
                issues.push(CurveIssue {
                    role,
                    code: "availability_out_of_range".into(),
                    message: format!("expected availability leaves [0, 1] on {} day(s)", days.len()),
                    days,
                });
            }
        }
    }
    issues
}

fn offending_days(curve: &DayCurve, bad: impl Fn(f64) -> bool) -> Vec<u32> {
    curve
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| bad(v) || v.is_nan())
        .map(|(i, _)| i as u32 + 1)
        .collect()
}

/// Coefficients `d` with `d(t) = Z_t' d` for the basis `Z_t = (1, g, g^2)`
/// truncated to the trend's dimension, where `g = day - 1`.
pub fn effect_basis_coefficients(spec: &TrendSpec, days: u32) -> Result<Vec<f64>, TrendError> {
    spec.check(days)?;
    match *spec {
        TrendSpec::Constant { average } => Ok(vec![average]),
        TrendSpec::Linear { average, initial } => Ok(vec![initial, linear_slope(average, initial, days)?]),
        TrendSpec::Quadratic {
            average,
            initial,
            changing_point,
        } => {
            let (_, kappa) = quadratic_params(average, initial, changing_point, days)?;
            let shift = 1.0 - changing_point as f64;
            Ok(vec![initial, 2.0 * kappa * shift, kappa])
        }
    }
}
