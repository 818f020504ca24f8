//! Trial layout: time grid, randomization probabilities, availability and
//! the effect basis, plus the information matrix that drives the
//! non-centrality parameter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trends::{self, CurveIssue, DayCurve, TrendError, TrendRole, TrendSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RandomizationSchedule {
    Constant { probability: f64 },
    PerDay { values: Vec<f64> },
    PerTime { values: Vec<f64> },
}

/// Granularity of an uploaded probability file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    #[serde(alias = "day")]
    PerDay,
    #[serde(alias = "time")]
    PerTime,
}

impl std::str::FromStr for ScheduleMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "day" | "per_day" => Ok(ScheduleMode::PerDay),
            "time" | "per_time" => Ok(ScheduleMode::PerTime),
            other => Err(format!("unknown randomization mode `{other}` (expected day or time)")),
        }
    }
}

/// Everything needed to build a [`StudyDesign`]; this is also the JSON
/// shape accepted by the CLI and the HTTP service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignInputs {
    pub days: u32,
    pub per_day: u32,
    pub randomization: RandomizationSchedule,
    pub availability: TrendSpec,
    pub effect: TrendSpec,
    /// Dimension of the control basis `B_t`; defaults to the effect basis dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("{field}: {message}")]
    InvalidField { field: String, message: String },
    #[error("{role} trend: {source}")]
    Trend {
        role: &'static str,
        #[source]
        source: TrendError,
    },
    #[error("{}", .issues.iter().map(|i| i.message.as_str()).collect::<Vec<_>>().join("; "))]
    InvalidCurve { issues: Vec<CurveIssue> },
    #[error("singular design: {reason}")]
    Singular { reason: String },
}

fn field_error(field: impl Into<String>, message: impl Into<String>) -> DesignError {
    DesignError::InvalidField {
        field: field.into(),
        message: message.into(),
    }
}

/// Polynomial-in-day basis vector `(1, g, g^2, ...)` of length `dim`.
pub fn poly_basis(g: f64, dim: usize) -> impl Iterator<Item = f64> {
    let mut acc = 1.0;
    (0..dim).map(move |_| {
        let v = acc;
        acc *= g;
        v
    })
}

/// A validated trial description with per-decision-time probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyDesign {
    days: u32,
    per_day: u32,
    rho: Vec<f64>,
    availability: DayCurve,
    effect_spec: TrendSpec,
    effect_coefficients: Vec<f64>,
    q: usize,
}

impl StudyDesign {
    pub fn days(&self) -> u32 {
        self.days
    }

    pub fn per_day(&self) -> u32 {
        self.per_day
    }

    pub fn total_times(&self) -> usize {
        self.rho.len()
    }

    pub fn p(&self) -> usize {
        self.effect_coefficients.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Randomization probabilities for t = 1..=T (index 0 is t = 1).
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn availability(&self) -> &DayCurve {
        &self.availability
    }

    pub fn effect_spec(&self) -> &TrendSpec {
        &self.effect_spec
    }

    /// Standardized effect vector `d` in the `Z_t` basis.
    pub fn effect_coefficients(&self) -> &[f64] {
        &self.effect_coefficients
    }

    /// Zero-based day offset `g = floor((t - 1) / K)` for a 0-based time index.
    pub fn day_offset(&self, t_index: usize) -> usize {
        t_index / self.per_day as usize
    }

    /// Expected availability at a 0-based time index.
    pub fn tau(&self, t_index: usize) -> f64 {
        self.availability.values()[self.day_offset(t_index)]
    }

    pub fn z(&self, t_index: usize) -> impl Iterator<Item = f64> {
        poly_basis(self.day_offset(t_index) as f64, self.p())
    }

    /// Per-decision-time effect `Z_t' d`.
    pub fn effect_at(&self, t_index: usize) -> f64 {
        self.z(t_index).zip(&self.effect_coefficients).map(|(z, d)| z * d).sum()
    }

    pub fn effect_curve(&self) -> Vec<f64> {
        (0..self.total_times()).map(|t| self.effect_at(t)).collect()
    }

    /// Replaces `d`, keeping the basis dimension.
    pub fn with_effect_coefficients(mut self, d: Vec<f64>) -> Result<Self, DesignError> {
        if d.len() != self.p() {
            return Err(field_error(
                "effect",
                format!("expected {} coefficients, got {}", self.p(), d.len()),
            ));
        }
        self.effect_coefficients = d;
        Ok(self)
    }

    pub fn with_q(mut self, q: usize) -> Result<Self, DesignError> {
        if q == 0 {
            return Err(field_error("q", "must be at least 1"));
        }
        self.q = q;
        Ok(self)
    }
}

fn check_probability(field: &str, value: f64) -> Result<(), DesignError> {
    if !(value > 0.0 && value < 1.0) {
        return Err(field_error(field, format!("probability {value} must lie strictly between 0 and 1")));
    }
    Ok(())
}

fn materialize_rho(schedule: &RandomizationSchedule, days: u32, per_day: u32) -> Result<Vec<f64>, DesignError> {
    let total = days as usize * per_day as usize;
    match schedule {
        RandomizationSchedule::Constant { probability } => {
            check_probability("randomization.probability", *probability)?;
            Ok(vec![*probability; total])
        }
        RandomizationSchedule::PerDay { values } => {
            if values.len() != days as usize {
                return Err(field_error(
                    "randomization.values",
                    format!("expected {days} per-day probabilities, got {}", values.len()),
                ));
            }
            for (i, &v) in values.iter().enumerate() {
                check_probability(&format!("randomization.values[{}]", i + 1), v)?;
            }
            Ok(values
                .iter()
                .flat_map(|&v| std::iter::repeat_n(v, per_day as usize))
                .collect())
        }
        RandomizationSchedule::PerTime { values } => {
            if values.len() != total {
                return Err(field_error(
                    "randomization.values",
                    format!("expected {total} per-decision-time probabilities, got {}", values.len()),
                ));
            }
            for (i, &v) in values.iter().enumerate() {
                check_probability(&format!("randomization.values[{}]", i + 1), v)?;
            }
            Ok(values.clone())
        }
    }
}

/// Validates the inputs and materializes `rho_t` and the availability curve.
pub fn build_design(inputs: &DesignInputs) -> Result<StudyDesign, DesignError> {
    if inputs.days == 0 {
        return Err(field_error("days", "must be at least 1"));
    }
    if inputs.per_day == 0 {
        return Err(field_error("per_day", "must be at least 1"));
    }
    let rho = materialize_rho(&inputs.randomization, inputs.days, inputs.per_day)?;

    let availability = trends::build_curve(&inputs.availability, inputs.days).map_err(|source| {
        DesignError::Trend {
            role: "availability",
            source,
        }
    })?;
    let effect = trends::build_curve(&inputs.effect, inputs.days).map_err(|source| DesignError::Trend {
        role: "effect",
        source,
    })?;

    let mut issues = trends::validate_curve(&availability, TrendRole::Availability);
    issues.extend(trends::validate_curve(&effect, TrendRole::Effect));
    if !issues.is_empty() {
        return Err(DesignError::InvalidCurve { issues });
    }

    let effect_coefficients =
        trends::effect_basis_coefficients(&inputs.effect, inputs.days).map_err(|source| DesignError::Trend {
            role: "effect",
            source,
        })?;
    let q = inputs.q.unwrap_or(effect_coefficients.len());
    if q == 0 {
        return Err(field_error("q", "must be at least 1"));
    }

    Ok(StudyDesign {
        days: inputs.days,
        per_day: inputs.per_day,
        rho,
        availability,
        effect_spec: inputs.effect.clone(),
        effect_coefficients,
        q,
    })
}

/// Weighted sum of `Z_t Z_t'` with per-time weights; also returns the number
/// of distinct days carrying positive weight.
fn weighted_gram(design: &StudyDesign, weight: impl Fn(usize) -> f64) -> (DMatrix<f64>, usize) {
    let p = design.p();
    let mut m = DMatrix::zeros(p, p);
    let mut active_days = std::collections::BTreeSet::new();
    let mut z = vec![0.0; p];
    for t in 0..design.total_times() {
        let w = weight(t);
        if w == 0.0 {
            continue;
        }
        active_days.insert(design.day_offset(t));
        for (slot, v) in z.iter_mut().zip(design.z(t)) {
            *slot = v;
        }
        for i in 0..p {
            for j in 0..=i {
                m[(i, j)] += w * z[i] * z[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            m[(j, i)] = m[(i, j)];
        }
    }
    (m, active_days.len())
}

fn require_positive_definite(m: &DMatrix<f64>, active_days: usize, what: &str) -> Result<(), DesignError> {
    let p = m.nrows();
    if active_days < p {
        return Err(DesignError::Singular {
            reason: format!("{what} needs at least {p} days with positive weight, found {active_days}"),
        });
    }
    if m.clone().cholesky().is_none() {
        return Err(DesignError::Singular {
            reason: format!("{what} is not positive definite"),
        });
    }
    Ok(())
}

/// `M = sum_t tau_t rho_t (1 - rho_t) Z_t Z_t'`.
pub fn information_matrix(design: &StudyDesign) -> Result<DMatrix<f64>, DesignError> {
    let (m, active) = weighted_gram(design, |t| {
        let rho = design.rho[t];
        design.tau(t) * rho * (1.0 - rho)
    });
    require_positive_definite(&m, active, "information matrix")?;
    Ok(m)
}

/// Availability-weighted least-squares projection of a per-time effect
/// curve onto the design's `Z_t` basis:
/// `d = (sum tau Z Z')^{-1} sum tau Z d(t)`.
pub fn project_effect(effect: &[f64], design: &StudyDesign) -> Result<Vec<f64>, DesignError> {
    if effect.len() != design.total_times() {
        return Err(field_error(
            "effect",
            format!("expected {} values, got {}", design.total_times(), effect.len()),
        ));
    }
    let (gram, active) = weighted_gram(design, |t| design.tau(t));
    require_positive_definite(&gram, active, "projection Gram matrix")?;

    let p = design.p();
    let mut rhs = DVector::zeros(p);
    for (t, &value) in effect.iter().enumerate() {
        let w = design.tau(t) * value;
        for (i, z) in design.z(t).enumerate() {
            rhs[i] += w * z;
        }
    }
    let chol = gram.cholesky().ok_or_else(|| DesignError::Singular {
        reason: "projection Gram matrix is not positive definite".into(),
    })?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CsvError {
    #[error("line 1: expected header `index,probability`, found `{found}`")]
    Header { found: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate index {index}")]
    DuplicateIndex { line: usize, index: usize },
    #[error("line {line}: index {index} outside 1..={max}")]
    IndexOutOfRange { line: usize, index: usize, max: usize },
    #[error("line {line}: probability {value} must lie strictly between 0 and 1")]
    ProbabilityOutOfRange { line: usize, value: f64 },
    #[error("missing indices: {}", .indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", "))]
    MissingIndices { indices: Vec<usize> },
}

fn is_plain_decimal(s: &str) -> bool {
    let digits = s.strip_prefix(['+', '-']).unwrap_or(s);
    !digits.is_empty()
        && digits.chars().all(|c| c.is_ascii_digit() || c == '.')
        && digits.chars().filter(|&c| c == '.').count() <= 1
        && digits.chars().any(|c| c.is_ascii_digit())
}

/// Parses an `index,probability` file into a per-day or per-decision-time
/// schedule. Indices are 1-based, may appear in any order, and must cover
/// `1..=D` (per day) or `1..=D*K` (per decision time) exactly once.
pub fn parse_probability_csv(
    text: &str,
    mode: ScheduleMode,
    days: u32,
    per_day: u32,
) -> Result<RandomizationSchedule, CsvError> {
    let max = match mode {
        ScheduleMode::PerDay => days as usize,
        ScheduleMode::PerTime => days as usize * per_day as usize,
    };
    let mut lines = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));

    let header = lines.next().unwrap_or("");
    if header.trim_start_matches('\u{feff}') != "index,probability" {
        return Err(CsvError::Header {
            found: header.to_string(),
        });
    }

    let mut values: Vec<Option<f64>> = vec![None; max];
    for (offset, raw) in lines.enumerate() {
        let line = offset + 2;
        if raw.is_empty() {
            continue;
        }
        let mut cols = raw.split(',');
        let (Some(idx), Some(prob), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(CsvError::Malformed {
                line,
                message: format!("expected two columns, found `{raw}`"),
            });
        };
        let index: usize = idx.trim().parse().map_err(|_| CsvError::Malformed {
            line,
            message: format!("index `{idx}` is not a positive integer"),
        })?;
        let prob = prob.trim();
        if !is_plain_decimal(prob) {
            return Err(CsvError::Malformed {
                line,
                message: format!("probability `{prob}` is not a decimal number"),
            });
        }
        let value: f64 = prob.parse().map_err(|_| CsvError::Malformed {
            line,
            message: format!("probability `{prob}` is not a decimal number"),
        })?;
        if index == 0 || index > max {
            return Err(CsvError::IndexOutOfRange { line, index, max });
        }
        if !(value > 0.0 && value < 1.0) {
            return Err(CsvError::ProbabilityOutOfRange { line, value });
        }
        let slot = &mut values[index - 1];
        if slot.is_some() {
            return Err(CsvError::DuplicateIndex { line, index });
        }
        *slot = Some(value);
    }

    let missing: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_none())
        .map(|(i, _)| i + 1)
        .collect();
    if !missing.is_empty() {
        return Err(CsvError::MissingIndices { indices: missing });
    }
    let values: Vec<f64> = values.into_iter().flatten().collect();
    Ok(match mode {
        ScheduleMode::PerDay => RandomizationSchedule::PerDay { values },
        ScheduleMode::PerTime => RandomizationSchedule::PerTime { values },
    })
}
