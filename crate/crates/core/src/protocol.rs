//! Request and response shapes shared by the command line and the HTTP
//! service, so both front ends emit the same JSON for the same inputs.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::design::{build_design, CsvError, DesignError, DesignInputs, RandomizationSchedule, ScheduleMode};
use crate::power::{PowerError, PowerModel, Warning};
use crate::simulate::SimulateError;
use crate::trends::{build_curve, validate_curve, CurveIssue, TrendError, TrendRole, TrendSpec};

fn default_alpha() -> f64 {
    0.05
}

/// Randomization as sent by a client: either inline or a token returned by
/// an earlier CSV upload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RandomizationInput {
    Constant { probability: f64 },
    PerDay { values: Vec<f64> },
    PerTime { values: Vec<f64> },
    Uploaded { token: String },
}

impl From<RandomizationSchedule> for RandomizationInput {
    fn from(s: RandomizationSchedule) -> Self {
        match s {
            RandomizationSchedule::Constant { probability } => Self::Constant { probability },
            RandomizationSchedule::PerDay { values } => Self::PerDay { values },
            RandomizationSchedule::PerTime { values } => Self::PerTime { values },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignPayload {
    pub days: u32,
    pub per_day: u32,
    pub randomization: RandomizationInput,
    pub availability: TrendSpec,
    pub effect: TrendSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
}

impl DesignPayload {
    /// Replaces an upload token with the stored schedule.
    pub fn resolve<F>(&self, lookup: F) -> Result<DesignInputs, ApiError>
    where
        F: FnOnce(&str) -> Option<RandomizationSchedule>,
    {
        let randomization = match &self.randomization {
            RandomizationInput::Constant { probability } => RandomizationSchedule::Constant {
                probability: *probability,
            },
            RandomizationInput::PerDay { values } => RandomizationSchedule::PerDay { values: values.clone() },
            RandomizationInput::PerTime { values } => RandomizationSchedule::PerTime { values: values.clone() },
            RandomizationInput::Uploaded { token } => lookup(token).ok_or_else(|| {
                ApiError::new(400, "unknown_token", format!("no uploaded randomization file with token `{token}`"))
            })?,
        };
        Ok(DesignInputs {
            days: self.days,
            per_day: self.per_day,
            randomization,
            availability: self.availability.clone(),
            effect: self.effect.clone(),
            q: self.q,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSizeRequest {
    pub design: DesignPayload,
    #[serde(default = "default_alpha")]
    pub alpha0: f64,
    pub target_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerRequest {
    pub design: DesignPayload,
    #[serde(default = "default_alpha")]
    pub alpha0: f64,
    #[serde(alias = "N")]
    pub n: u32,
}

/// Result first, then the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeResponse {
    pub sample_size: u32,
    pub power_at_n: f64,
    pub unfloored_sample_size: u32,
    pub alpha0: f64,
    pub target_power: f64,
    pub design: DesignInputs,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResponse {
    pub power: f64,
    pub n: u32,
    pub alpha0: f64,
    pub design: DesignInputs,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComputeResult {
    SampleSize(SampleSizeResponse),
    Power(PowerResponse),
}

pub fn compute_sample_size(req: &SampleSizeRequest, design: DesignInputs) -> Result<SampleSizeResponse, ApiError> {
    let built = build_design(&design)?;
    let r = PowerModel::new(&built)?.solve_sample_size(req.alpha0, req.target_power)?;
    Ok(SampleSizeResponse {
        sample_size: r.sample_size,
        power_at_n: r.power_at_n,
        unfloored_sample_size: r.unfloored_sample_size,
        alpha0: req.alpha0,
        target_power: req.target_power,
        design,
        warnings: r.warnings,
    })
}

pub fn compute_power(req: &PowerRequest, design: DesignInputs) -> Result<PowerResponse, ApiError> {
    let built = build_design(&design)?;
    let power = PowerModel::new(&built)?.power_at(req.alpha0, req.n)?;
    Ok(PowerResponse {
        power,
        n: req.n,
        alpha0: req.alpha0,
        design,
        warnings: Vec::new(),
    })
}

/// Machine-readable failure. `status` is the HTTP status the service uses;
/// the JSON body is `{"error": {"code", "message", "details"?}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
    pub details: Option<Value>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<&'a Value>,
}

#[derive(Serialize)]
struct ErrorEnvelope<'a> {
    error: ErrorBody<'a>,
}

impl ApiError {
    pub fn new(status: u16, code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn invalid_json(message: impl std::fmt::Display) -> Self {
        Self::new(400, "invalid_json", message.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorEnvelope {
            error: ErrorBody {
                code: &self.code,
                message: &self.message,
                details: self.details.as_ref(),
            },
        })
        .expect("error body serializes")
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

fn issues_error(issues: &[CurveIssue], message: String) -> ApiError {
    let code = issues.first().map(|i| i.code.clone()).unwrap_or_else(|| "invalid_design".into());
    ApiError::new(400, code, message).with_details(json!({ "issues": issues }))
}

impl From<TrendError> for ApiError {
    fn from(e: TrendError) -> Self {
        ApiError::new(400, "invalid_trend", e.to_string())
    }
}

impl From<DesignError> for ApiError {
    fn from(e: DesignError) -> Self {
        let message = e.to_string();
        match e {
            DesignError::InvalidField { field, .. } => {
                ApiError::new(400, "invalid_design", message).with_details(json!({ "field": field }))
            }
            DesignError::Trend { role, .. } => {
                ApiError::new(400, "invalid_trend", message).with_details(json!({ "role": role }))
            }
            DesignError::InvalidCurve { issues } => issues_error(&issues, message),
            DesignError::Singular { .. } => ApiError::new(400, "singular_design", message),
        }
    }
}

impl From<PowerError> for ApiError {
    fn from(e: PowerError) -> Self {
        let message = e.to_string();
        match e {
            PowerError::InvalidAlpha(_) => ApiError::new(400, "invalid_alpha", message),
            PowerError::InvalidTarget { .. } => ApiError::new(400, "invalid_target", message),
            PowerError::SampleSizeTooSmall { n, min } => {
                ApiError::new(400, "n_too_small", message).with_details(json!({ "n": n, "min": min }))
            }
            PowerError::EffectTooSmall { cap, power_at_cap } => ApiError::new(422, "effect_too_small", message)
                .with_details(json!({ "cap": cap, "power_at_cap": power_at_cap })),
            PowerError::Design(d) => d.into(),
            PowerError::Numerics(_) => ApiError::new(500, "numerics", message),
        }
    }
}

impl From<CsvError> for ApiError {
    fn from(e: CsvError) -> Self {
        let line = match &e {
            CsvError::Header { .. } => Some(1),
            CsvError::Malformed { line, .. }
            | CsvError::DuplicateIndex { line, .. }
            | CsvError::IndexOutOfRange { line, .. }
            | CsvError::ProbabilityOutOfRange { line, .. } => Some(*line),
            CsvError::MissingIndices { .. } => None,
        };
        let err = ApiError::new(400, "csv_parse", e.to_string());
        match (line, &e) {
            (_, CsvError::MissingIndices { indices }) => err.with_details(json!({ "missing": indices })),
            (Some(line), _) => err.with_details(json!({ "line": line })),
            (None, _) => err,
        }
    }
}

impl From<SimulateError> for ApiError {
    fn from(e: SimulateError) -> Self {
        let message = e.to_string();
        match e {
            SimulateError::InvalidModel { field, .. } => {
                ApiError::new(400, "invalid_model", message).with_details(json!({ "field": field }))
            }
            SimulateError::NoReplications => ApiError::new(400, "invalid_model", message),
            SimulateError::Design(d) => d.into(),
            SimulateError::Power(p) => p.into(),
            SimulateError::Fit(_) => ApiError::new(400, "fit_failed", message),
        }
    }
}

/// Column order for tabular output: the computed value, then every input.
pub const RESULT_COLUMNS: [&str; 18] = [
    "result",
    "result_type",
    "power_at_n",
    "alpha0",
    "target_power",
    "n",
    "days",
    "per_day",
    "randomization",
    "availability_kind",
    "availability_average",
    "availability_initial",
    "availability_changing_point",
    "effect_kind",
    "effect_average",
    "effect_initial",
    "effect_changing_point",
    "warnings",
];

fn describe_randomization(r: &RandomizationSchedule) -> String {
    match r {
        RandomizationSchedule::Constant { probability } => probability.to_string(),
        RandomizationSchedule::PerDay { values } => {
            format!("per_day:{}", values.iter().map(f64::to_string).collect::<Vec<_>>().join(";"))
        }
        RandomizationSchedule::PerTime { values } => {
            format!("per_time:{}", values.iter().map(f64::to_string).collect::<Vec<_>>().join(";"))
        }
    }
}

fn trend_cells(t: &TrendSpec) -> [String; 4] {
    [
        t.kind_name().to_string(),
        t.average().to_string(),
        t.initial().map(|v| v.to_string()).unwrap_or_default(),
        t.changing_point().map(|v| v.to_string()).unwrap_or_default(),
    ]
}

impl ComputeResult {
    /// One row in [`RESULT_COLUMNS`] order.
    pub fn row(&self) -> Vec<String> {
        let (result, kind, power_at_n, alpha0, target, n, design, warnings) = match self {
            ComputeResult::SampleSize(r) => (
                r.sample_size.to_string(),
                "sample_size",
                r.power_at_n.to_string(),
                r.alpha0,
                r.target_power.to_string(),
                r.sample_size.to_string(),
                &r.design,
                &r.warnings,
            ),
            ComputeResult::Power(r) => (
                r.power.to_string(),
                "power",
                r.power.to_string(),
                r.alpha0,
                String::new(),
                r.n.to_string(),
                &r.design,
                &r.warnings,
            ),
        };
        let mut row = vec![
            result,
            kind.to_string(),
            power_at_n,
            alpha0.to_string(),
            target,
            n,
            design.days.to_string(),
            design.per_day.to_string(),
            describe_randomization(&design.randomization),
        ];
        row.extend(trend_cells(&design.availability));
        row.extend(trend_cells(&design.effect));
        row.push(warnings.iter().map(|w| w.code.as_str()).collect::<Vec<_>>().join(";"));
        row
    }

    pub fn to_json(&self) -> String {
        match self {
            ComputeResult::SampleSize(r) => serde_json::to_string(r),
            ComputeResult::Power(r) => serde_json::to_string(r),
        }
        .expect("result serializes")
    }
}

/// CSV in [`RESULT_COLUMNS`] order. When `timestamps` is given a trailing
/// `timestamp` column is added, one value per result.
pub fn results_csv(results: &[ComputeResult], timestamps: Option<&[String]>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = RESULT_COLUMNS.to_vec();
    if timestamps.is_some() {
        header.push("timestamp");
    }
    w.write_record(&header).expect("in-memory write");
    for (i, r) in results.iter().enumerate() {
        let mut row = r.row();
        if let Some(ts) = timestamps {
            row.push(ts[i].clone());
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Day curve plus the reference lines drawn with it: zero and the average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPreview {
    pub role: TrendRole,
    pub spec: TrendSpec,
    pub days: Vec<u32>,
    pub values: Vec<f64>,
    pub null_line: Vec<f64>,
    pub average_line: Vec<f64>,
    /// Range problems; the curve is still returned so it can be drawn.
    pub issues: Vec<CurveIssue>,
}

pub fn trend_preview(role: TrendRole, spec: &TrendSpec, days: u32) -> Result<TrendPreview, ApiError> {
    let curve = build_curve(spec, days)?;
    let issues = validate_curve(&curve, role);
    let n = days as usize;
    Ok(TrendPreview {
        role,
        spec: spec.clone(),
        days: (1..=days).collect(),
        values: curve.values().to_vec(),
        null_line: vec![0.0; n],
        average_line: vec![spec.average(); n],
        issues,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewRow {
    pub index: usize,
    pub probability: f64,
}

/// Number of rows echoed back after a CSV upload.
pub const PREVIEW_ROWS: usize = 10;

/// Upload acknowledgement: the token to reference and the leading rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub token: String,
    pub mode: ScheduleMode,
    pub total_rows: usize,
    pub preview: Vec<PreviewRow>,
}

pub fn preview_rows(schedule: &RandomizationSchedule) -> (usize, Vec<PreviewRow>) {
    let values: &[f64] = match schedule {
        RandomizationSchedule::Constant { probability } => std::slice::from_ref(probability),
        RandomizationSchedule::PerDay { values } | RandomizationSchedule::PerTime { values } => values,
    };
    let rows = values
        .iter()
        .take(PREVIEW_ROWS)
        .enumerate()
        .map(|(i, &p)| PreviewRow {
            index: i + 1,
            probability: p,
        })
        .collect();
    (values.len(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heartsteps_payload(cp: u32) -> DesignPayload {
        DesignPayload {
            days: 42,
            per_day: 5,
            randomization: RandomizationInput::Constant { probability: 0.4 },
            availability: TrendSpec::Constant { average: 0.7 },
            effect: TrendSpec::Quadratic {
                average: 0.1,
                initial: 0.0,
                changing_point: cp,
            },
            q: None,
        }
    }

    #[test]
    fn request_json_shape() {
        let text = r#"{"design":{"days":42,"per_day":5,
            "randomization":{"mode":"constant","probability":0.4},
            "availability":{"kind":"constant","average":0.7},
            "effect":{"kind":"quadratic","average":0.1,"initial":0,"changing_point":28}},
            "target_power":0.8}"#;
        let req: SampleSizeRequest = serde_json::from_str(text).unwrap();
        assert_eq!(req.alpha0, 0.05);
        assert_eq!(req.design, heartsteps_payload(28));
        assert!(serde_json::from_str::<SampleSizeRequest>(&text.replace("target_power", "target")).is_err());
        let p: PowerRequest = serde_json::from_str(&text.replace("\"target_power\":0.8", "\"N\":40")).unwrap();
        assert_eq!(p.n, 40);
    }

    #[test]
    fn sample_size_matches_library() {
        let req = SampleSizeRequest {
            design: heartsteps_payload(28),
            alpha0: 0.05,
            target_power: 0.8,
        };
        let inputs = req.design.resolve(|_| None).unwrap();
        let got = compute_sample_size(&req, inputs.clone()).unwrap();
        let lib = crate::power::solve_sample_size(&build_design(&inputs).unwrap(), 0.05, 0.8).unwrap();
        assert_eq!(got.sample_size, lib.sample_size);
        assert_eq!(got.power_at_n, lib.power_at_n);
        let json = ComputeResult::SampleSize(got).to_json();
        assert!(json.starts_with("{\"sample_size\":"));
    }

    #[test]
    fn negative_effect_maps_to_code_with_days() {
        let req = SampleSizeRequest {
            design: heartsteps_payload(21),
            alpha0: 0.05,
            target_power: 0.8,
        };
        let err = compute_sample_size(&req, req.design.resolve(|_| None).unwrap()).unwrap_err();
        assert_eq!(err.status, 400);
        assert_eq!(err.code, "effect_negative");
        let body: Value = serde_json::from_str(&err.to_json()).unwrap();
        let days = body["error"]["details"]["issues"][0]["days"].as_array().unwrap();
        assert!(!days.is_empty());
        assert_eq!(days.last().unwrap(), 42);
    }

    #[test]
    fn error_statuses() {
        let design = heartsteps_payload(28).resolve(|_| None).unwrap();
        let bad_target = SampleSizeRequest {
            design: heartsteps_payload(28),
            alpha0: 0.05,
            target_power: 0.05,
        };
        assert_eq!(compute_sample_size(&bad_target, design.clone()).unwrap_err().code, "invalid_target");
        let small = PowerRequest {
            design: heartsteps_payload(28),
            alpha0: 0.05,
            n: 6,
        };
        let e = compute_power(&small, design.clone()).unwrap_err();
        assert_eq!((e.status, e.code.as_str()), (400, "n_too_small"));
        let mut zero = design.clone();
        zero.effect = TrendSpec::Constant { average: 0.0 };
        let e = compute_sample_size(
            &SampleSizeRequest {
                design: heartsteps_payload(28),
                alpha0: 0.05,
                target_power: 0.8,
            },
            zero,
        )
        .unwrap_err();
        assert_eq!((e.status, e.code.as_str()), (422, "effect_too_small"));
        let tok = heartsteps_payload(28);
        let mut tok = tok;
        tok.randomization = RandomizationInput::Uploaded { token: "x".into() };
        assert_eq!(tok.resolve(|_| None).unwrap_err().code, "unknown_token");
    }

    #[test]
    fn rows_are_result_first() {
        let req = PowerRequest {
            design: heartsteps_payload(28),
            alpha0: 0.05,
            n: 40,
        };
        let r = compute_power(&req, req.design.resolve(|_| None).unwrap()).unwrap();
        let row = ComputeResult::Power(r.clone()).row();
        assert_eq!(row.len(), RESULT_COLUMNS.len());
        assert_eq!(row[0], r.power.to_string());
        assert_eq!(row[1], "power");
        assert_eq!(row[13], "quadratic");
        assert_eq!(row[16], "28");
        let csv = results_csv(&[ComputeResult::Power(r)], Some(&["t0".to_string()]));
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("result,result_type,"));
        assert!(lines.next().unwrap().ends_with(",t0"));
        assert!(lines.next().is_none());
    }

    #[test]
    fn preview_keeps_curve_with_issues() {
        let spec = TrendSpec::Quadratic {
            average: 0.1,
            initial: 0.0,
            changing_point: 21,
        };
        let p = trend_preview(TrendRole::Effect, &spec, 42).unwrap();
        assert_eq!(p.values.len(), 42);
        assert_eq!(p.issues[0].code, "effect_negative");
        assert!(p.null_line.iter().all(|&v| v == 0.0));
        assert!(p.average_line.iter().all(|&v| v == 0.1));
        assert!(trend_preview(TrendRole::Effect, &spec, 0).is_err());
    }

    #[test]
    fn csv_errors_carry_line() {
        let e: ApiError = CsvError::Malformed {
            line: 4,
            message: "x".into(),
        }
        .into();
        assert_eq!(e.details.unwrap()["line"], 4);
    }
}
