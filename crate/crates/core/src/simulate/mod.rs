//! Monte Carlo verification: simulate participant trajectories under a
//! chosen generative model, fit the least-squares working model with a
//! sandwich variance, apply the F test, and tally empirical power.

mod fit;
mod scenario;
mod shapes;
mod trajectory;

pub use fit::{wls_fit, FitError, FitOptions, FitResult, Fitter};
pub use scenario::{
    run_batch, run_scenario, write_report_csv, Scenario, ScenarioOutcome, ScenarioReport,
};
pub use shapes::{effect_shape_curve, variance_trend_curve};
pub use trajectory::{generate_trajectory, Simulator, Trajectory};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::DesignError;
use crate::power::PowerError;

/// Distribution of the unit-variance outcome errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ErrorLaw {
    #[default]
    IidNormal,
    /// Student t with 3 degrees of freedom, scaled by `1 / sqrt(3)`.
    IidT3,
    /// Exponential(1) minus its mean.
    IidCenteredExp,
    /// Gaussian with `corr(e_s, e_t) = rho^|s - t|` over the whole study.
    Ar { rho: f64 },
    /// Gaussian with correlation `rho` between decision times of the same
    /// day and independence across days.
    CsBlock { rho: f64 },
}

/// True effect curve used to generate outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EffectShape {
    /// The design's own effect trend (working model correctly specified).
    #[default]
    InClass,
    /// Rises to a peak by mid-study and stays there.
    Maintained,
    /// Rises to a peak by mid-study, then declines linearly to 60% of the peak.
    SlightlyDegraded,
    /// Rises to a peak by mid-study, then declines to zero at 80% of the study.
    SeverelyDegraded,
}

/// Time profile of the average conditional variance
/// `rho sigma_1t^2 + (1 - rho) sigma_0t^2`, always rescaled to mean one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceTrend {
    #[default]
    Flat,
    Increasing,
    Decreasing,
    Jump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerativeModel {
    #[serde(default)]
    pub error_law: ErrorLaw,
    #[serde(default)]
    pub effect_shape: EffectShape,
    #[serde(default)]
    pub variance_trend: VarianceTrend,
    /// `sigma_1t / sigma_0t`, constant over time.
    #[serde(default = "one")]
    pub ratio: f64,
    /// Multiplier on the error term; zero gives noiseless outcomes.
    #[serde(default = "one")]
    pub noise_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for GenerativeModel {
    fn default() -> Self {
        Self {
            error_law: ErrorLaw::IidNormal,
            effect_shape: EffectShape::InClass,
            variance_trend: VarianceTrend::Flat,
            ratio: 1.0,
            noise_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulateError {
    #[error("invalid generative model: {field}: {message}")]
    InvalidModel { field: &'static str, message: String },
    #[error("replications must be at least 1")]
    NoReplications,
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error(transparent)]
    Fit(#[from] FitError),
}
