//! Non-centrality, power at a given number of participants, and the
//! minimal number of participants reaching a target power.
//!
//! The test rejects when `N b' S^{-1} b` exceeds
//! `p (N - q - 1) / (N - q - p) * F^{-1}_{p, N-q-p}(1 - alpha)`. Under the
//! working assumptions the statistic divided by that multiplier is
//! noncentral F with non-centrality `c_N = N d' M d`, so
//!
//! `power = 1 - F_{p, N-q-p; c_N}(F^{-1}_{p, N-q-p}(1 - alpha))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{information_matrix, DesignError, StudyDesign};
use crate::numerics::{f_quantile, noncentral_f_cdf, NumericsError};

/// Smallest sample size ever reported by the solver.
pub const SAMPLE_SIZE_FLOOR: u32 = 10;
/// Largest sample size the solver scans before giving up.
/// Number of consecutive `N` checked before the solver switches to bisection.
pub const LINEAR_SCAN_SPAN: u32 = 256;

pub const SAMPLE_SIZE_CAP: u32 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeResult {
    pub sample_size: u32,
    pub power_at_n: f64,
    /// Minimal sample size before the floor of 10 is applied.
    pub unfloored_sample_size: u32,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCalcResult {
    pub power: f64,
    pub sample_size: u32,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerError {
    #[error("significance level {0} must lie strictly between 0 and 1")]
    InvalidAlpha(f64),
    #[error("target power {target} must lie strictly between the significance level {alpha} and 1")]
    InvalidTarget { target: f64, alpha: f64 },
    #[error("sample size {n} leaves no denominator degrees of freedom; need at least {min}")]
    SampleSizeTooSmall { n: u32, min: u32 },
    #[error("effect too small to power at feasible N: power at N = {cap} is only {power_at_cap:.4}")]
    EffectTooSmall { cap: u32, power_at_cap: f64 },
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Precomputed `d' M d` for a design; cheap to query at many `N`.
#[derive(Debug, Clone)]
pub struct PowerModel {
    p: usize,
    q: usize,
    quad_form: f64,
}

impl PowerModel {
    pub fn new(design: &StudyDesign) -> Result<Self, PowerError> {
        let m = information_matrix(design)?;
        let d = design.effect_coefficients();
        let mut quad_form = 0.0;
        for i in 0..d.len() {
            for j in 0..d.len() {
                quad_form += d[i] * m[(i, j)] * d[j];
            }
        }
        Ok(Self {
            p: design.p(),
            q: design.q(),
            quad_form: quad_form.max(0.0),
        })
    }

    /// Smallest `N` with at least one denominator degree of freedom.
    pub fn min_sample_size(&self) -> u32 {
        (self.p + self.q + 1) as u32
    }

    pub fn noncentrality(&self, n: u32) -> f64 {
        n as f64 * self.quad_form
    }

    pub fn power_at(&self, alpha: f64, n: u32) -> Result<f64, PowerError> {
        check_alpha(alpha)?;
        if n < self.min_sample_size() {
            return Err(PowerError::SampleSizeTooSmall {
                n,
                min: self.min_sample_size(),
            });
        }
        let ncp = self.noncentrality(n);
        if ncp == 0.0 {
            return Ok(alpha);
        }
        let d1 = self.p as f64;
        let d2 = (n as usize - self.q - self.p) as f64;
        let critical = f_quantile(1.0 - alpha, d1, d2)?;
        Ok(1.0 - noncentral_f_cdf(critical, d1, d2, ncp)?)
    }

    /// Smallest `N` reaching `target`. Small `N`, where the denominator
    /// degrees of freedom move fastest, is scanned one step at a time;
    /// beyond [`LINEAR_SCAN_SPAN`] steps the search doubles and bisects.
    /// Results below [`SAMPLE_SIZE_FLOOR`] are raised to the floor with a
    /// warning.
    pub fn solve_sample_size(&self, alpha: f64, target: f64) -> Result<SampleSizeResult, PowerError> {
        check_alpha(alpha)?;
        if !(target > alpha && target < 1.0) {
            return Err(PowerError::InvalidTarget { target, alpha });
        }
        if self.quad_form == 0.0 {
            return Err(PowerError::EffectTooSmall {
                cap: SAMPLE_SIZE_CAP,
                power_at_cap: alpha,
            });
        }

        let start = self.min_sample_size();
        let cap = SAMPLE_SIZE_CAP.max(start);
        let scan_end = (start + LINEAR_SCAN_SPAN).min(cap);
        let mut lo = start;
        let mut hit = None;
        for n in start..=scan_end {
            let p = self.power_at(alpha, n)?;
            if p >= target {
                hit = Some((n, p));
                break;
            }
            lo = n;
        }

        let (n, power) = match hit {
            Some(found) => found,
            None => {
                let power_at_cap = self.power_at(alpha, cap)?;
                if power_at_cap < target {
                    return Err(PowerError::EffectTooSmall {
                        cap: SAMPLE_SIZE_CAP,
                        power_at_cap,
                    });
                }
                // invariant: power(lo) < target <= power(hi)
                let mut hi = (lo * 2).min(cap);
                let mut hi_power = if hi == cap { power_at_cap } else { self.power_at(alpha, hi)? };
                while hi_power < target {
                    lo = hi;
                    hi = (hi * 2).min(cap);
                    hi_power = if hi == cap { power_at_cap } else { self.power_at(alpha, hi)? };
                }
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    let p = self.power_at(alpha, mid)?;
                    if p >= target {
                        hi = mid;
                        hi_power = p;
                    } else {
                        lo = mid;
                    }
                }
                (hi, hi_power)
            }
        };

        if n < SAMPLE_SIZE_FLOOR {
            return Ok(SampleSizeResult {
                sample_size: SAMPLE_SIZE_FLOOR,
                power_at_n: self.power_at(alpha, SAMPLE_SIZE_FLOOR)?,
                unfloored_sample_size: n,
                warnings: vec![Warning {
                    code: "sample_size_floor".into(),
                    message: format!(
                        "the minimal sample size is {n}; returning {SAMPLE_SIZE_FLOOR}, the smallest sample size reported"
                    ),
                }],
            });
        }
        Ok(SampleSizeResult {
            sample_size: n,
            power_at_n: power,
            unfloored_sample_size: n,
            warnings: Vec::new(),
        })
    }
}

fn check_alpha(alpha: f64) -> Result<(), PowerError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PowerError::InvalidAlpha(alpha));
    }
    Ok(())
}

/// `c_N = N d' M d`.
pub fn noncentrality(design: &StudyDesign, n: u32) -> Result<f64, PowerError> {
    Ok(PowerModel::new(design)?.noncentrality(n))
}

pub fn power_at(design: &StudyDesign, alpha: f64, n: u32) -> Result<f64, PowerError> {
    PowerModel::new(design)?.power_at(alpha, n)
}

pub fn power_calc(design: &StudyDesign, alpha: f64, n: u32) -> Result<PowerCalcResult, PowerError> {
    Ok(PowerCalcResult {
        power: power_at(design, alpha, n)?,
        sample_size: n,
        warnings: Vec::new(),
    })
}

pub fn solve_sample_size(design: &StudyDesign, alpha: f64, target: f64) -> Result<SampleSizeResult, PowerError> {
    PowerModel::new(design)?.solve_sample_size(alpha, target)
}
