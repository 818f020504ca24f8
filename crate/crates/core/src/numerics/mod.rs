//! Special functions and root finding used by the power calculation.
//!
//! Everything here is a pure function of its arguments. The central and
//! noncentral F distributions are built on the regularized incomplete beta
//! function; quantiles are obtained by bracketing plus Brent's method.

mod beta;
mod fdist;
mod root;

pub use beta::{ln_beta, ln_gamma, reg_inc_beta};
pub use fdist::{f_cdf, f_quantile, f_quantile_with, noncentral_f_cdf, noncentral_f_cdf_with};
pub use root::solve_bracketed_root;

use thiserror::Error;

/// Convergence controls shared by the iterative routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    /// Absolute tolerance on residuals, bracket widths and truncated tails.
    pub abs_tol: f64,
    /// Iteration cap for root finding and bracket expansion.
    pub max_iter: usize,
    /// Maximum number of Poisson-mixture terms in the noncentral series.
    pub series_terms_cap: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            max_iter: 500,
            series_terms_cap: 10_000,
        }
    }
}

impl Tolerance {
    pub fn validate(&self) -> Result<(), NumericsError> {
        if !(self.abs_tol > 0.0) {
            return Err(NumericsError::Domain {
                what: "abs_tol",
                value: self.abs_tol,
            });
        }
        if self.max_iter == 0 {
            return Err(NumericsError::Domain {
                what: "max_iter",
                value: 0.0,
            });
        }
        if self.series_terms_cap == 0 {
            return Err(NumericsError::Domain {
                what: "series_terms_cap",
                value: 0.0,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("argument `{what}` out of domain: {value}")]
    Domain { what: &'static str, value: f64 },
    #[error("{routine} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        routine: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("root is not bracketed: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    InvalidBracket { f_lo: f64, f_hi: f64 },
    #[error(
        "noncentral series exceeded {terms} terms (partial sum {partial_sum}, tail bound {tail_bound:e})"
    )]
    TruncationCap {
        terms: usize,
        partial_sum: f64,
        tail_bound: f64,
    },
}
