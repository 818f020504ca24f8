use super::{ln_gamma, reg_inc_beta, solve_bracketed_root, NumericsError, Tolerance};

fn check_df(d1: f64, d2: f64) -> Result<(), NumericsError> {
    if !(d1 > 0.0) || !d1.is_finite() {
        return Err(NumericsError::Domain { what: "d1", value: d1 });
    }
    if !(d2 > 0.0) || !d2.is_finite() {
        return Err(NumericsError::Domain { what: "d2", value: d2 });
    }
    Ok(())
}

fn check_x(x: f64) -> Result<(), NumericsError> {
    if !(x >= 0.0) {
        return Err(NumericsError::Domain { what: "x", value: x });
    }
    Ok(())
}

/// Maps an F variate onto the beta scale, `d1 x / (d1 x + d2)`.
fn beta_argument(x: f64, d1: f64, d2: f64) -> f64 {
    if x.is_infinite() {
        return 1.0;
    }
    let num = d1 * x;
    num / (num + d2)
}

/// CDF of the central F distribution with `(d1, d2)` degrees of freedom.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> Result<f64, NumericsError> {
    check_x(x)?;
    check_df(d1, d2)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    reg_inc_beta(beta_argument(x, d1, d2), 0.5 * d1, 0.5 * d2)
}

pub fn f_quantile(u: f64, d1: f64, d2: f64) -> Result<f64, NumericsError> {
    f_quantile_with(u, d1, d2, &Tolerance::default())
}

/// Inverts [`f_cdf`]: doubles an upper bracket until it covers `u`, then
/// hands the bracket to Brent's method.
pub fn f_quantile_with(u: f64, d1: f64, d2: f64, tol: &Tolerance) -> Result<f64, NumericsError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(NumericsError::Domain { what: "u", value: u });
    }
    check_df(d1, d2)?;
    tol.validate()?;

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut expansions = 0;
    while f_cdf(hi, d1, d2)? < u {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > tol.max_iter || !hi.is_finite() {
            return Err(NumericsError::NoConvergence {
                routine: "f_quantile bracket",
                iterations: expansions,
                residual: u - f_cdf(lo, d1, d2)?,
            });
        }
    }

    let mut failure = None;
    let root = solve_bracketed_root(
        |x| match f_cdf(x, d1, d2) {
            Ok(p) => p - u,
            Err(e) => {
                failure = Some(e);
                f64::NAN
            }
        },
        lo,
        hi,
        tol,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    root
}

pub fn noncentral_f_cdf(x: f64, d1: f64, d2: f64, ncp: f64) -> Result<f64, NumericsError> {
    noncentral_f_cdf_with(x, d1, d2, ncp, &Tolerance::default())
}

/// CDF of the noncentral F distribution as a Poisson(`ncp / 2`) mixture of
/// incomplete beta functions,
///
/// `sum_j w_j * I_y(d1/2 + j, d2/2)`, `y = d1 x / (d1 x + d2)`.
///
/// Summation starts at the Poisson mode and walks outward, always taking
/// the heavier of the two neighbouring weights. Past the mode the weights
/// on each side decay at least geometrically, which bounds the unvisited
/// mass; the walk stops once that bound drops below `tol.abs_tol`. Every
/// beta term lies in `[0, 1]`, so the same bound covers the truncation
/// error. The bound uses the weights themselves rather than `1 - mass`,
/// which stalls when rounding in the mode weight exceeds the tolerance.
pub fn noncentral_f_cdf_with(
    x: f64,
    d1: f64,
    d2: f64,
    ncp: f64,
    tol: &Tolerance,
) -> Result<f64, NumericsError> {
    check_x(x)?;
    check_df(d1, d2)?;
    if !(ncp >= 0.0) || !ncp.is_finite() {
        return Err(NumericsError::Domain { what: "ncp", value: ncp });
    }
    tol.validate()?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if ncp == 0.0 {
        return f_cdf(x, d1, d2);
    }

    let y = beta_argument(x, d1, d2);
    let a = 0.5 * d1;
    let b = 0.5 * d2;
    let lambda = 0.5 * ncp;

    let mode = lambda.floor();
    let w_mode = (-lambda + mode * lambda.ln() - ln_gamma(mode + 1.0)).exp();
    let mode = mode as usize;

    let mut mass = w_mode;
    let mut sum = w_mode * reg_inc_beta(y, a + mode as f64, b)?;
    let mut terms = 1usize;

    // next candidates on each side
    let mut up_j = mode + 1;
    let mut up_w = w_mode * lambda / up_j as f64;
    let mut down_j = mode; // index just above the next downward term
    let mut down_w = if mode > 0 { w_mode * mode as f64 / lambda } else { 0.0 };

    let tail_bound = |up_j: usize, up_w: f64, down_j: usize, down_w: f64| {
        // weights after up_j shrink by at most lambda / (up_j + 1) per step
        let up_ratio = lambda / (up_j + 1) as f64;
        let up = if up_ratio < 1.0 { up_w / (1.0 - up_ratio) } else { f64::INFINITY };
        let down = if down_j == 0 {
            0.0
        } else {
            let ratio = (down_j - 1) as f64 / lambda;
            if ratio < 1.0 { down_w / (1.0 - ratio) } else { f64::INFINITY }
        };
        up + down
    };

    loop {
        let bound = tail_bound(up_j, up_w, down_j, down_w);
        if bound <= tol.abs_tol {
            break;
        }
        if terms >= tol.series_terms_cap {
            return Err(NumericsError::TruncationCap {
                terms,
                partial_sum: sum,
                tail_bound: bound.min(1.0),
            });
        }
        let go_down = down_j > 0 && down_w >= up_w;
        if go_down {
            let j = down_j - 1;
            sum += down_w * reg_inc_beta(y, a + j as f64, b)?;
            mass += down_w;
            down_j = j;
            down_w = if j > 0 { down_w * j as f64 / lambda } else { 0.0 };
        } else {
            let j = up_j;
            sum += up_w * reg_inc_beta(y, a + j as f64, b)?;
            mass += up_w;
            up_j += 1;
            up_w *= lambda / up_j as f64;
        }
        terms += 1;
    }

    // absorbs rounding in the mode weight
    let sum = sum / mass;
    Ok(sum.clamp(0.0, 1.0))
}
