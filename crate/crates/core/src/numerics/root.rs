use super::{NumericsError, Tolerance};

/// Finds a root of `f` inside `[lo, hi]` with Brent's method
/// (bisection safeguarding secant and inverse quadratic steps).
///
/// Stops once `|f(x)| <= tol.abs_tol` or the bracket has shrunk to
/// `tol.abs_tol` (floored at a few ulps of the iterate).
pub fn solve_bracketed_root<F>(mut f: F, lo: f64, hi: f64, tol: &Tolerance) -> Result<f64, NumericsError>
where
    F: FnMut(f64) -> f64,
{
    tol.validate()?;
    if !lo.is_finite() || !hi.is_finite() {
        return Err(NumericsError::Domain {
            what: "bracket",
            value: if lo.is_finite() { hi } else { lo },
        });
    }
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa.is_nan() || fb.is_nan() {
        return Err(NumericsError::InvalidBracket { f_lo: fa, f_hi: fb });
    }
    if fa.abs() <= tol.abs_tol {
        return Ok(a);
    }
    if fb.abs() <= tol.abs_tol {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(NumericsError::InvalidBracket { f_lo: fa, f_hi: fb });
    }

    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;

    for _ in 0..tol.max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }

        let width_tol = 0.5 * tol.abs_tol.max(4.0 * f64::EPSILON * b.abs());
        let half = 0.5 * (c - b);
        if fb.abs() <= tol.abs_tol || half.abs() <= width_tol {
            return Ok(b);
        }

        if e.abs() >= width_tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                // secant
                p = 2.0 * half * s;
                q = 1.0 - s;
            } else {
                // inverse quadratic interpolation
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * half * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * half * q - (width_tol * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = half;
                e = d;
            }
        } else {
            d = half;
            e = d;
        }

        a = b;
        fa = fb;
        if d.abs() > width_tol {
            b += d;
        } else {
            b += width_tol.copysign(half);
        }
        fb = f(b);
        if fb.is_nan() {
            return Err(NumericsError::NoConvergence {
                routine: "brent",
                iterations: 0,
                residual: f64::NAN,
            });
        }
    }

    Err(NumericsError::NoConvergence {
        routine: "brent",
        iterations: tol.max_iter,
        residual: fb.abs(),
    })
}
