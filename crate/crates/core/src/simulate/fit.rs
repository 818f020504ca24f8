use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Trajectory;
use crate::design::StudyDesign;
use crate::numerics::{f_quantile, NumericsError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Inflate each participant's residuals by `(I - H_ii)^{-1}` before
    /// forming the middle of the sandwich.
    #[serde(default)]
    pub small_sample_correction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub alpha_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub sigma_beta_hat: DMatrix<f64>,
    pub test_statistic: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("{n} participants leave no denominator degrees of freedom; need at least {min}")]
    TooFewParticipants { n: usize, min: usize },
    #[error("trajectory has {got} decision times, design has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("singular {0}")]
    Singular(&'static str),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Sufficient statistics of one participant: `sum_t I_t x x'` and `sum_t I_t x y`.
#[derive(Debug, Clone)]
pub struct ParticipantStats {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
}

/// Least-squares fit of `B_t' alpha + (A_t - rho_t) Z_t' beta` over the
/// available decision times of `N` participants, with the sandwich
/// variance and the small-sample F test.
///
/// Internally the day offset is rescaled to `g / (D - 1)`; estimates are
/// mapped back to the unscaled basis. The test statistic is invariant to
/// that reparameterization.
#[derive(Debug, Clone)]
pub struct Fitter {
    p: usize,
    q: usize,
    n: usize,
    scale: f64,
    /// `g~^j` for each decision time, `width` entries per row.
    powers: Vec<f64>,
    width: usize,
    rho: Vec<f64>,
    critical: f64,
    options: FitOptions,
}

impl Fitter {
    pub fn new(design: &StudyDesign, n: usize, alpha: f64, options: FitOptions) -> Result<Self, FitError> {
        let p = design.p();
        let q = design.q();
        if n < p + q + 1 {
            return Err(FitError::TooFewParticipants { n, min: p + q + 1 });
        }
        let scale = (design.days() as f64 - 1.0).max(1.0);
        let width = p.max(q);
        let total = design.total_times();
        let mut powers = Vec::with_capacity(total * width);
        for t in 0..total {
            let g = design.day_offset(t) as f64 / scale;
            let mut acc = 1.0;
            for _ in 0..width {
                powers.push(acc);
                acc *= g;
            }
        }
        let df2 = (n - q - p) as f64;
        let multiplier = p as f64 * (n - q - 1) as f64 / df2;
        let critical = multiplier * f_quantile(1.0 - alpha, p as f64, df2)?;
        Ok(Self {
            p,
            q,
            n,
            scale,
            powers,
            width,
            rho: design.rho().to_vec(),
            critical,
            options,
        })
    }

    /// Rejection threshold for `N b' S^{-1} b`.
    pub fn critical_value(&self) -> f64 {
        self.critical
    }

    pub fn participant_stats(&self, tr: &Trajectory) -> Result<ParticipantStats, FitError> {
        let total = self.rho.len();
        if tr.outcome.len() != total || tr.available.len() != total || tr.treatment.len() != total {
            return Err(FitError::LengthMismatch {
                expected: total,
                got: tr.outcome.len(),
            });
        }
        let k = self.p + self.q;
        let mut xtx = DMatrix::zeros(k, k);
        let mut xty = DVector::zeros(k);
        let mut x = vec![0.0; k];
        for t in 0..total {
            let Some(a) = tr.treatment[t] else { continue };
            if !tr.available[t] {
                continue;
            }
            let centered = if a { 1.0 } else { 0.0 } - self.rho[t];
            let row = &self.powers[t * self.width..(t + 1) * self.width];
            x[..self.q].copy_from_slice(&row[..self.q]);
            for j in 0..self.p {
                x[self.q + j] = centered * row[j];
            }
            let y = tr.outcome[t];
            for i in 0..k {
                xty[i] += x[i] * y;
                for j in 0..=i {
                    xtx[(i, j)] += x[i] * x[j];
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                xtx[(j, i)] = xtx[(i, j)];
            }
        }
        Ok(ParticipantStats { xtx, xty })
    }

    pub fn fit(&self, stats: &[ParticipantStats]) -> Result<FitResult, FitError> {
        if stats.len() != self.n {
            return Err(FitError::TooFewParticipants {
                n: stats.len(),
                min: self.n,
            });
        }
        let k = self.p + self.q;
        let mut total_xtx = DMatrix::zeros(k, k);
        let mut total_xty = DVector::zeros(k);
        for s in stats {
            total_xtx += &s.xtx;
            total_xty += &s.xty;
        }
        let chol = total_xtx.clone().cholesky().ok_or(FitError::Singular("design matrix"))?;
        let theta = chol.solve(&total_xty);
        let inverse = chol.inverse();

        let mut meat = DMatrix::zeros(k, k);
        for s in stats {
            // X_i' e_i = X_i' y_i - X_i' X_i theta
            let mut score = &s.xty - &s.xtx * &theta;
            if self.options.small_sample_correction {
                // X_i' (I - H_ii)^{-1} e_i = score + S_i (S - S_i)^{-1} score
                let rest = (&total_xtx - &s.xtx)
                    .cholesky()
                    .ok_or(FitError::Singular("leave-one-participant-out design matrix"))?;
                score = &score + &s.xtx * rest.solve(&score);
            }
            meat += &score * score.transpose();
        }
        // Q^{-1} Lambda Q^{-1} with Q = S / N and Lambda = meat / N
        let sandwich = &inverse * &meat * &inverse * self.n as f64;

        let beta_scaled = theta.rows(self.q, self.p).into_owned();
        let sigma_beta_scaled = sandwich.view((self.q, self.q), (self.p, self.p)).into_owned();
        let sigma_inv = sigma_beta_scaled
            .clone()
            .cholesky()
            .ok_or(FitError::Singular("sandwich variance"))?;
        let test_statistic = self.n as f64 * beta_scaled.dot(&sigma_inv.solve(&beta_scaled));

        let unscale = |j: usize| self.scale.powi(-(j as i32));
        let alpha_hat = (0..self.q).map(|j| theta[j] * unscale(j)).collect();
        let beta_hat = (0..self.p).map(|j| beta_scaled[j] * unscale(j)).collect();
        let sigma_beta_hat =
            DMatrix::from_fn(self.p, self.p, |i, j| sigma_beta_scaled[(i, j)] * unscale(i) * unscale(j));

        Ok(FitResult {
            alpha_hat,
            beta_hat,
            sigma_beta_hat,
            test_statistic,
            reject: test_statistic > self.critical,
        })
    }
}

pub fn wls_fit(
    trajectories: &[Trajectory],
    design: &StudyDesign,
    alpha: f64,
    options: FitOptions,
) -> Result<FitResult, FitError> {
    let fitter = Fitter::new(design, trajectories.len(), alpha, options)?;
    let stats = trajectories
        .iter()
        .map(|tr| fitter.participant_stats(tr))
        .collect::<Result<Vec<_>, _>>()?;
    fitter.fit(&stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, DesignInputs, RandomizationSchedule};
    use crate::simulate::{GenerativeModel, Simulator};
    use crate::trends::TrendSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quad_design() -> StudyDesign {
        build_design(&DesignInputs {
            days: 30,
            per_day: 4,
            randomization: RandomizationSchedule::Constant { probability: 0.4 },
            availability: TrendSpec::Constant { average: 0.8 },
            effect: TrendSpec::Quadratic {
                average: 0.2,
                initial: 0.05,
                changing_point: 16,
            },
            q: None,
        })
        .unwrap()
    }

    #[test]
    fn noiseless_fit_recovers_beta() {
        let d = quad_design();
        let sim = Simulator::new(
            &d,
            &GenerativeModel {
                noise_scale: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trs: Vec<_> = (0..12).map(|_| sim.trajectory(&mut rng)).collect();
        let fit = wls_fit(&trs, &d, 0.05, FitOptions::default()).unwrap();
        for (got, want) in fit.beta_hat.iter().zip(d.effect_coefficients()) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        assert!(fit.alpha_hat.iter().all(|a| a.abs() < 1e-10));
    }

    /// Direct evaluation of the sandwich with explicit per-participant
    /// design matrices in the unscaled basis.
    fn brute_force(trs: &[Trajectory], d: &StudyDesign, correct: bool) -> (Vec<f64>, DMatrix<f64>, f64) {
        let (p, q) = (d.p(), d.q());
        let k = p + q;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for tr in trs {
            let rows: Vec<usize> = (0..tr.outcome.len()).filter(|&t| tr.available[t]).collect();
            let x = DMatrix::from_fn(rows.len(), k, |r, c| {
                let t = rows[r];
                let g = d.day_offset(t) as f64;
                if c < q {
                    g.powi(c as i32)
                } else {
                    let a = if tr.treatment[t].unwrap() { 1.0 } else { 0.0 };
                    (a - d.rho()[t]) * g.powi((c - q) as i32)
                }
            });
            xs.push(x);
            ys.push(DVector::from_iterator(rows.len(), rows.iter().map(|&t| tr.outcome[t])));
        }
        let n = trs.len() as f64;
        let s: DMatrix<f64> = xs.iter().map(|x| x.transpose() * x).fold(DMatrix::zeros(k, k), |a, b| a + b);
        let sinv = s.clone().try_inverse().unwrap();
        let xty: DVector<f64> = xs.iter().zip(&ys).map(|(x, y)| x.transpose() * y).fold(DVector::zeros(k), |a, b| a + b);
        let theta = &sinv * xty;
        let mut meat = DMatrix::zeros(k, k);
        for (x, y) in xs.iter().zip(&ys) {
            let mut e = y - x * &theta;
            if correct {
                let h = x * &sinv * x.transpose();
                let id = DMatrix::identity(h.nrows(), h.nrows());
                e = (id - h).try_inverse().unwrap() * e;
            }
            let sc = x.transpose() * e;
            meat += &sc * sc.transpose();
        }
        let q_inv = &sinv * n;
        let sandwich = &q_inv * (meat / n) * &q_inv;
        let beta = theta.rows(q, p).into_owned();
        let sb = sandwich.view((q, q), (p, p)).into_owned();
        let stat = n * beta.dot(&(sb.clone().try_inverse().unwrap() * &beta));
        (beta.iter().copied().collect(), sb, stat)
    }

    #[test]
    fn matches_explicit_sandwich() {
        let d = build_design(&DesignInputs {
            days: 8,
            per_day: 3,
            randomization: RandomizationSchedule::Constant { probability: 0.5 },
            availability: TrendSpec::Constant { average: 0.7 },
            effect: TrendSpec::Linear {
                average: 0.3,
                initial: 0.1,
            },
            q: Some(3),
        })
        .unwrap();
        let sim = Simulator::new(&d, &GenerativeModel::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trs: Vec<_> = (0..9).map(|_| sim.trajectory(&mut rng)).collect();
        for correct in [false, true] {
            let fit = wls_fit(
                &trs,
                &d,
                0.05,
                FitOptions {
                    small_sample_correction: correct,
                },
            )
            .unwrap();
            let (beta, sigma, stat) = brute_force(&trs, &d, correct);
            for (a, b) in fit.beta_hat.iter().zip(&beta) {
                assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
            }
            assert!((&fit.sigma_beta_hat - &sigma).abs().max() < 1e-8 * sigma.abs().max());
            assert!((fit.test_statistic - stat).abs() < 1e-8 * stat.max(1.0));
            assert!((&fit.sigma_beta_hat - fit.sigma_beta_hat.transpose()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn critical_value_includes_multiplier() {
        let d = quad_design();
        let f = Fitter::new(&d, 10, 0.05, FitOptions::default()).unwrap();
        // p = q = 3, N = 10: 3 * 6 / 4 * F^{-1}_{3,4}(0.95)
        let want = 4.5 * f_quantile(0.95, 3.0, 4.0).unwrap();
        assert!((f.critical_value() - want).abs() < 1e-12);
        assert!(matches!(
            Fitter::new(&d, 6, 0.05, FitOptions::default()),
            Err(FitError::TooFewParticipants { n: 6, min: 7 })
        ));
    }
}
