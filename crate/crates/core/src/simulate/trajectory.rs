use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT};

use super::shapes::{effect_shape_curve, variance_trend_curve};
use super::{EffectShape, ErrorLaw, GenerativeModel, SimulateError};
use crate::design::{project_effect, StudyDesign};

/// One participant's data: availability, treatment (only when available)
/// and the proximal outcome following each decision time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub available: Vec<bool>,
    pub treatment: Vec<Option<bool>>,
    pub outcome: Vec<f64>,
}

/// Precomputed generative quantities for one (design, model) pair.
#[derive(Debug, Clone)]
pub struct Simulator {
    design: StudyDesign,
    analytic_design: StudyDesign,
    model: GenerativeModel,
    true_effect: Vec<f64>,
    sigma0: Vec<f64>,
    sigma1: Vec<f64>,
    sigma_bar: Vec<f64>,
    block_factor: Option<DMatrix<f64>>,
    t3: StudentT<f64>,
}

fn invalid(field: &'static str, message: impl Into<String>) -> SimulateError {
    SimulateError::InvalidModel {
        field,
        message: message.into(),
    }
}

impl Simulator {
    pub fn new(design: &StudyDesign, model: &GenerativeModel) -> Result<Self, SimulateError> {
        if !(model.ratio > 0.0 && model.ratio.is_finite()) {
            return Err(invalid("ratio", format!("{} must be positive", model.ratio)));
        }
        if !(model.noise_scale >= 0.0 && model.noise_scale.is_finite()) {
            return Err(invalid("noise_scale", format!("{} must be nonnegative", model.noise_scale)));
        }

        let mut block_factor = None;
        match model.error_law {
            ErrorLaw::Ar { rho } if !(rho > -1.0 && rho < 1.0) => {
                return Err(invalid("error_law.rho", format!("{rho} must lie in (-1, 1)")));
            }
            ErrorLaw::CsBlock { rho } => {
                if !(rho > -1.0 && rho < 1.0) {
                    return Err(invalid("error_law.rho", format!("{rho} must lie in (-1, 1)")));
                }
                let k = design.per_day() as usize;
                let corr = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { rho });
                let chol = corr.cholesky().ok_or_else(|| {
                    invalid(
                        "error_law.rho",
                        format!("{rho} does not give a valid correlation over {k} decision times per day"),
                    )
                })?;
                block_factor = Some(chol.unpack());
            }
            _ => {}
        }

        let total = design.total_times();
        let (true_effect, analytic_design) = match model.effect_shape {
            EffectShape::InClass => (design.effect_curve(), design.clone()),
            shape => {
                let curve = effect_shape_curve(shape, design.days(), design.per_day(), design.effect_spec().average());
                let projected = project_effect(&curve, design)?;
                (curve, design.clone().with_effect_coefficients(projected)?)
            }
        };

        let var_bar = variance_trend_curve(model.variance_trend, total);
        let r2 = model.ratio * model.ratio;
        let mut sigma0 = Vec::with_capacity(total);
        let mut sigma1 = Vec::with_capacity(total);
        for (t, &v) in var_bar.iter().enumerate() {
            let rho = design.rho()[t];
            let s0 = (v / (rho * r2 + 1.0 - rho)).sqrt();
            sigma0.push(s0);
            sigma1.push(model.ratio * s0);
        }
        let sigma_bar = var_bar.iter().map(|v| v.sqrt()).collect();

        Ok(Self {
            design: design.clone(),
            analytic_design,
            model: model.clone(),
            true_effect,
            sigma0,
            sigma1,
            sigma_bar,
            block_factor,
            t3: StudentT::new(3.0).expect("3 degrees of freedom"),
        })
    }

    pub fn design(&self) -> &StudyDesign {
        &self.design
    }

    /// The design whose effect vector feeds the analytic power: the
    /// design itself for in-class effects, otherwise the projection of the
    /// true effect curve onto the design's basis.
    pub fn analytic_design(&self) -> &StudyDesign {
        &self.analytic_design
    }

    pub fn true_effect(&self) -> &[f64] {
        &self.true_effect
    }

    fn fill_errors<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self.model.error_law {
            ErrorLaw::IidNormal => {
                for e in out.iter_mut() {
                    *e = StandardNormal.sample(rng);
                }
            }
            ErrorLaw::IidT3 => {
                let scale = 1.0 / 3f64.sqrt();
                for e in out.iter_mut() {
                    *e = self.t3.sample(rng) * scale;
                }
            }
            ErrorLaw::IidCenteredExp => {
                for e in out.iter_mut() {
                    let x: f64 = Exp1.sample(rng);
                    *e = x - 1.0;
                }
            }
            ErrorLaw::Ar { rho } => {
                // Stationary AR(1) with unit marginal variance; this is the
                // Cholesky factor of rho^|s-t| applied to white noise.
                let innovation = (1.0 - rho * rho).sqrt();
                let mut prev = 0.0;
                for (t, e) in out.iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(rng);
                    prev = if t == 0 { z } else { rho * prev + innovation * z };
                    *e = prev;
                }
            }
            ErrorLaw::CsBlock { .. } => {
                let factor = self.block_factor.as_ref().expect("built for cs_block");
                let k = factor.nrows();
                let mut z = vec![0.0; k];
                for block in out.chunks_mut(k) {
                    for zi in z.iter_mut() {
                        *zi = StandardNormal.sample(rng);
                    }
                    for (i, e) in block.iter_mut().enumerate() {
                        *e = (0..=i).map(|j| factor[(i, j)] * z[j]).sum();
                    }
                }
            }
        }
    }

    /// Draws one participant. Outcomes follow
    /// `Y = (A - rho) d(t) + sigma_A(t) e_t` with `alpha* = 0`.
    pub fn trajectory<R: Rng + ?Sized>(&self, rng: &mut R) -> Trajectory {
        let total = self.design.total_times();
        let mut errors = vec![0.0; total];
        self.fill_errors(rng, &mut errors);

        let mut available = Vec::with_capacity(total);
        let mut treatment = Vec::with_capacity(total);
        let mut outcome = Vec::with_capacity(total);
        for (t, &e) in errors.iter().enumerate() {
            let avail = rng.random::<f64>() < self.design.tau(t);
            let u: f64 = rng.random();
            let rho = self.design.rho()[t];
            let (a, y) = if avail {
                let a = u < rho;
                let centered = if a { 1.0 - rho } else { -rho };
                let sigma = if a { self.sigma1[t] } else { self.sigma0[t] };
                (Some(a), centered * self.true_effect[t] + self.model.noise_scale * sigma * e)
            } else {
                (None, self.model.noise_scale * self.sigma_bar[t] * e)
            };
            available.push(avail);
            treatment.push(a);
            outcome.push(y);
        }
        Trajectory {
            available,
            treatment,
            outcome,
        }
    }
}

pub fn generate_trajectory<R: Rng + ?Sized>(
    design: &StudyDesign,
    model: &GenerativeModel,
    rng: &mut R,
) -> Result<Trajectory, SimulateError> {
    Ok(Simulator::new(design, model)?.trajectory(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, DesignInputs, RandomizationSchedule};
    use crate::trends::TrendSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn design(days: u32, per_day: u32, rho: f64, tau: f64, dbar: f64) -> StudyDesign {
        build_design(&DesignInputs {
            days,
            per_day,
            randomization: RandomizationSchedule::Constant { probability: rho },
            availability: TrendSpec::Constant { average: tau },
            effect: TrendSpec::Constant { average: dbar },
            q: None,
        })
        .unwrap()
    }

    #[test]
    fn noiseless_outcomes() {
        let d = design(10, 3, 0.5, 1.0, 0.5);
        let model = GenerativeModel {
            noise_scale: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tr = generate_trajectory(&d, &model, &mut rng).unwrap();
        for t in 0..30 {
            assert!(tr.available[t]);
            let want = if tr.treatment[t].unwrap() { 0.25 } else { -0.25 };
            assert_eq!(tr.outcome[t], want);
        }
    }

    #[test]
    fn treatment_defined_iff_available() {
        let d = design(20, 5, 0.4, 0.6, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tr = generate_trajectory(&d, &GenerativeModel::default(), &mut rng).unwrap();
        for t in 0..100 {
            assert_eq!(tr.available[t], tr.treatment[t].is_some());
        }
    }

    #[test]
    fn availability_rate() {
        let d = design(100, 10, 0.4, 0.7, 0.1);
        let sim = Simulator::new(&d, &GenerativeModel::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hits = 0usize;
        let mut total = 0usize;
        for _ in 0..100 {
            let tr = sim.trajectory(&mut rng);
            hits += tr.available.iter().filter(|&&a| a).count();
            total += tr.available.len();
        }
        assert_eq!(total, 100_000);
        let rate = hits as f64 / total as f64;
        assert!((rate - 0.7).abs() < 0.005, "{rate}");
    }

    fn errors_for(law: ErrorLaw, days: u32, per_day: u32, seed: u64) -> Vec<f64> {
        let d = design(days, per_day, 0.5, 0.7, 0.0);
        let sim = Simulator::new(
            &d,
            &GenerativeModel {
                error_law: law,
                ..Default::default()
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e = vec![0.0; d.total_times()];
        sim.fill_errors(&mut rng, &mut e);
        e
    }

    #[test]
    fn ar_lag_one_autocorrelation() {
        let e = errors_for(ErrorLaw::Ar { rho: 0.8 }, 20_000, 5, 4);
        let n = e.len() as f64;
        let mean = e.iter().sum::<f64>() / n;
        let var = e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let cov = e.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1.0);
        assert!((cov / var - 0.8).abs() < 0.02, "{}", cov / var);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn cs_block_within_and_across_days() {
        let e = errors_for(ErrorLaw::CsBlock { rho: 0.5 }, 40_000, 2, 5);
        let within = e.chunks(2).map(|c| c[0] * c[1]).sum::<f64>() / 40_000.0;
        let across = e[1..].chunks(2).filter(|c| c.len() == 2).map(|c| c[0] * c[1]).sum::<f64>() / 39_999.0;
        assert!((within - 0.5).abs() < 0.03, "{within}");
        assert!(across.abs() < 0.03, "{across}");
    }

    #[test]
    fn unit_variance_error_laws() {
        for law in [ErrorLaw::IidNormal, ErrorLaw::IidT3, ErrorLaw::IidCenteredExp] {
            let e = errors_for(law, 40_000, 5, 6);
            let n = e.len() as f64;
            let mean = e.iter().sum::<f64>() / n;
            let var = e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 0.02, "{law:?} mean {mean}");
            // t3 has infinite fourth moment, so its sample variance converges slowly
            assert!((var - 1.0).abs() < 0.1, "{law:?} var {var}");
        }
    }

    #[test]
    fn rejects_invalid_models() {
        let d = design(10, 5, 0.5, 0.7, 0.1);
        let bad = [
            GenerativeModel {
                ratio: 0.0,
                ..Default::default()
            },
            GenerativeModel {
                error_law: ErrorLaw::Ar { rho: 1.0 },
                ..Default::default()
            },
            GenerativeModel {
                error_law: ErrorLaw::CsBlock { rho: -0.5 },
                ..Default::default()
            },
        ];
        for m in bad {
            assert!(matches!(Simulator::new(&d, &m), Err(SimulateError::InvalidModel { .. })));
        }
    }

    #[test]
    fn heteroscedastic_scales_match_average_variance() {
        let d = design(20, 5, 0.4, 0.7, 0.1);
        let model = GenerativeModel {
            ratio: 1.2,
            variance_trend: crate::simulate::VarianceTrend::Increasing,
            ..Default::default()
        };
        let sim = Simulator::new(&d, &model).unwrap();
        let bar = variance_trend_curve(model.variance_trend, 100);
        for t in 0..100 {
            let mix = 0.4 * sim.sigma1[t].powi(2) + 0.6 * sim.sigma0[t].powi(2);
            assert!((mix - bar[t]).abs() < 1e-12);
            assert!((sim.sigma1[t] / sim.sigma0[t] - 1.2).abs() < 1e-12);
        }
    }
}
