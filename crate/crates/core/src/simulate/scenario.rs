use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{FitError, FitOptions, Fitter};
use super::{GenerativeModel, SimulateError, Simulator};
use crate::design::{build_design, DesignInputs, StudyDesign};
use crate::power::PowerModel;

/// One row of a batch file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub design: DesignInputs,
    #[serde(default)]
    pub model: GenerativeModel,
    #[serde(alias = "N")]
    pub n: u32,
    #[serde(default = "default_alpha")]
    pub alpha0: f64,
    #[serde(default = "default_replications")]
    pub replications: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub small_sample_correction: bool,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_replications() -> u32 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub replications: u32,
    /// Replications whose fit succeeded.
    pub valid: u32,
    pub rejections: u32,
    /// Replications dropped because a matrix in the fit was singular.
    pub discarded: u32,
    /// `rejections / valid`.
    pub empirical_power: f64,
    pub standard_error: f64,
    pub mean_beta_hat: Vec<f64>,
    /// Analytic power at the same `N`, using the projected effect when the
    /// true curve lies outside the design's basis.
    pub analytic_power: f64,
    /// Mean of the true per-decision-time effect.
    pub mean_effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub outcome: ScenarioOutcome,
}

enum Replication {
    Fitted { reject: bool, beta_hat: Vec<f64> },
    Discarded,
}

/// Runs `replications` independent trials of `n` participants each.
///
/// Replication `r` draws from `ChaCha8Rng` seeded with `seed` on stream
/// `r`, and the per-replication results are reduced in index order, so the
/// outcome does not depend on the number of worker threads.
pub fn run_scenario(
    design: &StudyDesign,
    model: &GenerativeModel,
    n: u32,
    alpha0: f64,
    replications: u32,
    seed: u64,
    options: FitOptions,
) -> Result<ScenarioOutcome, SimulateError> {
    if replications == 0 {
        return Err(SimulateError::NoReplications);
    }
    let sim = Simulator::new(design, model)?;
    let fitter = Fitter::new(design, n as usize, alpha0, options)?;
    let analytic_power = PowerModel::new(sim.analytic_design())?.power_at(alpha0, n)?;

    let results: Vec<Result<Replication, FitError>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            let stats = (0..n)
                .map(|_| fitter.participant_stats(&sim.trajectory(&mut rng)))
                .collect::<Result<Vec<_>, _>>()?;
            match fitter.fit(&stats) {
                Ok(fit) => Ok(Replication::Fitted {
                    reject: fit.reject,
                    beta_hat: fit.beta_hat,
                }),
                Err(FitError::Singular(_)) => Ok(Replication::Discarded),
                Err(e) => Err(e),
            }
        })
        .collect();

    let p = design.p();
    let mut valid = 0u32;
    let mut rejections = 0u32;
    let mut discarded = 0u32;
    let mut beta_sum = vec![0.0; p];
    for r in results {
        match r? {
            Replication::Fitted { reject, beta_hat } => {
                valid += 1;
                rejections += reject as u32;
                for (s, b) in beta_sum.iter_mut().zip(&beta_hat) {
                    *s += b;
                }
            }
            Replication::Discarded => discarded += 1,
        }
    }

    let (empirical_power, standard_error, mean_beta_hat) = if valid > 0 {
        let ph = rejections as f64 / valid as f64;
        let se = (ph * (1.0 - ph) / valid as f64).sqrt();
        (ph, se, beta_sum.iter().map(|s| s / valid as f64).collect())
    } else {
        (f64::NAN, f64::NAN, vec![f64::NAN; p])
    };
    let effect = sim.true_effect();
    let mean_effect = effect.iter().sum::<f64>() / effect.len() as f64;

    Ok(ScenarioOutcome {
        replications,
        valid,
        rejections,
        discarded,
        empirical_power,
        standard_error,
        mean_beta_hat,
        analytic_power,
        mean_effect,
    })
}

/// Runs every scenario in order. A `seed_override` replaces each
/// scenario's seed with `seed_override + index`.
pub fn run_batch(scenarios: &[Scenario], seed_override: Option<u64>) -> Result<Vec<ScenarioReport>, SimulateError> {
    scenarios
        .iter()
        .enumerate()
        .map(|(i, sc)| {
            let mut scenario = sc.clone();
            if let Some(seed) = seed_override {
                scenario.seed = seed.wrapping_add(i as u64);
            }
            let design = build_design(&scenario.design)?;
            let outcome = run_scenario(
                &design,
                &scenario.model,
                scenario.n,
                scenario.alpha0,
                scenario.replications,
                scenario.seed,
                FitOptions {
                    small_sample_correction: scenario.small_sample_correction,
                },
            )?;
            Ok(ScenarioReport { scenario, outcome })
        })
        .collect()
}

/// Table with columns `D,K,Z,dbar,estimated_power,empirical_power,se`,
/// where `Z` is the degree of the effect polynomial.
pub fn write_report_csv<W: Write>(out: W, reports: &[ScenarioReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["D", "K", "Z", "dbar", "estimated_power", "empirical_power", "se"])?;
    for r in reports {
        let degree = r.scenario.design.effect.basis_dim() - 1;
        w.write_record([
            r.scenario.design.days.to_string(),
            r.scenario.design.per_day.to_string(),
            degree.to_string(),
            format!("{:.4}", r.outcome.mean_effect),
            format!("{:.4}", r.outcome.analytic_power),
            format!("{:.4}", r.outcome.empirical_power),
            format!("{:.4}", r.outcome.standard_error),
        ])?;
    }
    w.flush()?;
    Ok(())
}
