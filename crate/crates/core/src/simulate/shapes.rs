use super::{EffectShape, VarianceTrend};

/// Peak-normalized value of a misspecified effect shape on a 1-based day.
fn shape_on_day(shape: EffectShape, day: u32, days: u32) -> f64 {
    let d = day as f64;
    let total = days as f64;
    let peak_day = total / 2.0;
    if d <= peak_day {
        return if peak_day > 1.0 { (d - 1.0) / (peak_day - 1.0) } else { 1.0 };
    }
    match shape {
        EffectShape::InClass | EffectShape::Maintained => 1.0,
        EffectShape::SlightlyDegraded => 1.0 - 0.4 * (d - peak_day) / (total - peak_day),
        EffectShape::SeverelyDegraded => {
            let zero_day = 0.8 * total;
            if d >= zero_day || zero_day <= peak_day {
                0.0
            } else {
                1.0 - (d - peak_day) / (zero_day - peak_day)
            }
        }
    }
}

/// Per-decision-time effect for one of the piecewise-linear shapes, constant
/// within each day and scaled so that its mean equals `mean_effect`.
///
/// [`EffectShape::InClass`] has no intrinsic shape; it is treated as
/// [`EffectShape::Maintained`] here.
pub fn effect_shape_curve(shape: EffectShape, days: u32, per_day: u32, mean_effect: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=days).map(|day| shape_on_day(shape, day, days)).collect();
    let raw_mean = raw.iter().sum::<f64>() / days as f64;
    let scale = if raw_mean > 0.0 { mean_effect / raw_mean } else { 0.0 };
    raw.iter()
        .flat_map(|&v| std::iter::repeat_n(v * scale, per_day as usize))
        .collect()
}

/// Average conditional variance per decision time, rescaled to mean one.
pub fn variance_trend_curve(trend: VarianceTrend, total_times: usize) -> Vec<f64> {
    let frac = |t: usize| {
        if total_times > 1 {
            t as f64 / (total_times - 1) as f64
        } else {
            0.5
        }
    };
    let raw: Vec<f64> = (0..total_times)
        .map(|t| match trend {
            VarianceTrend::Flat => 1.0,
            VarianceTrend::Increasing => 0.5 + frac(t),
            VarianceTrend::Decreasing => 1.5 - frac(t),
            VarianceTrend::Jump => {
                if 2 * t < total_times {
                    0.5
                } else {
                    1.5
                }
            }
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / total_times.max(1) as f64;
    raw.into_iter().map(|v| v / mean).collect()
}
