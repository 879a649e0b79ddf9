//! Macro (aggregate fraction) and micro (per-country correctness) measures,
//! error curves and ensemble statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("series has zero variance")]
    ZeroVariance,
}

/// Fraction of countries in lockdown.
pub fn macro_fraction(status: &[bool]) -> f64 {
    status.iter().filter(|&&s| s).count() as f64 / status.len() as f64
}

/// Fraction of countries whose status matches the observation.
pub fn micro_accuracy(status: &[bool], observation: &[bool]) -> f64 {
    debug_assert_eq!(status.len(), observation.len());
    let correct = status.iter().zip(observation).filter(|(a, b)| a == b).count();
    correct as f64 / status.len() as f64
}

/// Per-day squared difference between predicted and observed fractions.
pub fn mse_curve(mean_fractions: &[f64], observed: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if mean_fractions.len() != observed.len() {
        return Err(MetricsError::LengthMismatch(mean_fractions.len(), observed.len()));
    }
    Ok(mean_fractions
        .iter()
        .zip(observed)
        .map(|(m, o)| (m - o) * (m - o))
        .collect())
}

/// Plain sum of a per-day error curve (unit day spacing).
pub fn summed_mse(mse: &[f64]) -> f64 {
    mse.iter().sum()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_std(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() as f64 - 1.0)).sqrt()
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn pearson_correlation(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(MetricsError::TooFew { needed: 2, got: a.len() });
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Per-day ensemble statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub per_day_mean_fraction: Vec<f64>,
    pub per_day_std: Vec<f64>,
    /// Central 50% band (25th to 75th percentile).
    pub per_day_ci50: Vec<(f64, f64)>,
    /// Central 95% band (2.5th to 97.5th percentile).
    pub per_day_ci95: Vec<(f64, f64)>,
    pub per_day_micro_accuracy_mean: Vec<f64>,
    pub per_day_micro_accuracy_std: Vec<f64>,
}

impl EnsembleSummary {
    pub fn days(&self) -> usize {
        self.per_day_mean_fraction.len()
    }
}

/// Summarizes an ensemble.
///
/// Both arguments are day-major: `fractions[d]` holds the macro fraction of
/// every member on day `d`, `accuracies[d]` their micro accuracy.
pub fn summarize_ensemble(
    fractions: &[Vec<f64>],
    accuracies: &[Vec<f64>],
) -> Result<EnsembleSummary, MetricsError> {
    if fractions.len() != accuracies.len() {
        return Err(MetricsError::LengthMismatch(fractions.len(), accuracies.len()));
    }
    let days = fractions.len();
    let mut s = EnsembleSummary {
        per_day_mean_fraction: Vec::with_capacity(days),
        per_day_std: Vec::with_capacity(days),
        per_day_ci50: Vec::with_capacity(days),
        per_day_ci95: Vec::with_capacity(days),
        per_day_micro_accuracy_mean: Vec::with_capacity(days),
        per_day_micro_accuracy_std: Vec::with_capacity(days),
    };
    for (frac, acc) in fractions.iter().zip(accuracies) {
        if frac.len() < 2 {
            return Err(MetricsError::TooFew { needed: 2, got: frac.len() });
        }
        if acc.len() != frac.len() {
            return Err(MetricsError::LengthMismatch(frac.len(), acc.len()));
        }
        let mut sorted = frac.clone();
        sorted.sort_by(f64::total_cmp);
        s.per_day_mean_fraction.push(mean(frac));
        s.per_day_std.push(sample_std(frac));
        s.per_day_ci50
            .push((quantile_sorted(&sorted, 0.25), quantile_sorted(&sorted, 0.75)));
        s.per_day_ci95
            .push((quantile_sorted(&sorted, 0.025), quantile_sorted(&sorted, 0.975)));
        s.per_day_micro_accuracy_mean.push(mean(acc));
        s.per_day_micro_accuracy_std.push(sample_std(acc));
    }
    Ok(s)
}

/// Mean over members of each member's own squared error, per day.
/// `fractions` is day-major as in [`summarize_ensemble`].
pub fn per_member_mse_curve(fractions: &[Vec<f64>], observed: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if fractions.len() != observed.len() {
        return Err(MetricsError::LengthMismatch(fractions.len(), observed.len()));
    }
    Ok(fractions
        .iter()
        .zip(observed)
        .map(|(day, o)| day.iter().map(|f| (f - o) * (f - o)).sum::<f64>() / day.len() as f64)
        .collect())
}

/// Shannon entropy (nats) of a normalized weight vector.
pub fn weight_entropy(weights: &[f64]) -> f64 {
    -weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|w| w * w.ln())
        .sum::<f64>()
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooFew { needed: 2, got: x.len() });
    }
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok(sxy / sxx)
}
