//! Per-interaction test statistics for the membership hypothesis test.
//!
//! The pipeline per (user, item) pair: a model's predicted probability p is
//! folded into a confidence gap q = |2p - 1|, mapped to logit space, and the
//! resulting value is located within a Gaussian fitted to the logits of
//! shadow models that did *not* train on the pair. The CDF position is the
//! membership statistic Λ in [0, 1] — large values mean the target model is
//! unusually confident compared to the OUT population.

mod normal;

pub use normal::{erf, erfc, standard_normal_cdf};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Clamp applied to the confidence gap before the logit transform so that
/// degenerate predictions (p = 0.5 exactly, or p = 0/1) stay finite.
pub const GAP_CLAMP: f64 = 1e-6;

/// Smallest standard deviation a fitted OUT distribution may report.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Fewest OUT samples accepted for a Gaussian fit.
pub const MIN_OUT_SAMPLES: usize = 30;

/// Confidence gap of a predicted interaction probability: |2p - 1|.
#[inline]
pub fn confidence_gap(p: f64) -> f64 {
    (2.0 * p - 1.0).abs()
}

/// Logit of a confidence gap, with q clamped into [GAP_CLAMP, 1 - GAP_CLAMP].
#[inline]
pub fn gap_logit(q: f64) -> f64 {
    let q = q.clamp(GAP_CLAMP, 1.0 - GAP_CLAMP);
    (q / (1.0 - q)).ln()
}

/// Convenience: model probability straight to logit-gap space.
#[inline]
pub fn probability_to_logit_gap(p: f64) -> f64 {
    gap_logit(confidence_gap(p))
}

/// Gaussian fitted to OUT-model logit gaps for one interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutDistribution {
    pub mean: f64,
    pub std: f64,
    /// Number of samples behind the fit.
    pub n: usize,
}

/// Fit mean and unbiased standard deviation to OUT logit gaps.
///
/// Requires at least [`MIN_OUT_SAMPLES`] values; the standard deviation is
/// floored at [`SIGMA_FLOOR`] so identical samples still yield a usable fit.
pub fn fit_out_distribution(samples: &[f64]) -> Result<OutDistribution> {
    if samples.len() < MIN_OUT_SAMPLES {
        return Err(Error::InsufficientOutSamples {
            got: samples.len(),
            required: MIN_OUT_SAMPLES,
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    let std = (ss / (n - 1.0)).sqrt().max(SIGMA_FLOOR);
    Ok(OutDistribution {
        mean,
        std,
        n: samples.len(),
    })
}

impl OutDistribution {
    /// Membership statistic: CDF position of a logit gap under this fit.
    #[inline]
    pub fn lambda(&self, logit_gap: f64) -> f64 {
        standard_normal_cdf((logit_gap - self.mean) / self.std)
    }
}
