//! Reference implementations used only by the acceptance suite.
//!
//! Everything here is computed by a different algorithm than the library
//! uses, so agreement is evidence rather than tautology: the error
//! function comes from a Maclaurin series and a Lentz continued fraction
//! instead of rational approximations, the interaction score from an
//! exhaustive threshold enumeration instead of a sorted sweep, and user
//! means from Neumaier summation.

#![allow(dead_code)]
// Spot-check constants keep their full published digits.
#![allow(clippy::excessive_precision)]

use std::f64::consts::PI;

/// Maclaurin series for erf, used for |x| <= 2 where it is
/// well-conditioned: erf(x) = 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1)).
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x; // x^(2n+1) / n!
    let mut sum = 0.0;
    let mut n = 0u32;
    loop {
        let contrib = term / (2 * n + 1) as f64 * if n.is_multiple_of(2) { 1.0 } else { -1.0 };
        sum += contrib;
        if n > 4 && contrib.abs() < 1e-18 {
            break;
        }
        n += 1;
        term *= x2 / n as f64;
    }
    2.0 / PI.sqrt() * sum
}

/// Lentz continued fraction for erfc, used for x > 2 where the series
/// cancels badly: erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))).
fn erfc_continued_fraction(x: f64) -> f64 {
    let mut f = x;
    let mut c = f;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        if d == 0.0 {
            d = 1e-300;
        }
        c = x + a / c;
        if c == 0.0 {
            c = 1e-300;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x * x).exp() / (PI.sqrt() * f)
}

pub fn erf_reference(x: f64) -> f64 {
    if x < 0.0 {
        return -erf_reference(-x);
    }
    if x <= 2.0 {
        erf_series(x)
    } else {
        1.0 - erfc_continued_fraction(x)
    }
}

pub fn erfc_reference(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc_reference(-x);
    }
    if x <= 2.0 {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

pub fn normal_cdf_reference(z: f64) -> f64 {
    0.5 * erfc_reference(-z / std::f64::consts::SQRT_2)
}

/// The clamp the library applies to confidence gaps before the logit.
pub const GAP_CLAMP_REFERENCE: f64 = 1e-6;

pub fn logit_gap_reference(p: f64) -> f64 {
    let q = (2.0 * p - 1.0).abs();
    let q = q.clamp(GAP_CLAMP_REFERENCE, 1.0 - GAP_CLAMP_REFERENCE);
    (q / (1.0 - q)).ln()
}

/// Exhaustive interaction score: try every OUT statistic as the
/// threshold, count strict exceedances on both sides, keep the best
/// positive log ratio over thresholds with nonzero false-positive rate.
pub fn brute_force_interaction_score(lambdas: &[f64], labels: &[bool]) -> f64 {
    let in_vals: Vec<f64> = lambdas
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&v, _)| v)
        .collect();
    let out_vals: Vec<f64> = lambdas
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&v, _)| v)
        .collect();
    let mut best = 0.0f64;
    for &t in &out_vals {
        let tpr = in_vals.iter().filter(|&&v| v > t).count() as f64 / in_vals.len() as f64;
        let fpr = out_vals.iter().filter(|&&v| v > t).count() as f64 / out_vals.len() as f64;
        if fpr > 0.0 {
            let candidate = (tpr / fpr).ln();
            if candidate > best {
                best = candidate;
            }
        }
    }
    best
}

/// Neumaier-compensated mean.
pub fn compensated_mean(xs: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in xs {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    (sum + comp) / xs.len() as f64
}

#[cfg(test)]
mod oracle_tests {
    use super::*;

    // Reference values from standard mathematical tables.
    #[test]
    fn erf_reference_hits_known_constants() {
        let known = [
            (0.5, 0.5204998778130465),
            (1.0, 0.8427007929497149),
            (2.0, 0.9953222650189527),
            (3.0, 0.9999779095030014),
            (-1.5, -0.9661051464753107),
        ];
        for (x, v) in known {
            assert!(
                (erf_reference(x) - v).abs() < 1e-15,
                "erf({x}) = {} != {v}",
                erf_reference(x)
            );
        }
        assert!((erfc_reference(3.0) - 2.2090496998585445e-5).abs() < 1e-19);
        assert!((erfc_reference(5.0) - 1.5374597944280349e-12).abs() < 1e-26);
        assert!((normal_cdf_reference(1.0) - 0.8413447460685429).abs() < 1e-15);
        assert!((normal_cdf_reference(0.0) - 0.5).abs() < 1e-16);
    }
}
