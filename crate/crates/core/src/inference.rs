//! Pointwise intervals, curve covariance and multiplier-bootstrap uniform
//! bands from per-unit influence values.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::estimators::CurveEstimate;
use crate::rng;

pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("at least two units are needed, found {0}")]
    TooFewUnits(usize),
    #[error("at least {MIN_DRAWS} multiplier draws are needed, got {0}")]
    TooFewDraws(usize),
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("the estimate carries no influence values")]
    NoInfluence,
    #[error("influence columns have unequal lengths")]
    Ragged,
    #[error("curves differ in {0}")]
    Incompatible(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Multiplier {
    /// ±1 with probability one half each.
    #[default]
    Rademacher,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceOptions {
    pub alpha: f64,
    pub draws: usize,
    pub multiplier: Multiplier,
    pub seed: u64,
    /// Keep the estimated covariance matrix in the result.
    pub covariance: bool,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            alpha: 0.05,
            draws: 1000,
            multiplier: Multiplier::Rademacher,
            seed: 1,
            covariance: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub alpha: f64,
    pub draws: usize,
    pub multiplier: Multiplier,
    pub estimates: Vec<f64>,
    pub sigma: Vec<f64>,
    pub pointwise_lo: Vec<f64>,
    pub pointwise_hi: Vec<f64>,
    pub critical_value: f64,
    pub band_lo: Vec<f64>,
    pub band_hi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn check_influence(influence: &[Vec<f64>]) -> Result<usize, InferenceError> {
    let n = influence.first().map_or(0, Vec::len);
    if influence.iter().any(|c| c.len() != n) {
        return Err(InferenceError::Ragged);
    }
    if n < 2 {
        return Err(InferenceError::TooFewUnits(n));
    }
    Ok(n)
}

fn check_alpha(alpha: f64) -> Result<(), InferenceError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(InferenceError::InvalidAlpha(alpha))
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard deviation of each influence column, with the `n - 1` divisor.
pub fn standard_deviations(influence: &[Vec<f64>]) -> Result<Vec<f64>, InferenceError> {
    let n = check_influence(influence)?;
    Ok(influence
        .iter()
        .map(|col| {
            let m = mean(col);
            (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        })
        .collect())
}

/// `z_{1-α/2}`.
pub fn normal_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Intervals `θ̂(t) ± z_{1-α/2} σ̂(t) / √n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pointwise {
    pub sigma: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub warnings: Vec<String>,
}

pub fn pointwise_ci(estimates: &[f64], influence: &[Vec<f64>], alpha: f64) -> Result<Pointwise, InferenceError> {
    check_alpha(alpha)?;
    let sigma = standard_deviations(influence)?;
    let n = influence[0].len() as f64;
    let z = normal_quantile(alpha);
    let mut warnings = Vec::new();
    for (t, s) in sigma.iter().enumerate() {
        if *s == 0.0 {
            warnings.push(format!("influence values at position {} have zero variance", t + 1));
        }
    }
    let half: Vec<f64> = sigma.iter().map(|s| z * s / n.sqrt()).collect();
    Ok(Pointwise {
        lo: estimates.iter().zip(&half).map(|(e, h)| e - h).collect(),
        hi: estimates.iter().zip(&half).map(|(e, h)| e + h).collect(),
        sigma,
        warnings,
    })
}

/// Sample covariance of the influence columns.
pub fn covariance(influence: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, InferenceError> {
    let n = check_influence(influence)?;
    let centered: Vec<Vec<f64>> = influence
        .iter()
        .map(|c| {
            let m = mean(c);
            c.iter().map(|v| v - m).collect()
        })
        .collect();
    let k = influence.len();
    let mut cov = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in a..k {
            let v = centered[a].iter().zip(&centered[b]).map(|(x, y)| x * y).sum::<f64>() / (n - 1) as f64;
            cov[a][b] = v;
            cov[b][a] = v;
        }
    }
    Ok(cov)
}

/// `max_t |M(t)|` for each multiplier draw, over columns with positive
/// standard deviation. Draw `b` uses its own stream of `seed`.
pub fn bootstrap_maxima(
    influence: &[Vec<f64>],
    draws: usize,
    multiplier: Multiplier,
    seed: u64,
) -> Result<Vec<f64>, InferenceError> {
    if draws < MIN_DRAWS {
        return Err(InferenceError::TooFewDraws(draws));
    }
    let sigma = standard_deviations(influence)?;
    let n = influence[0].len();
    let scaled: Vec<Vec<f64>> = influence
        .iter()
        .zip(&sigma)
        .filter(|(_, s)| **s > 0.0)
        .map(|(c, s)| {
            let m = mean(c);
            c.iter().map(|v| (v - m) / (s * (n as f64).sqrt())).collect()
        })
        .collect();
    Ok((0..draws)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, b as u64);
            let xi: Vec<f64> = (0..n)
                .map(|_| match multiplier {
                    Multiplier::Rademacher => {
                        if r.random_bool(0.5) {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    Multiplier::Gaussian => r.sample(StandardNormal),
                })
                .collect();
            scaled
                .iter()
                .map(|c| c.iter().zip(&xi).map(|(v, x)| v * x).sum::<f64>().abs())
                .fold(0.0, f64::max)
        })
        .collect())
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Pointwise intervals, uniform bands and optionally the covariance for a
/// doubly robust curve estimate.
pub fn infer(est: &CurveEstimate, opts: &InferenceOptions) -> Result<InferenceResult, InferenceError> {
    let influence = est.influence.as_ref().ok_or(InferenceError::NoInfluence)?;
    infer_from(&est.estimates, influence, opts)
}

pub fn infer_from(
    estimates: &[f64],
    influence: &[Vec<f64>],
    opts: &InferenceOptions,
) -> Result<InferenceResult, InferenceError> {
    let pw = pointwise_ci(estimates, influence, opts.alpha)?;
    let maxima = bootstrap_maxima(influence, opts.draws, opts.multiplier, opts.seed)?;
    let c = quantile(&maxima, 1.0 - opts.alpha);
    let mut warnings = pw.warnings.clone();
    if pw.sigma.iter().any(|s| *s == 0.0) {
        warnings.push("zero-variance times are left out of the band maximum".to_string());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let n = influence[0].len() as f64;
    let half: Vec<f64> = pw.sigma.iter().map(|s| c * s / n.sqrt()).collect();
    Ok(InferenceResult {
        alpha: opts.alpha,
        draws: opts.draws,
        multiplier: opts.multiplier,
        estimates: estimates.to_vec(),
        band_lo: estimates.iter().zip(&half).map(|(e, h)| e - h).collect(),
        band_hi: estimates.iter().zip(&half).map(|(e, h)| e + h).collect(),
        sigma: pw.sigma,
        pointwise_lo: pw.lo,
        pointwise_hi: pw.hi,
        critical_value: c,
        covariance: if opts.covariance {
            Some(covariance(influence)?)
        } else {
            None
        },
        warnings,
    })
}

/// Difference `a - b` of two curves estimated on the same units, with
/// influence values differenced unit by unit.
pub fn contrast(a: &CurveEstimate, b: &CurveEstimate) -> Result<CurveEstimate, InferenceError> {
    let (fa, fb) = match (&a.influence, &b.influence) {
        (Some(fa), Some(fb)) => (fa, fb),
        _ => return Err(InferenceError::NoInfluence),
    };
    if a.outcome_times != b.outcome_times || fa.len() != fb.len() {
        return Err(InferenceError::Incompatible("time points"));
    }
    if fa.iter().zip(fb).any(|(x, y)| x.len() != y.len()) {
        return Err(InferenceError::Incompatible("number of units"));
    }
    let mut out = a.clone();
    out.estimates = a.estimates.iter().zip(&b.estimates).map(|(x, y)| x - y).collect();
    out.influence = Some(
        fa.iter()
            .zip(fb)
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect())
            .collect(),
    );
    out.weights.clear();
    out.wall_time_secs = a.wall_time_secs + b.wall_time_secs;
    for w in &b.warnings {
        if !out.warnings.contains(w) {
            out.warnings.push(w.clone());
        }
    }
    Ok(out)
}
