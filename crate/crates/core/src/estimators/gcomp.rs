//! Sequential regression (g-computation) estimators.

use super::{first_time_mean, Context, CurveEstimate, EstimationError, EstimatorKind, FitCounts, Fitting};
use crate::rng::derive_seed;

pub(super) fn finish(
    ctx: &Context,
    kind: EstimatorKind,
    calibrated: bool,
    estimates: Vec<f64>,
    influence: Option<Vec<Vec<f64>>>,
    fit_counts: FitCounts,
) -> CurveEstimate {
    let tau = ctx.long.horizon;
    CurveEstimate {
        estimator: kind,
        calibrated,
        outcome_times: (2..=tau + 1).collect(),
        estimates,
        influence,
        fit_counts,
        wall_time_secs: 0.0,
        weights: Vec::new(),
        warnings: Vec::new(),
    }
}

/// One regression per outcome time and treatment time, `τ(τ+1)/2` in all.
pub(super) fn sequential(ctx: &Context) -> Result<CurveEstimate, EstimationError> {
    let long = ctx.long;
    let tau = long.horizon;
    let mut counts = FitCounts::default();
    let mut estimates = Vec::with_capacity(tau);
    let mut values = vec![f64::NAN; long.len()];
    for t in 1..=tau {
        for s in (1..=t).rev() {
            let lag = t - s;
            let rows = long.rows_at(s);
            let y: Vec<f64> = rows.iter().map(|&r| ctx.training_target(r, lag, &values)).collect();
            let seed = derive_seed(ctx.opts.seed, 0x5100 + (t * 64 + s) as u64);
            let pred = ctx.fit_outcome(&rows, &y, lag, Fitting::Plain, seed)?;
            counts.outcome += pred.fitted as usize;
            for (&r, v) in rows.iter().zip(pred.shifted) {
                values[r] = v;
            }
        }
        estimates.push(first_time_mean(long, &values).0);
    }
    Ok(finish(ctx, EstimatorKind::Sr, false, estimates, None, counts))
}

/// One regression per lag, pooled over all treatment times, `τ` in all.
pub(super) fn smoothed(ctx: &Context) -> Result<CurveEstimate, EstimationError> {
    let long = ctx.long;
    let tau = long.horizon;
    let mut counts = FitCounts::default();
    let mut estimates = Vec::with_capacity(tau);
    let mut previous = vec![f64::NAN; long.len()];
    for lag in 0..tau {
        let rows: Vec<usize> = (0..long.len()).filter(|&r| long.time[r] + lag <= tau).collect();
        let y: Vec<f64> = rows.iter().map(|&r| ctx.training_target(r, lag, &previous)).collect();
        let seed = derive_seed(ctx.opts.seed, 0x5200 + lag as u64);
        let pred = ctx.fit_outcome(&rows, &y, lag, Fitting::Plain, seed)?;
        counts.outcome += pred.fitted as usize;
        let mut current = vec![f64::NAN; long.len()];
        for (&r, v) in rows.iter().zip(pred.shifted) {
            current[r] = v;
        }
        estimates.push(first_time_mean(long, &current).0);
        previous = current;
    }
    Ok(finish(ctx, EstimatorKind::SmoothedSr, false, estimates, None, counts))
}
