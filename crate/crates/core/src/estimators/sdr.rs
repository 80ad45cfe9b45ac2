//! Sequentially doubly robust estimators.

use super::gcomp::finish;
use super::{
    first_time_mean, pseudo_outcome, Bound, Context, CurveEstimate, EstimationError, EstimatorKind, FitCounts,
    Fitting, PseudoTerm, WeightSummary,
};
use crate::data::{fold_split, FoldPartition, LongDataset};
use crate::nuisance::{
    compute_weights, estimate_density_ratio, fit_censoring, fit_missingness, NuisanceInput,
};
use crate::rng::derive_seed;

/// Full-length weight factors; rows without a value hold zero.
struct Weights {
    off: Vec<f64>,
    diag: Vec<f64>,
    off_truncated: Vec<bool>,
    diag_truncated: Vec<bool>,
}

impl Weights {
    fn new(len: usize) -> Self {
        Weights {
            off: vec![0.0; len],
            diag: vec![0.0; len],
            off_truncated: vec![false; len],
            diag_truncated: vec![false; len],
        }
    }

    fn summary(&self, long: &LongDataset, t: usize, s: usize) -> WeightSummary {
        let rows = long.rows_at(s);
        let (w, flags) = if s == t {
            (&self.diag, &self.diag_truncated)
        } else {
            (&self.off, &self.off_truncated)
        };
        let n = rows.len().max(1) as f64;
        WeightSummary {
            outcome_time: t + 1,
            time: s,
            mean: rows.iter().map(|&r| w[r]).sum::<f64>() / n,
            max: rows.iter().map(|&r| w[r]).fold(0.0, f64::max),
            truncated_fraction: rows.iter().filter(|&&r| flags[r]).count() as f64 / n,
        }
    }
}

/// Fails when weights exist but every non-zero one hit the cap.
fn check_truncation(weights: &Weights, rows: &[usize], cap: f64) -> Result<(), EstimationError> {
    let mut positive = false;
    for &r in rows {
        for (w, hit) in [(weights.off[r], weights.off_truncated[r]), (weights.diag[r], weights.diag_truncated[r])] {
            if w > 0.0 {
                positive = true;
                if !hit {
                    return Ok(());
                }
            }
        }
    }
    if positive {
        Err(EstimationError::AllWeightsTruncated { cap })
    } else {
        Ok(())
    }
}

/// Weight factors on `rows`, from the oracle where it answers and from
/// cross-fitted models otherwise. Missingness is only modelled when
/// `with_missingness` is set; otherwise it is taken as 1.
fn estimate_weights(
    ctx: &Context,
    partition: &FoldPartition,
    rows: &[usize],
    with_missingness: bool,
    seed: u64,
    weights: &mut Weights,
    counts: &mut FitCounts,
    warnings: &mut Vec<String>,
) -> Result<(), EstimationError> {
    let long = ctx.long;
    let input = NuisanceInput {
        wide: ctx.wide,
        long,
        policy: ctx.policy,
        partition,
        learner: &ctx.opts.learner,
        seed,
    };
    let oracle_column = |f: &dyn Fn(usize, usize) -> Option<f64>| -> Option<Vec<f64>> {
        rows.iter().map(|&r| f(long.unit[r], long.time[r])).collect()
    };

    let censoring = match oracle_column(&|i, t| ctx.oracle.censoring(i, t)) {
        Some(v) => v,
        None => {
            counts.censoring += 1;
            fit_censoring(&input, rows)?.values
        }
    };
    let missingness = if !with_missingness {
        vec![1.0; rows.len()]
    } else {
        match oracle_column(&|i, t| ctx.oracle.missingness(i, t)) {
            Some(v) => v,
            None => {
                counts.missingness += 1;
                fit_missingness(&input, rows)?.values
            }
        }
    };
    let oracle_ratio = oracle_column(&|i, t| {
        if ctx.policy.is_identity() || !ctx.policy.intervenes_at(t) {
            Some(1.0)
        } else {
            ctx.oracle.density_ratio(i, t)
        }
    });
    let ratio = match oracle_ratio {
        Some(v) => v,
        None => {
            counts.density_ratio += 1;
            let est = estimate_density_ratio(&input, rows, ctx.opts.ratio_method)?;
            warnings.extend(est.warnings);
            est.values
        }
    };

    let c: Vec<f64> = rows.iter().map(|&r| long.censoring[r]).collect();
    let m: Vec<f64> = rows.iter().map(|&r| long.measurement[r]).collect();
    let w = compute_weights(&ratio, &censoring, &missingness, &c, &m, ctx.opts.truncation);
    for (k, &r) in rows.iter().enumerate() {
        weights.off[r] = w.off_diagonal[k];
        weights.off_truncated[r] = w.off_truncated[k];
        weights.diag[r] = w.diagonal[k];
        weights.diag_truncated[r] = w.diagonal_truncated[k];
    }
    Ok(())
}

/// Outcome regressions by lag, all full length, with the weights.
struct Grid<'a> {
    long: &'a LongDataset,
    weights: &'a Weights,
    observed: Vec<Vec<f64>>,
    shifted: Vec<Vec<f64>>,
}

impl Grid<'_> {
    /// `φ_{t+1,s}` at `row = (i, s)` with `t = s + lag`.
    fn phi(&self, row: usize, lag: usize) -> f64 {
        let long = self.long;
        let (i, s) = (long.unit[row], long.time[row]);
        let t = s + lag;
        let mut terms = Vec::with_capacity(lag + 1);
        for k in s..=t {
            let rk = long.row(i, k).expect("positive weights keep the unit in follow-up");
            let l = t - k;
            let weight = if k == t { self.weights.diag[rk] } else { self.weights.off[rk] };
            if weight == 0.0 {
                terms.push(PseudoTerm {
                    weight,
                    next: 0.0,
                    current: 0.0,
                });
                break;
            }
            let n_next = long.next_at_risk[rk];
            let next = if n_next == 0.0 {
                0.0
            } else if k == t {
                n_next * long.outcome[rk]
            } else {
                let r1 = long.row(i, k + 1).expect("uncensored units have a next row");
                n_next * self.shifted[l - 1][r1]
            };
            terms.push(PseudoTerm {
                weight,
                next,
                current: self.observed[l][rk],
            });
        }
        pseudo_outcome(self.shifted[lag][row], &terms)
    }

    fn push(&mut self, rows: &[usize], observed: Vec<f64>, shifted: Vec<f64>) {
        let len = self.long.len();
        let mut o = vec![f64::NAN; len];
        let mut d = vec![f64::NAN; len];
        for (k, &r) in rows.iter().enumerate() {
            o[r] = observed[k];
            d[r] = shifted[k];
        }
        self.observed.push(o);
        self.shifted.push(d);
    }
}

/// Pooled over time: one outcome regression per lag and one fit per
/// treatment-side nuisance.
pub(super) fn smoothed(ctx: &Context) -> Result<CurveEstimate, EstimationError> {
    let long = ctx.long;
    let tau = long.horizon;
    let opts = ctx.opts;
    let partition = fold_split(long.n_units, opts.folds, opts.seed)?;
    let mut counts = FitCounts::default();
    let mut warnings = Vec::new();

    let all: Vec<usize> = (0..long.len()).collect();
    let mut weights = Weights::new(long.len());
    estimate_weights(
        ctx,
        &partition,
        &all,
        true,
        derive_seed(opts.seed, 0x6000),
        &mut weights,
        &mut counts,
        &mut warnings,
    )?;
    check_truncation(&weights, &all, opts.truncation)?;

    let mut grid = Grid {
        long,
        weights: &weights,
        observed: Vec::with_capacity(tau),
        shifted: Vec::with_capacity(tau),
    };
    let mut estimates = Vec::with_capacity(tau);
    let mut influence = Vec::with_capacity(tau);
    let mut previous = vec![f64::NAN; long.len()];
    for lag in 0..tau {
        let rows: Vec<usize> = all.iter().copied().filter(|&r| long.time[r] + lag <= tau).collect();
        let y: Vec<f64> = rows.iter().map(|&r| ctx.training_target(r, lag, &previous)).collect();
        let fitting = Fitting::CrossFit {
            partition: &partition,
            bound: match (opts.calibrate, lag) {
                (false, _) => Bound::None,
                (true, 0) => Bound::Clamp,
                (true, _) => Bound::Isotonic,
            },
        };
        let pred = ctx.fit_outcome(&rows, &y, lag, fitting, derive_seed(opts.seed, 0x6100 + lag as u64))?;
        counts.outcome += pred.fitted as usize;
        grid.push(&rows, pred.observed, pred.shifted);

        let mut phi = vec![f64::NAN; long.len()];
        for &r in &rows {
            phi[r] = grid.phi(r, lag);
        }
        let (est, infl) = first_time_mean(long, &phi);
        estimates.push(est);
        influence.push(infl);
        previous = phi;
    }

    let mut out = finish(ctx, EstimatorKind::Sdr, opts.calibrate, estimates, Some(influence), counts);
    for t in 1..=tau {
        for s in 1..=t {
            out.weights.push(weights.summary(long, t, s));
        }
    }
    out.warnings = warnings;
    Ok(out)
}

/// The doubly robust estimator run on its own for each outcome time, with
/// per-time nuisance fits and no calibration.
pub(super) fn benchmark(ctx: &Context) -> Result<CurveEstimate, EstimationError> {
    let long = ctx.long;
    let tau = long.horizon;
    let opts = ctx.opts;
    let partition = fold_split(long.n_units, opts.folds, opts.seed)?;
    let mut counts = FitCounts::default();
    let mut warnings = Vec::new();
    let mut estimates = Vec::with_capacity(tau);
    let mut influence = Vec::with_capacity(tau);
    let mut summaries = Vec::new();

    for t in 1..=tau {
        let mut weights = Weights::new(long.len());
        let mut used = Vec::new();
        for s in 1..=t {
            let rows = long.rows_at(s);
            let seed = derive_seed(opts.seed, 0x7000 + (t * 64 + s) as u64);
            estimate_weights(ctx, &partition, &rows, s == t, seed, &mut weights, &mut counts, &mut warnings)?;
            used.extend(rows);
        }
        check_truncation(&weights, &used, opts.truncation)?;

        let mut grid = Grid {
            long,
            weights: &weights,
            observed: Vec::with_capacity(t),
            shifted: Vec::with_capacity(t),
        };
        let mut previous = vec![f64::NAN; long.len()];
        for lag in 0..t {
            let rows = long.rows_at(t - lag);
            let y: Vec<f64> = rows.iter().map(|&r| ctx.training_target(r, lag, &previous)).collect();
            let fitting = Fitting::CrossFit {
                partition: &partition,
                bound: Bound::None,
            };
            let seed = derive_seed(opts.seed, 0x7800 + (t * 64 + lag) as u64);
            let pred = ctx.fit_outcome(&rows, &y, lag, fitting, seed)?;
            counts.outcome += pred.fitted as usize;
            grid.push(&rows, pred.observed, pred.shifted);
            let mut phi = vec![f64::NAN; long.len()];
            for &r in &rows {
                phi[r] = grid.phi(r, lag);
            }
            previous = phi;
        }
        let (est, infl) = first_time_mean(long, &previous);
        estimates.push(est);
        influence.push(infl);
        for s in 1..=t {
            summaries.push(weights.summary(long, t, s));
        }
    }

    let mut out = finish(ctx, EstimatorKind::Benchmark, false, estimates, Some(influence), counts);
    out.weights = summaries;
    out.warnings = warnings;
    Ok(out)
}
