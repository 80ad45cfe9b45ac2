//! Effect-curve estimators: sequential and time-smoothed g-computation,
//! the time-smoothed sequentially doubly robust estimator, and a per-time
//! doubly robust benchmark.

mod gcomp;
mod pseudo;
mod sdr;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    apply_policy, to_long, DataError, FoldPartition, LongDataset, OutcomeKind, TreatmentColumn,
    WideDataset,
};
use crate::isotonic::{calibrate, IsotonicError};
use crate::learners::{crossfit, LearnerConfig, LearnerError, Loss, RegressionTask};
use crate::nuisance::{NuisanceError, RatioMethod};
use crate::policy::Policy;

pub use pseudo::{pseudo_outcome, PseudoTerm};

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Isotonic(#[from] IsotonicError),
    #[error("every non-zero weight exceeds the truncation level {cap}")]
    AllWeightsTruncated { cap: f64 },
    #[error("invalid option: {0}")]
    InvalidOption(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Sequential regression, one fit per outcome and time.
    Sr,
    /// Sequential regression pooled along each lag.
    SmoothedSr,
    /// Time-smoothed sequentially doubly robust estimator.
    Sdr,
    /// Doubly robust estimator run separately for each outcome time.
    Benchmark,
}

impl EstimatorKind {
    pub fn is_doubly_robust(self) -> bool {
        matches!(self, EstimatorKind::Sdr | EstimatorKind::Benchmark)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorOptions {
    /// Number of lagged time points kept in the history.
    pub markov_order: usize,
    /// Cross-fitting folds.
    pub folds: usize,
    /// Each weight factor is capped at this value.
    pub truncation: f64,
    /// Isotonic calibration of the pooled outcome regressions.
    pub calibrate: bool,
    pub ratio_method: RatioMethod,
    pub learner: LearnerConfig,
    pub seed: u64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            markov_order: 1,
            folds: 5,
            truncation: 50.0,
            calibrate: true,
            ratio_method: RatioMethod::Classification,
            learner: LearnerConfig::default(),
            seed: 1,
        }
    }
}

impl EstimatorOptions {
    fn validate(&self) -> Result<(), EstimationError> {
        if self.folds < 2 {
            return Err(EstimationError::InvalidOption(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        if !(self.truncation > 0.0) {
            return Err(EstimationError::InvalidOption(format!(
                "truncation must be positive, got {}",
                self.truncation
            )));
        }
        Ok(())
    }
}

/// Number of model fits per nuisance, counted per call on a data subset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitCounts {
    pub outcome: usize,
    pub censoring: usize,
    pub missingness: usize,
    pub density_ratio: usize,
}

/// Weights at treatment time `time` used for outcome `Y_{outcome_time}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub outcome_time: usize,
    pub time: usize,
    pub mean: f64,
    pub max: f64,
    pub truncated_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEstimate {
    pub estimator: EstimatorKind,
    pub calibrated: bool,
    /// Outcome times `2..=τ+1`.
    pub outcome_times: Vec<usize>,
    pub estimates: Vec<f64>,
    /// Centered influence values, indexed `[time][unit]`. Doubly robust
    /// estimators only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub influence: Option<Vec<Vec<f64>>>,
    pub fit_counts: FitCounts,
    pub wall_time_secs: f64,
    #[serde(default)]
    pub weights: Vec<WeightSummary>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl CurveEstimate {
    pub fn n_units(&self) -> Option<usize> {
        self.influence.as_ref().and_then(|f| f.first()).map(|f| f.len())
    }
}

/// Known nuisance functions, used in place of fitted ones when available.
///
/// Times follow the long-data convention: `time` indexes `Z_time`, `C_time`
/// and `R_time`, and `outcome_time` is the index of the outcome `Y`.
/// Returning `None` for any row of a component makes the estimator fit that
/// component instead.
pub trait NuisanceOracle: Sync {
    /// `m_{outcome_time, time}(z, h_time)`.
    fn outcome_regression(&self, _unit: usize, _outcome_time: usize, _time: usize, _z: f64) -> Option<f64> {
        None
    }
    /// `P(C_time = 1 | Z_time, H_time)`.
    fn censoring(&self, _unit: usize, _time: usize) -> Option<f64> {
        None
    }
    /// `P(R_time = 1 | C_time = 1, Z_time, H_time)`.
    fn missingness(&self, _unit: usize, _time: usize) -> Option<f64> {
        None
    }
    /// `g^d(Z_time | H_time) / g(Z_time | H_time)` at the observed treatment.
    fn density_ratio(&self, _unit: usize, _time: usize) -> Option<f64> {
        None
    }
}

/// Oracle that knows nothing.
pub struct NoOracle;

impl NuisanceOracle for NoOracle {}

impl<O: NuisanceOracle + ?Sized> NuisanceOracle for Box<O> {
    fn outcome_regression(&self, unit: usize, outcome_time: usize, time: usize, z: f64) -> Option<f64> {
        (**self).outcome_regression(unit, outcome_time, time, z)
    }
    fn censoring(&self, unit: usize, time: usize) -> Option<f64> {
        (**self).censoring(unit, time)
    }
    fn missingness(&self, unit: usize, time: usize) -> Option<f64> {
        (**self).missingness(unit, time)
    }
    fn density_ratio(&self, unit: usize, time: usize) -> Option<f64> {
        (**self).density_ratio(unit, time)
    }
}

/// Estimates the curve `t ↦ E[Y_{t+1}(d)]` for `t = 1..=τ`.
pub fn estimate(
    ds: &WideDataset,
    policy: &Policy,
    kind: EstimatorKind,
    opts: &EstimatorOptions,
) -> Result<CurveEstimate, EstimationError> {
    estimate_with_oracle(ds, policy, kind, opts, &NoOracle)
}

/// As [`estimate`], with nuisance components taken from `oracle` when it
/// provides them.
pub fn estimate_with_oracle(
    ds: &WideDataset,
    policy: &Policy,
    kind: EstimatorKind,
    opts: &EstimatorOptions,
    oracle: &dyn NuisanceOracle,
) -> Result<CurveEstimate, EstimationError> {
    opts.validate()?;
    let start = Instant::now();
    let wide = apply_policy(ds, policy)?;
    let long = to_long(&wide, opts.markov_order)?;
    let ctx = Context {
        wide: &wide,
        long: &long,
        policy,
        opts,
        oracle,
        range: outcome_range(&long, wide.spec().outcome_kind),
        survival: wide.spec().outcome_kind == OutcomeKind::Survival,
    };
    let mut est = match kind {
        EstimatorKind::Sr => gcomp::sequential(&ctx)?,
        EstimatorKind::SmoothedSr => gcomp::smoothed(&ctx)?,
        EstimatorKind::Sdr => sdr::smoothed(&ctx)?,
        EstimatorKind::Benchmark => sdr::benchmark(&ctx)?,
    };
    let mut warnings: Vec<String> = wide.warnings().to_vec();
    for w in est.warnings.drain(..) {
        if !warnings.contains(&w) {
            warnings.push(w);
        }
    }
    est.warnings = warnings;
    est.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(est)
}

pub(crate) struct Context<'a> {
    pub wide: &'a WideDataset,
    pub long: &'a LongDataset,
    pub policy: &'a Policy,
    pub opts: &'a EstimatorOptions,
    pub oracle: &'a dyn NuisanceOracle,
    /// Bounds for calibrated regressions.
    pub range: (f64, f64),
    pub survival: bool,
}

fn outcome_range(long: &LongDataset, kind: OutcomeKind) -> (f64, f64) {
    match kind {
        OutcomeKind::Survival => (0.0, 1.0),
        OutcomeKind::Numeric => {
            let (lo, hi) = long
                .outcome
                .iter()
                .filter(|v| v.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if lo <= hi {
                (lo, hi)
            } else {
                (0.0, 0.0)
            }
        }
    }
}

/// Outcome regression predictions at the observed and shifted treatments.
pub(crate) struct OutcomePredictions {
    pub observed: Vec<f64>,
    pub shifted: Vec<f64>,
    /// False when the oracle supplied the values.
    pub fitted: bool,
}

pub(crate) enum Fitting<'a> {
    /// One model on all training rows, predictions in-sample.
    Plain,
    /// Cross-fitted; observed predictions are out-of-fold.
    CrossFit {
        partition: &'a FoldPartition,
        bound: Bound,
    },
}

/// How cross-fitted predictions are kept inside the outcome range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Bound {
    None,
    Clamp,
    Isotonic,
}

impl Context<'_> {
    /// Regresses `y` (aligned with `rows`; non-finite entries are excluded
    /// from training) on the design, for outcome `Y_{t+1}` with
    /// `t = time + lag` at each row.
    pub fn fit_outcome(
        &self,
        rows: &[usize],
        y: &[f64],
        lag: usize,
        fitting: Fitting,
        seed: u64,
    ) -> Result<OutcomePredictions, EstimationError> {
        let long = self.long;
        if let Some(mut pred) = self.oracle_outcome(rows, lag) {
            self.zero_after_event(rows, &mut pred.observed);
            self.zero_after_event(rows, &mut pred.shifted);
            return Ok(pred);
        }
        let train: Vec<usize> = (0..rows.len()).filter(|&k| y[k].is_finite()).collect();
        let x_obs = long.design(rows, TreatmentColumn::Observed);
        let x_shift = long.design(rows, TreatmentColumn::Shifted);
        let y: Vec<f64> = y.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
        let task = RegressionTask::new(&x_obs, &y, &train, Loss::Squared);
        let (mut observed, mut shifted) = match fitting {
            Fitting::Plain => {
                let model = self.opts.learner.fit(&task, seed)?;
                (model.predict(&x_obs), model.predict(&x_shift))
            }
            Fitting::CrossFit { partition, bound } => {
                let units: Vec<usize> = rows.iter().map(|&r| long.unit[r]).collect();
                let (model, oof) = crossfit(&task, &units, partition, &self.opts.learner, seed)?;
                let mut shifted = model.predict(&x_shift, &units);
                let mut observed = oof;
                if bound == Bound::Clamp {
                    for v in observed.iter_mut().chain(shifted.iter_mut()) {
                        *v = v.clamp(self.range.0, self.range.1);
                    }
                }
                if bound == Bound::Isotonic {
                    let m: Vec<f64> = train.iter().map(|&k| observed[k]).collect();
                    let phi: Vec<f64> = train.iter().map(|&k| y[k]).collect();
                    let map = calibrate(&m, &phi, self.range.0, self.range.1)?;
                    for v in observed.iter_mut().chain(shifted.iter_mut()) {
                        *v = map.evaluate(*v);
                    }
                }
                (observed, shifted)
            }
        };
        self.zero_after_event(rows, &mut observed);
        self.zero_after_event(rows, &mut shifted);
        Ok(OutcomePredictions {
            observed,
            shifted,
            fitted: true,
        })
    }

    fn oracle_outcome(&self, rows: &[usize], lag: usize) -> Option<OutcomePredictions> {
        let long = self.long;
        let mut observed = Vec::with_capacity(rows.len());
        let mut shifted = Vec::with_capacity(rows.len());
        for &r in rows {
            let (i, s) = (long.unit[r], long.time[r]);
            let target = s + lag + 1;
            observed.push(self.oracle.outcome_regression(i, target, s, long.treatment[r])?);
            shifted.push(self.oracle.outcome_regression(i, target, s, long.shifted[r])?);
        }
        Some(OutcomePredictions {
            observed,
            shifted,
            fitted: false,
        })
    }

    /// Survival regressions vanish once the event has happened.
    fn zero_after_event(&self, rows: &[usize], values: &mut [f64]) {
        if self.survival {
            for (v, &r) in values.iter_mut().zip(rows) {
                if self.long.at_risk[r] == 0.0 {
                    *v = 0.0;
                }
            }
        }
    }

    /// `N_{s+1} · v` with `v` read at `(unit, s + 1)`; zero when `N_{s+1} = 0`.
    pub fn carried(&self, row: usize, values: &[f64]) -> f64 {
        let long = self.long;
        let n = long.next_at_risk[row];
        if n == 0.0 {
            return 0.0;
        }
        let next = long
            .row(long.unit[row], long.time[row] + 1)
            .expect("unit remains under follow-up");
        n * values[next]
    }

    /// Rows used to train a regression at `row`: uncensored and at risk.
    pub fn trains_on(&self, row: usize) -> bool {
        let long = self.long;
        long.censoring[row] == 1.0 && long.at_risk[row] == 1.0
    }

    /// Training target at `row` for a regression at `lag`: the outcome on
    /// the diagonal, otherwise the previous step's values carried back one
    /// time point. Non-finite where the row is excluded.
    pub fn training_target(&self, row: usize, lag: usize, previous: &[f64]) -> f64 {
        if lag == 0 {
            self.observed_outcome(row)
        } else if self.trains_on(row) {
            self.carried(row, previous)
        } else {
            f64::NAN
        }
    }

    /// Outcome training target at lag 0.
    pub fn observed_outcome(&self, row: usize) -> f64 {
        let long = self.long;
        if self.trains_on(row) && long.measurement[row] == 1.0 {
            long.outcome[row]
        } else {
            f64::NAN
        }
    }
}

/// Mean over units of `values` at time 1, and the centered per-unit values.
pub(crate) fn first_time_mean(long: &LongDataset, values: &[f64]) -> (f64, Vec<f64>) {
    let per_unit: Vec<f64> = (0..long.n_units)
        .map(|i| values[long.row(i, 1).expect("every unit is seen at time 1")])
        .collect();
    let mean = per_unit.iter().sum::<f64>() / per_unit.len() as f64;
    (mean, per_unit.into_iter().map(|v| v - mean).collect())
}

#[cfg(test)]
mod tests;
