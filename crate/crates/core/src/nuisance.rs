//! Cross-fitted censoring, missingness and density-ratio estimates, and the
//! sequential weights built from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FoldPartition, LongDataset, TreatmentColumn, WideDataset};
use crate::learners::{crossfit, LearnerConfig, LearnerError, Loss, RegressionTask, PROB_CLIP};
use crate::policy::{Policy, PolicyError};
use crate::rng;

/// Share of clipped classifier outputs above which overlap is flagged.
pub const OVERLAP_WARNING_FRACTION: f64 = 0.10;

#[derive(Debug, Error)]
pub enum NuisanceError {
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("the analytic density ratio needs a categorical treatment")]
    AnalyticNeedsCategorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMethod {
    /// Classifier separating observed from shifted treatments.
    Classification,
    /// Categorical treatment model pushed through the policy.
    Analytic,
}

/// Shared inputs of the nuisance fits.
#[derive(Clone, Copy)]
pub struct NuisanceInput<'a> {
    pub wide: &'a WideDataset,
    pub long: &'a LongDataset,
    pub policy: &'a Policy,
    pub partition: &'a FoldPartition,
    pub learner: &'a LearnerConfig,
    pub seed: u64,
}

/// Estimates aligned with the requested long rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceEstimate {
    pub values: Vec<f64>,
    /// True when no model was fitted because the outcome did not vary.
    pub constant: bool,
    pub warnings: Vec<String>,
}

fn fit_indicator(
    input: &NuisanceInput,
    rows: &[usize],
    indicator: &[f64],
    mask: impl Fn(usize) -> bool,
    label: u64,
) -> Result<NuisanceEstimate, NuisanceError> {
    let long = input.long;
    let train: Vec<usize> = (0..rows.len()).filter(|&k| mask(rows[k])).collect();
    let y: Vec<f64> = rows.iter().map(|&r| indicator[r]).collect();
    if train.is_empty() || train.iter().all(|&k| y[k] == 1.0) {
        return Ok(NuisanceEstimate {
            values: vec![1.0; rows.len()],
            constant: true,
            warnings: Vec::new(),
        });
    }
    let x = long.design(rows, TreatmentColumn::Observed);
    let units: Vec<usize> = rows.iter().map(|&r| long.unit[r]).collect();
    let y: Vec<f64> = y.iter().map(|v| if v.is_nan() { 0.0 } else { *v }).collect();
    let task = RegressionTask::new(&x, &y, &train, Loss::Log);
    let (_, oof) = crossfit(
        &task,
        &units,
        input.partition,
        input.learner,
        rng::derive_seed(input.seed, label),
    )?;
    Ok(NuisanceEstimate {
        values: oof.into_iter().map(|p| p.clamp(PROB_CLIP, 1.0)).collect(),
        constant: false,
        warnings: Vec::new(),
    })
}

/// `P(C_t = 1 | Z_t, H_t)`, cross-fitted over `rows` and clipped to `[1e-6, 1]`.
pub fn fit_censoring(input: &NuisanceInput, rows: &[usize]) -> Result<NuisanceEstimate, NuisanceError> {
    fit_indicator(input, rows, &input.long.censoring, |_| true, 0xC)
}

/// `P(R_t = 1 | Z_t, H_t, C_t = 1)`, fitted on rows with `C_t = 1` and
/// predicted on all of `rows`.
pub fn fit_missingness(input: &NuisanceInput, rows: &[usize]) -> Result<NuisanceEstimate, NuisanceError> {
    let c = &input.long.censoring;
    fit_indicator(input, rows, &input.long.measurement, |r| c[r] == 1.0, 0xE)
}

/// Density ratio `g^d(Z_t | H_t) / g(Z_t | H_t)` at the observed treatment.
///
/// Rows at times where the policy does not intervene get exactly 1.
pub fn estimate_density_ratio(
    input: &NuisanceInput,
    rows: &[usize],
    method: RatioMethod,
) -> Result<NuisanceEstimate, NuisanceError> {
    let long = input.long;
    let mut values = vec![1.0; rows.len()];
    let active: Vec<usize> = if input.policy.is_identity() {
        Vec::new()
    } else {
        (0..rows.len())
            .filter(|&k| input.policy.intervenes_at(long.time[rows[k]]))
            .collect()
    };
    if active.is_empty() {
        return Ok(NuisanceEstimate {
            values,
            constant: true,
            warnings: Vec::new(),
        });
    }
    let active_rows: Vec<usize> = active.iter().map(|&k| rows[k]).collect();
    let (ratios, warnings) = match method {
        RatioMethod::Classification => classification_ratio(input, &active_rows)?,
        RatioMethod::Analytic => (analytic_ratio(input, &active_rows)?, Vec::new()),
    };
    for (&k, r) in active.iter().zip(ratios) {
        values[k] = r;
    }
    Ok(NuisanceEstimate {
        values,
        constant: false,
        warnings,
    })
}

fn classification_ratio(
    input: &NuisanceInput,
    rows: &[usize],
) -> Result<(Vec<f64>, Vec<String>), NuisanceError> {
    let long = input.long;
    let n = rows.len();
    let x = long
        .design(rows, TreatmentColumn::Observed)
        .vstack(&long.design(rows, TreatmentColumn::Shifted));
    let units: Vec<usize> = rows.iter().chain(rows).map(|&r| long.unit[r]).collect();
    let y: Vec<f64> = (0..2 * n).map(|k| if k < n { 0.0 } else { 1.0 }).collect();
    let all: Vec<usize> = (0..2 * n).collect();
    let task = RegressionTask::new(&x, &y, &all, Loss::Log);
    let (_, oof) = crossfit(
        &task,
        &units,
        input.partition,
        input.learner,
        rng::derive_seed(input.seed, 0xD),
    )?;
    // A low clip only says the observed value is unreachable under the
    // policy; a high one means the shifted value is rarely seen naturally.
    let at_bound = |p: f64| p >= 1.0 - PROB_CLIP * (1.0 + 1e-9);
    let clipped = oof[..n].iter().filter(|&&p| at_bound(p)).count() as f64 / n as f64;
    let mut warnings = Vec::new();
    if clipped > OVERLAP_WARNING_FRACTION {
        let msg = format!(
            "density-ratio classifier is clipped on {:.1}% of rows; overlap looks poor",
            100.0 * clipped
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok((oof[..n].iter().map(|p| p / (1.0 - p)).collect(), warnings))
}

/// `Σ_{z'} P(d(z', h) = Z) ĝ(z' | h) / ĝ(Z | h)` with `ĝ` a cross-fitted
/// one-vs-rest classifier per level.
fn analytic_ratio(input: &NuisanceInput, rows: &[usize]) -> Result<Vec<f64>, NuisanceError> {
    let long = input.long;
    let levels = input
        .wide
        .spec()
        .treatment_support
        .levels()
        .ok_or(NuisanceError::AnalyticNeedsCategorical)?
        .to_vec();
    let probs = level_probabilities(input, rows, &levels)?;
    rows.iter()
        .enumerate()
        .map(|(k, &r)| {
            let (unit, t) = (long.unit[r], long.time[r]);
            let z = long.treatment[r];
            let history = input.wide.history(unit, t);
            let mut observed = 0.0;
            let mut pushed = 0.0;
            for (j, &level) in levels.iter().enumerate() {
                let g = probs[j][k];
                if (level - z).abs() <= 1e-9 {
                    observed = g;
                }
                let p = input.policy.transition_probability(level, z, t, &history)?;
                if p != 0.0 {
                    pushed += p * g;
                }
            }
            Ok(pushed / observed)
        })
        .collect()
}

/// Normalized `ĝ(level | h)` for every level and row.
fn level_probabilities(
    input: &NuisanceInput,
    rows: &[usize],
    levels: &[f64],
) -> Result<Vec<Vec<f64>>, NuisanceError> {
    let long = input.long;
    let x = long.design(rows, TreatmentColumn::Omitted);
    let units: Vec<usize> = rows.iter().map(|&r| long.unit[r]).collect();
    let all: Vec<usize> = (0..rows.len()).collect();
    let fit_level = |j: usize| -> Result<Vec<f64>, NuisanceError> {
        let y: Vec<f64> = rows
            .iter()
            .map(|&r| ((long.treatment[r] - levels[j]).abs() <= 1e-9) as u8 as f64)
            .collect();
        let task = RegressionTask::new(&x, &y, &all, Loss::Log);
        let (_, oof) = crossfit(
            &task,
            &units,
            input.partition,
            input.learner,
            rng::derive_seed(input.seed, 0xA0 + j as u64),
        )?;
        Ok(oof)
    };
    if levels.len() == 1 {
        return Ok(vec![vec![1.0; rows.len()]]);
    }
    if levels.len() == 2 {
        let p1 = fit_level(1)?;
        let p0 = p1.iter().map(|p| 1.0 - p).collect();
        return Ok(vec![p0, p1]);
    }
    let mut probs = (0..levels.len()).map(fit_level).collect::<Result<Vec<_>, _>>()?;
    for k in 0..rows.len() {
        let total: f64 = probs.iter().map(|p| p[k]).sum();
        for p in probs.iter_mut() {
            p[k] /= total;
        }
    }
    Ok(probs)
}

/// Per-row weight factors `w_{t,s}` for `s < t` and `s = t`, truncated at `cap`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFactors {
    pub off_diagonal: Vec<f64>,
    pub diagonal: Vec<f64>,
    pub off_truncated: Vec<bool>,
    pub diagonal_truncated: Vec<bool>,
    pub cap: f64,
}

/// `w = r · 1{C=1}/g_C · (1{R=1}/g_R)^{1{s=t}}`, each truncated at `cap`.
pub fn compute_weights(
    ratio: &[f64],
    censoring_prob: &[f64],
    missingness_prob: &[f64],
    censored: &[f64],
    measured: &[f64],
    cap: f64,
) -> WeightFactors {
    let n = ratio.len();
    let mut w = WeightFactors {
        off_diagonal: Vec::with_capacity(n),
        diagonal: Vec::with_capacity(n),
        off_truncated: Vec::with_capacity(n),
        diagonal_truncated: Vec::with_capacity(n),
        cap,
    };
    for k in 0..n {
        let stays = (censored[k] == 1.0) as u8 as f64;
        let off = ratio[k] * stays / censoring_prob[k];
        let seen = (measured[k] == 1.0) as u8 as f64;
        let diag = off * seen / missingness_prob[k];
        w.off_diagonal.push(off.min(cap));
        w.off_truncated.push(off > cap);
        w.diagonal.push(diag.min(cap));
        w.diagonal_truncated.push(diag > cap);
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        apply_policy, fold_split, to_long, validate_wide, NodeSpec, OutcomeKind, RawTable,
        TimeNodes, TreatmentSupport,
    };
    use crate::policy::Policy;
    use rand::Rng;

    #[test]
    fn weight_factor_arithmetic() {
        let w = compute_weights(&[1.5, 200.0, 2.0], &[0.8, 1.0, 0.5], &[0.25, 1.0, 0.5], &[1.0, 1.0, 0.0], &[1.0, 1.0, f64::NAN], 50.0);
        assert!((w.diagonal[0] - 7.5).abs() < 1e-12);
        assert!((w.off_diagonal[0] - 1.875).abs() < 1e-12);
        assert_eq!(w.off_diagonal[1], 50.0);
        assert!(w.off_truncated[1] && w.diagonal_truncated[1]);
        assert_eq!((w.off_diagonal[2], w.diagonal[2]), (0.0, 0.0));
    }

    /// Binary treatment independent of a binary covariate, τ = 2.
    fn binary_dataset(n: usize, p: f64, seed: u64) -> WideDataset {
        let mut r = rng::stream(seed, 0);
        let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
        for t in 1..=2 {
            cols.push((format!("L{t}"), (0..n).map(|_| r.random_bool(0.5) as u8 as f64).collect()));
            cols.push((format!("A{t}"), (0..n).map(|_| r.random_bool(p) as u8 as f64).collect()));
            cols.push((format!("Y{}", t + 1), (0..n).map(|_| r.random::<f64>()).collect()));
        }
        let spec = NodeSpec {
            baseline: vec![],
            times: (1..=2)
                .map(|t| TimeNodes {
                    covariates: vec![format!("L{t}")],
                    treatment: format!("A{t}"),
                    censoring: None,
                    measurement: None,
                    outcome: format!("Y{}", t + 1),
                })
                .collect(),
            outcome_kind: OutcomeKind::Numeric,
            treatment_support: TreatmentSupport::Categorical {
                levels: vec![0.0, 1.0],
            },
            outcome_in_history: false,
        };
        validate_wide(&RawTable::from_columns(cols).unwrap(), &spec).unwrap()
    }

    fn ratios(ds: &WideDataset, policy: &Policy, method: RatioMethod, learner: LearnerConfig) -> (LongDataset, Vec<f64>) {
        let ds = apply_policy(ds, policy).unwrap();
        let long = to_long(&ds, 1).unwrap();
        let part = fold_split(ds.n_units(), 2, 0).unwrap();
        let input = NuisanceInput {
            wide: &ds,
            long: &long,
            policy,
            partition: &part,
            learner: &learner,
            seed: 1,
        };
        let rows: Vec<usize> = (0..long.len()).collect();
        let est = estimate_density_ratio(&input, &rows, method).unwrap();
        (long, est.values)
    }

    #[test]
    fn identity_policy_gives_unit_ratio() {
        let ds = binary_dataset(50, 0.3, 1);
        for method in [RatioMethod::Analytic, RatioMethod::Classification] {
            let (_, r) = ratios(&ds, &Policy::identity(), method, LearnerConfig::Glm);
            assert!(r.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn analytic_ratio_for_static_policy_on_balanced_treatment() {
        // Exactly half treated in every fold's training data, so the
        // intercept-only classifier returns one half and r = 2 on treated.
        let n = 40;
        let cols: Vec<(String, Vec<f64>)> = vec![
            ("L1".into(), vec![0.0; n]),
            ("A1".into(), (0..n).map(|i| (i % 2) as f64).collect()),
            ("Y2".into(), vec![0.0; n]),
        ];
        let spec = NodeSpec {
            baseline: vec![],
            times: vec![TimeNodes {
                covariates: vec!["L1".into()],
                treatment: "A1".into(),
                censoring: None,
                measurement: None,
                outcome: "Y2".into(),
            }],
            outcome_kind: OutcomeKind::Numeric,
            treatment_support: TreatmentSupport::Categorical {
                levels: vec![0.0, 1.0],
            },
            outcome_in_history: false,
        };
        let ds = validate_wide(&RawTable::from_columns(cols).unwrap(), &spec).unwrap();
        let policy = Policy::constant(1.0);
        let ds = apply_policy(&ds, &policy).unwrap();
        let long = to_long(&ds, 0).unwrap();
        // Pair units so every fold holds equal numbers of treated and untreated.
        let mut part = fold_split(n, 2, 0).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| (i / 2) % 2).collect();
        part = FoldPartition::from_labels(2, part.seed, labels);
        let learner = LearnerConfig::Mean;
        let input = NuisanceInput {
            wide: &ds,
            long: &long,
            policy: &policy,
            partition: &part,
            learner: &learner,
            seed: 0,
        };
        let rows: Vec<usize> = (0..long.len()).collect();
        let r = estimate_density_ratio(&input, &rows, RatioMethod::Analytic).unwrap().values;
        for (k, &v) in r.iter().enumerate() {
            let expected = if long.treatment[k] == 1.0 { 2.0 } else { 0.0 };
            assert_eq!(v, expected);
        }
    }

    #[test]
    fn classification_ratio_approaches_analytic_value() {
        let ds = binary_dataset(4000, 0.4, 3);
        let (long, r) = ratios(&ds, &Policy::constant(1.0), RatioMethod::Classification, LearnerConfig::Glm);
        let treated: Vec<f64> = (0..long.len()).filter(|&k| long.treatment[k] == 1.0).map(|k| r[k]).collect();
        let untreated_max = (0..long.len()).filter(|&k| long.treatment[k] == 0.0).map(|k| r[k]).fold(0.0, f64::max);
        let mean = treated.iter().sum::<f64>() / treated.len() as f64;
        assert!((mean - 2.5).abs() < 0.15, "mean ratio {mean}");
        // Untreated rows never receive the static value, so their ratio is near 0.
        assert!(untreated_max < 0.05, "untreated max {untreated_max}");
    }

    #[test]
    fn censoring_model_is_constant_without_censoring() {
        let ds = binary_dataset(30, 0.5, 2);
        let policy = Policy::identity();
        let ds = apply_policy(&ds, &policy).unwrap();
        let long = to_long(&ds, 1).unwrap();
        let part = fold_split(30, 3, 0).unwrap();
        let learner = LearnerConfig::Glm;
        let input = NuisanceInput {
            wide: &ds,
            long: &long,
            policy: &policy,
            partition: &part,
            learner: &learner,
            seed: 0,
        };
        let rows: Vec<usize> = (0..long.len()).collect();
        let g = fit_censoring(&input, &rows).unwrap();
        assert!(g.constant && g.values.iter().all(|&v| v == 1.0));
    }
}
