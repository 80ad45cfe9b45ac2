use super::*;
use crate::data::{validate_wide, NodeSpec, RawTable, TimeNodes, TreatmentSupport};
use crate::rng;
use rand::Rng;

/// Binary covariate, treatment and outcome at every time, with optional
/// censoring and missingness at fixed rates.
fn binary_panel(n: usize, tau: usize, drop_rate: f64, seed: u64) -> WideDataset {
    let mut r = rng::stream(seed, 0);
    let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
    let mut alive = vec![true; n];
    for t in 1..=tau {
        let l: Vec<f64> = (0..n).map(|_| r.random_bool(0.5) as u8 as f64).collect();
        let a: Vec<f64> = (0..n).map(|i| r.random_bool(0.3 + 0.4 * l[i]) as u8 as f64).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| r.random_bool(0.2 + 0.3 * a[i] + 0.2 * l[i]) as u8 as f64)
            .collect();
        let mut c = vec![1.0; n];
        let mut m = vec![1.0; n];
        for i in 0..n {
            if !alive[i] || r.random_bool(drop_rate) {
                alive[i] = false;
                c[i] = 0.0;
            }
            if r.random_bool(drop_rate) {
                m[i] = 0.0;
            }
        }
        let y: Vec<f64> = (0..n).map(|i| if c[i] == 1.0 && m[i] == 1.0 { y[i] } else { f64::NAN }).collect();
        cols.push((format!("L{t}"), l));
        cols.push((format!("A{t}"), a));
        cols.push((format!("C{t}"), c));
        cols.push((format!("R{t}"), m));
        cols.push((format!("Y{}", t + 1), y));
    }
    let spec = NodeSpec {
        baseline: vec![],
        times: (1..=tau)
            .map(|t| TimeNodes {
                covariates: vec![format!("L{t}")],
                treatment: format!("A{t}"),
                censoring: Some(format!("C{t}")),
                measurement: Some(format!("R{t}")),
                outcome: format!("Y{}", t + 1),
            })
            .collect(),
        outcome_kind: OutcomeKind::Numeric,
        treatment_support: TreatmentSupport::Categorical {
            levels: vec![0.0, 1.0],
        },
        outcome_in_history: true,
    };
    validate_wide(&RawTable::from_columns(cols).unwrap(), &spec).unwrap()
}

fn options(learner: LearnerConfig) -> EstimatorOptions {
    EstimatorOptions {
        learner,
        folds: 2,
        seed: 7,
        ..EstimatorOptions::default()
    }
}

#[test]
fn pooled_and_per_time_gcomp_agree_with_saturated_learner() {
    let ds = binary_panel(3000, 3, 0.0, 1);
    let opts = options(LearnerConfig::CellMeans);
    let policy = Policy::shift_down();
    let per_time = estimate(&ds, &policy, EstimatorKind::Sr, &opts).unwrap();
    let pooled = estimate(&ds, &policy, EstimatorKind::SmoothedSr, &opts).unwrap();
    for (a, b) in per_time.estimates.iter().zip(&pooled.estimates) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
    assert_eq!(per_time.fit_counts.outcome, 6);
    assert_eq!(pooled.fit_counts.outcome, 3);
}

#[test]
fn identity_policy_without_dropout_reproduces_sample_means() {
    // Unit weights make the pseudo-outcome telescope to Y_{t+1}.
    let ds = binary_panel(400, 3, 0.0, 2);
    for calibrate in [false, true] {
        let opts = EstimatorOptions {
            calibrate,
            ..options(LearnerConfig::Glm)
        };
        let est = estimate(&ds, &Policy::identity(), EstimatorKind::Sdr, &opts).unwrap();
        for t in 1..=3 {
            let y = ds.outcome_after(t);
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            assert!((est.estimates[t - 1] - mean).abs() < 1e-10);
        }
        let infl = est.influence.as_ref().unwrap();
        assert!(infl.iter().all(|col| col.iter().sum::<f64>().abs() < 1e-8));
    }
}

#[test]
fn fit_counts_for_four_time_points() {
    let ds = binary_panel(300, 4, 0.05, 3);
    let opts = options(LearnerConfig::Glm);
    let policy = Policy::shift_down();
    let pooled = estimate(&ds, &policy, EstimatorKind::Sdr, &opts).unwrap();
    let bench = estimate(&ds, &policy, EstimatorKind::Benchmark, &opts).unwrap();
    assert_eq!(
        pooled.fit_counts,
        FitCounts {
            outcome: 4,
            censoring: 1,
            missingness: 1,
            density_ratio: 1
        }
    );
    assert_eq!(
        bench.fit_counts,
        FitCounts {
            outcome: 10,
            censoring: 10,
            missingness: 4,
            density_ratio: 10
        }
    );
    assert_eq!(pooled.weights.len(), 10);
    assert_eq!(bench.estimates.len(), 4);
}

/// Outcome regressions fixed at `value`, treatment-side nuisances as given.
struct Fixed {
    value: f64,
    ratio: f64,
}

impl NuisanceOracle for Fixed {
    fn outcome_regression(&self, _: usize, _: usize, _: usize, _: f64) -> Option<f64> {
        Some(self.value)
    }
    fn censoring(&self, _: usize, _: usize) -> Option<f64> {
        Some(1.0)
    }
    fn missingness(&self, _: usize, _: usize) -> Option<f64> {
        Some(1.0)
    }
    fn density_ratio(&self, _: usize, _: usize) -> Option<f64> {
        Some(self.ratio)
    }
}

#[test]
fn zero_weights_give_the_plug_in() {
    let ds = binary_panel(200, 3, 0.1, 4);
    let opts = options(LearnerConfig::Glm);
    let oracle = Fixed { value: 0.37, ratio: 0.0 };
    let est = estimate_with_oracle(&ds, &Policy::shift_down(), EstimatorKind::Sdr, &opts, &oracle).unwrap();
    assert!(est.estimates.iter().all(|&v| (v - 0.37).abs() < 1e-15));
    assert_eq!(est.fit_counts, FitCounts::default());
}

#[test]
fn correction_term_with_known_nuisances() {
    // With m ≡ c and unit weights the correction telescopes to Y_{t+1}.
    let ds = binary_panel(200, 2, 0.0, 5);
    let opts = options(LearnerConfig::Glm);
    let oracle = Fixed { value: 0.5, ratio: 1.0 };
    let est = estimate_with_oracle(&ds, &Policy::shift_down(), EstimatorKind::Sdr, &opts, &oracle).unwrap();
    let y3 = ds.outcome_after(2);
    let mean = y3.iter().sum::<f64>() / y3.len() as f64;
    assert!((est.estimates[1] - mean).abs() < 1e-12);
}

#[test]
fn all_weights_truncated_is_an_error() {
    let ds = binary_panel(100, 2, 0.0, 6);
    let opts = EstimatorOptions {
        truncation: 5.0,
        ..options(LearnerConfig::Glm)
    };
    let oracle = Fixed { value: 0.5, ratio: 9.0 };
    let err = estimate_with_oracle(&ds, &Policy::shift_down(), EstimatorKind::Sdr, &opts, &oracle).unwrap_err();
    assert!(matches!(err, EstimationError::AllWeightsTruncated { .. }));
}

#[test]
fn rejects_bad_options() {
    let ds = binary_panel(50, 2, 0.0, 7);
    let bad = EstimatorOptions {
        folds: 1,
        ..EstimatorOptions::default()
    };
    assert!(matches!(
        estimate(&ds, &Policy::identity(), EstimatorKind::Sdr, &bad),
        Err(EstimationError::InvalidOption(_))
    ));
    let bad = EstimatorOptions {
        truncation: 0.0,
        ..EstimatorOptions::default()
    };
    assert!(estimate(&ds, &Policy::identity(), EstimatorKind::Sdr, &bad).is_err());
}

#[test]
fn pooled_estimator_is_reproducible() {
    let ds = binary_panel(300, 3, 0.05, 8);
    let opts = options(LearnerConfig::gbt(10));
    let a = estimate(&ds, &Policy::shift_down(), EstimatorKind::Sdr, &opts).unwrap();
    let b = estimate(&ds, &Policy::shift_down(), EstimatorKind::Sdr, &opts).unwrap();
    assert_eq!(a.estimates, b.estimates);
    assert_eq!(a.influence, b.influence);
}
