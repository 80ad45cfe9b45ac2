//! The two simulation studies: data generation, true curves and nuisances,
//! and a replication runner.

pub mod dgp;
mod study;
pub mod truth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{validate_wide, DataError, NodeSpec, OutcomeKind, RawTable, TimeNodes, TreatmentSupport, WideDataset};
use crate::estimators::EstimationError;
use crate::inference::InferenceError;
use crate::policy::{Policy, PolicyError};

pub use study::{
    aggregate, run_setting, run_study, write_coverage_csv, write_metrics_csv, Method, MethodMetrics,
    NuisanceMode, Replication, SettingResult, StudySpec,
};
pub use truth::{exact_curve, oracle_truth, study_oracle, Corrupted, MonteCarloTruth};

/// Number of treatment times; outcomes are `Y_2..Y_5`.
pub const HORIZON: usize = 4;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// Binomial treatment, time-varying covariate, sporadic outcome missingness.
    Study1,
    /// Binary treatment confounded by two normal baseline covariates.
    Study2,
}

impl Study {
    pub fn label(self) -> &'static str {
        match self {
            Study::Study1 => "study1",
            Study::Study2 => "study2",
        }
    }
}

/// `max(z - 1, 0)` in study 1 and `d ≡ 1` in study 2.
pub fn default_policy(study: Study) -> Policy {
    match study {
        Study::Study1 => Policy::shift_down(),
        Study::Study2 => Policy::constant(1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub study: Study,
    pub n: usize,
    /// Study 1: base missingness level in `[0, 1)`. Study 2: confounding strength.
    pub alpha: f64,
    pub seed: u64,
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.n == 0 {
            return Err(SimulationError::InvalidConfig("n must be positive".into()));
        }
        let ok = match self.study {
            Study::Study1 => (0.0..1.0).contains(&self.alpha),
            Study::Study2 => self.alpha >= 0.0 && self.alpha.is_finite(),
        };
        if !ok {
            return Err(SimulationError::InvalidConfig(format!(
                "alpha = {} is out of range for {}",
                self.alpha,
                self.study.label()
            )));
        }
        Ok(())
    }
}

/// Node roles of the simulated tables.
pub fn node_spec(study: Study) -> NodeSpec {
    let times = (1..=HORIZON)
        .map(|t| TimeNodes {
            covariates: vec![format!("L{t}")],
            treatment: format!("A{t}"),
            censoring: None,
            measurement: (study == Study::Study1).then(|| format!("R{t}")),
            outcome: format!("Y{}", t + 1),
        })
        .collect();
    let levels = match study {
        Study::Study1 => (0..=dgp::TRIALS).map(|k| k as f64).collect(),
        Study::Study2 => vec![0.0, 1.0],
    };
    NodeSpec {
        baseline: match study {
            Study::Study1 => vec![],
            Study::Study2 => vec!["W".into(), "X".into()],
        },
        times,
        outcome_kind: OutcomeKind::Numeric,
        treatment_support: TreatmentSupport::Categorical { levels },
        outcome_in_history: true,
    }
}

/// Simulated observational table, one row per unit.
pub fn simulate_table(config: &DgpConfig) -> Result<(RawTable, NodeSpec), SimulationError> {
    config.validate()?;
    let n = config.n;
    let draws = (0..n)
        .map(|i| dgp::sample_unit(config.study, config.alpha, &mut dgp::unit_stream(config.seed, i), None))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
    if config.study == Study::Study2 {
        cols.push(("W".into(), draws.iter().map(|d| d.baseline[0]).collect()));
        cols.push(("X".into(), draws.iter().map(|d| d.baseline[1]).collect()));
    }
    for t in 0..HORIZON {
        cols.push((format!("L{}", t + 1), draws.iter().map(|d| d.covariate[t]).collect()));
        cols.push((format!("A{}", t + 1), draws.iter().map(|d| d.treatment[t]).collect()));
        if config.study == Study::Study1 {
            cols.push((format!("R{}", t + 1), draws.iter().map(|d| d.measured[t]).collect()));
        }
        cols.push((format!("Y{}", t + 2), draws.iter().map(|d| d.outcome[t]).collect()));
    }
    Ok((RawTable::from_columns(cols)?, node_spec(config.study)))
}

pub fn simulate(config: &DgpConfig) -> Result<WideDataset, SimulationError> {
    let (table, spec) = simulate_table(config)?;
    Ok(validate_wide(&table, &spec)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::expit;

    fn config(study: Study, n: usize, alpha: f64) -> DgpConfig {
        DgpConfig {
            study,
            n,
            alpha,
            seed: 11,
        }
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn study1_without_missingness_measures_everything() {
        let ds = simulate(&config(Study::Study1, 100_000, 0.0)).unwrap();
        for t in 1..=HORIZON {
            assert!(ds.measurement(t).iter().all(|&r| r == 1.0));
        }
    }

    #[test]
    fn study1_marginals() {
        let n = 100_000;
        let ds = simulate(&config(Study::Study1, n, 0.8)).unwrap();
        let l1 = ds.covariate(1, 0);
        let p1 = l1.iter().filter(|&&l| l == 1.0).count() as f64 / n as f64;
        assert!((p1 - 0.5).abs() < 0.005);
        // P(R = 0 | L ≠ 1) = expit(logit(0.8) - 1).
        let expected = expit((0.8f64 / 0.2).ln() - 1.0);
        for t in 1..=HORIZON {
            let (l, r) = (ds.covariate(t, 0), ds.measurement(t));
            let idx: Vec<usize> = (0..n).filter(|&i| l[i] != 1.0).collect();
            let miss = idx.iter().filter(|&&i| r[i] == 0.0).count() as f64 / idx.len() as f64;
            assert!((miss - expected).abs() < 0.01, "t = {t}: {miss}");
        }
        // L_1 = 1 forces A_1 = 0.
        let a1 = ds.treatment(1);
        assert!((0..n).filter(|&i| l1[i] == 1.0).all(|i| a1[i] == 0.0));
        // A_1 | L_1 = 3 has mean 5 × 0.6.
        let idx: Vec<usize> = (0..n).filter(|&i| l1[i] == 3.0).collect();
        let m = idx.iter().map(|&i| a1[i]).sum::<f64>() / idx.len() as f64;
        assert!((m - 3.0).abs() < 4.0 * (5.0 * 0.24 / idx.len() as f64).sqrt());
    }

    #[test]
    fn study2_marginals() {
        let n = 100_000;
        let ds = simulate(&config(Study::Study2, n, 0.0)).unwrap();
        for t in 1..=HORIZON {
            assert!((mean(ds.treatment(t)) - 0.5).abs() < 0.005);
            assert!((mean(ds.covariate(t, 0)) - 0.5).abs() < 4.0 / (n as f64).sqrt());
        }
        // E[Y | A = 0] = E[expit(-3 + W)].
        let (s, w) = truth::gauss_hermite(80);
        let expected: f64 = s.iter().zip(&w).map(|(s, w)| w * expit(-3.0 + s)).sum();
        let (a, y) = (ds.treatment(2), ds.outcome_after(2));
        let idx: Vec<usize> = (0..n).filter(|&i| a[i] == 0.0).collect();
        let m = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
        assert!((m - expected).abs() < 0.005, "{m} vs {expected}");
    }

    #[test]
    fn study2_confounding_has_positive_sign() {
        let n = 20_000;
        let ds = simulate(&config(Study::Study2, n, 3.0)).unwrap();
        let s: Vec<f64> = (0..n).map(|i| ds.baseline(0)[i] + ds.baseline(1)[i]).collect();
        let a = ds.treatment(1);
        let (ms, ma) = (mean(&s), mean(a));
        let cov: f64 = (0..n).map(|i| (s[i] - ms) * (a[i] - ma)).sum();
        assert!(cov > 0.0);
    }

    #[test]
    fn rejects_out_of_range_alpha() {
        assert!(simulate(&config(Study::Study1, 10, 1.0)).is_err());
        assert!(simulate(&config(Study::Study2, 10, -0.5)).is_err());
        assert!(simulate(&config(Study::Study2, 0, 1.0)).is_err());
    }

    #[test]
    fn simulation_is_reproducible() {
        let a = simulate_table(&config(Study::Study1, 50, 0.5)).unwrap().0;
        let b = simulate_table(&config(Study::Study1, 50, 0.5)).unwrap().0;
        for name in a.names() {
            let (x, y) = (a.column(name).unwrap(), b.column(name).unwrap());
            assert!(x.iter().zip(y).all(|(u, v)| u == v || (u.is_nan() && v.is_nan())));
        }
    }
}
