//! Replication runner and summary metrics.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::truth::{exact_curve, study_oracle, Corrupted};
use super::{default_policy, simulate, DgpConfig, SimulationError, Study};
use crate::estimators::{estimate_with_oracle, EstimatorKind, EstimatorOptions, FitCounts, NoOracle, NuisanceOracle};
use crate::inference::{infer, InferenceOptions};
use crate::policy::Policy;
use crate::rng::derive_seed;

/// Constant used for a corrupted outcome regression.
const CORRUPT_OUTCOME: f64 = 0.5;
/// Constant used for a corrupted density ratio.
const CORRUPT_RATIO: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sdr,
    SdrUnconstrained,
    Benchmark,
    Sr,
    SmoothedSr,
}

impl Method {
    pub fn kind(self) -> EstimatorKind {
        match self {
            Method::Sdr | Method::SdrUnconstrained => EstimatorKind::Sdr,
            Method::Benchmark => EstimatorKind::Benchmark,
            Method::Sr => EstimatorKind::Sr,
            Method::SmoothedSr => EstimatorKind::SmoothedSr,
        }
    }

    pub fn calibrate(self) -> bool {
        self == Method::Sdr
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Sdr => "sdr",
            Method::SdrUnconstrained => "sdr_unconstrained",
            Method::Benchmark => "benchmark",
            Method::Sr => "sr",
            Method::SmoothedSr => "smoothed_sr",
        }
    }
}

/// Where the nuisance functions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceMode {
    #[default]
    Estimated,
    /// All nuisances set to their true values.
    Oracle,
    /// True weights, outcome regressions replaced by a constant.
    CorruptOutcome,
    /// True outcome regressions, density ratio replaced by 1.
    CorruptRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySpec {
    pub study: Study,
    pub sizes: Vec<usize>,
    pub alphas: Vec<f64>,
    pub replications: usize,
    pub methods: Vec<Method>,
    /// Defaults to [`default_policy`] of the study.
    pub policy: Option<Policy>,
    pub nuisances: NuisanceMode,
    /// `calibrate` and `seed` are set per method and replication.
    pub estimator: EstimatorOptions,
    pub inference: InferenceOptions,
    /// Compute intervals and bands for doubly robust methods.
    pub coverage: bool,
    pub seed: u64,
}

impl Default for StudySpec {
    fn default() -> Self {
        StudySpec {
            study: Study::Study1,
            sizes: vec![1000],
            alphas: vec![0.0],
            replications: 100,
            methods: vec![Method::Sdr, Method::Benchmark],
            policy: None,
            nuisances: NuisanceMode::Estimated,
            estimator: EstimatorOptions::default(),
            inference: InferenceOptions::default(),
            coverage: true,
            seed: 1,
        }
    }
}

impl StudySpec {
    pub fn policy(&self) -> Policy {
        self.policy.clone().unwrap_or_else(|| default_policy(self.study))
    }
}

/// Outcome of one method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub replication: usize,
    pub method: Method,
    /// `θ̂ - θ` per time; empty when the method failed.
    pub errors: Vec<f64>,
    pub pointwise_hits: Option<Vec<bool>>,
    pub uniform_hit: Option<bool>,
    pub wall_time_secs: f64,
    pub fit_counts: FitCounts,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Method,
    pub replications: usize,
    pub failures: usize,
    /// Median error over replications, averaged over time, times 100.
    pub me_x100: f64,
    /// Median absolute error over replications, averaged over time, times 100.
    pub mae_x100: f64,
    /// Mean error per time and its Monte Carlo standard error.
    pub mean_error: Vec<f64>,
    pub mean_error_se: Vec<f64>,
    /// Percent of (replication, time) pairs whose interval covers the truth.
    pub pointwise_coverage: Option<f64>,
    /// Percent of replications whose band covers the whole curve.
    pub uniform_coverage: Option<f64>,
    pub wall_time_secs: f64,
    /// Total wall time relative to the benchmark, or to the first method
    /// when no benchmark is run.
    pub relative_runtime: f64,
    pub fit_counts: FitCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingResult {
    pub study: Study,
    pub n: usize,
    pub alpha: f64,
    pub truth: Vec<f64>,
    pub methods: Vec<MethodMetrics>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Summaries per method; independent of the order of `records`.
pub fn aggregate(methods: &[Method], records: &[Replication]) -> Vec<MethodMetrics> {
    let total_time = |m: Method| -> f64 {
        let mut times: Vec<f64> = records.iter().filter(|r| r.method == m).map(|r| r.wall_time_secs).collect();
        times.sort_by(f64::total_cmp);
        times.iter().sum()
    };
    let reference = if methods.contains(&Method::Benchmark) {
        Method::Benchmark
    } else {
        methods[0]
    };
    let reference_time = total_time(reference);
    methods
        .iter()
        .map(|&m| {
            let mut ok: Vec<&Replication> = records
                .iter()
                .filter(|r| r.method == m && r.failure.is_none())
                .collect();
            ok.sort_by_key(|r| r.replication);
            let failures = records.iter().filter(|r| r.method == m && r.failure.is_some()).count();
            let reps = ok.len();
            let times = ok.first().map_or(0, |r| r.errors.len());
            let column = |t: usize| -> Vec<f64> { ok.iter().map(|r| r.errors[t]).collect() };
            let avg = |f: &dyn Fn(Vec<f64>) -> f64| -> f64 {
                (0..times).map(|t| f(column(t))).sum::<f64>() / times.max(1) as f64
            };
            let me = 100.0 * avg(&median);
            let mae = 100.0 * avg(&|c: Vec<f64>| median(c.into_iter().map(f64::abs).collect()));
            let mean_error: Vec<f64> = (0..times).map(|t| column(t).iter().sum::<f64>() / reps as f64).collect();
            let mean_error_se: Vec<f64> = (0..times)
                .map(|t| {
                    let c = column(t);
                    let m = mean_error[t];
                    let var = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps.max(2) - 1) as f64;
                    (var / reps as f64).sqrt()
                })
                .collect();
            let with_ci: Vec<&&Replication> = ok.iter().filter(|r| r.pointwise_hits.is_some()).collect();
            let (pointwise, uniform) = if with_ci.is_empty() {
                (None, None)
            } else {
                let hits: usize = with_ci
                    .iter()
                    .map(|r| r.pointwise_hits.as_ref().unwrap().iter().filter(|&&h| h).count())
                    .sum();
                let cells: usize = with_ci.iter().map(|r| r.pointwise_hits.as_ref().unwrap().len()).sum();
                let bands = with_ci.iter().filter(|r| r.uniform_hit == Some(true)).count();
                (
                    Some(100.0 * hits as f64 / cells as f64),
                    Some(100.0 * bands as f64 / with_ci.len() as f64),
                )
            };
            let time = total_time(m);
            MethodMetrics {
                method: m,
                replications: reps,
                failures,
                me_x100: me,
                mae_x100: mae,
                mean_error,
                mean_error_se,
                pointwise_coverage: pointwise,
                uniform_coverage: uniform,
                wall_time_secs: time,
                relative_runtime: time / reference_time,
                fit_counts: ok.first().map_or_else(FitCounts::default, |r| r.fit_counts),
            }
        })
        .collect()
}

fn run_method(
    spec: &StudySpec,
    method: Method,
    ds: &crate::data::WideDataset,
    policy: &Policy,
    oracle: &dyn NuisanceOracle,
    truth: &[f64],
    seed: u64,
    replication: usize,
) -> Replication {
    let opts = EstimatorOptions {
        calibrate: method.calibrate(),
        seed,
        ..spec.estimator.clone()
    };
    let mut rec = Replication {
        replication,
        method,
        errors: Vec::new(),
        pointwise_hits: None,
        uniform_hit: None,
        wall_time_secs: 0.0,
        fit_counts: FitCounts::default(),
        failure: None,
    };
    let est = match estimate_with_oracle(ds, policy, method.kind(), &opts, oracle) {
        Ok(e) => e,
        Err(e) => {
            rec.failure = Some(e.to_string());
            return rec;
        }
    };
    rec.errors = est.estimates.iter().zip(truth).map(|(e, t)| e - t).collect();
    rec.wall_time_secs = est.wall_time_secs;
    rec.fit_counts = est.fit_counts;
    if spec.coverage && est.influence.is_some() {
        let inf_opts = InferenceOptions {
            seed: derive_seed(seed, 0x1AF),
            ..spec.inference.clone()
        };
        match infer(&est, &inf_opts) {
            Ok(ci) => {
                let hits: Vec<bool> = (0..truth.len())
                    .map(|t| ci.pointwise_lo[t] <= truth[t] && truth[t] <= ci.pointwise_hi[t])
                    .collect();
                rec.uniform_hit = Some((0..truth.len()).all(|t| ci.band_lo[t] <= truth[t] && truth[t] <= ci.band_hi[t]));
                rec.pointwise_hits = Some(hits);
            }
            Err(e) => rec.failure = Some(e.to_string()),
        }
    }
    rec
}

/// Every replication of one `(n, α)` cell.
pub fn run_replications(spec: &StudySpec, n: usize, alpha: f64) -> Result<(Vec<f64>, Vec<Replication>), SimulationError> {
    if spec.methods.is_empty() {
        return Err(SimulationError::InvalidConfig("no methods listed".into()));
    }
    let policy = spec.policy();
    let truth = exact_curve(spec.study, alpha, &policy)?;
    let cell_seed = derive_seed(derive_seed(spec.seed, n as u64), alpha.to_bits());
    let records = (0..spec.replications)
        .into_par_iter()
        .map(|rep| -> Result<Vec<Replication>, SimulationError> {
            let seed = derive_seed(cell_seed, rep as u64);
            let ds = simulate(&DgpConfig {
                study: spec.study,
                n,
                alpha,
                seed,
            })?;
            let oracle: Box<dyn NuisanceOracle> = match spec.nuisances {
                NuisanceMode::Estimated => Box::new(NoOracle),
                NuisanceMode::Oracle => study_oracle(spec.study, &ds, alpha, &policy)?,
                NuisanceMode::CorruptOutcome => Box::new(Corrupted {
                    inner: study_oracle(spec.study, &ds, alpha, &policy)?,
                    outcome: Some(CORRUPT_OUTCOME),
                    ratio: None,
                }),
                NuisanceMode::CorruptRatio => Box::new(Corrupted {
                    inner: study_oracle(spec.study, &ds, alpha, &policy)?,
                    outcome: None,
                    ratio: Some(CORRUPT_RATIO),
                }),
            };
            let est_seed = derive_seed(seed, 1);
            Ok(spec
                .methods
                .iter()
                .map(|&m| run_method(spec, m, &ds, &policy, oracle.as_ref(), &truth, est_seed, rep))
                .collect())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let records: Vec<Replication> = records.into_iter().flatten().collect();
    for r in records.iter().filter(|r| r.failure.is_some()) {
        log::warn!(
            "{} failed on replication {}: {}",
            r.method.label(),
            r.replication,
            r.failure.as_deref().unwrap_or_default()
        );
    }
    Ok((truth, records))
}

pub fn run_setting(spec: &StudySpec, n: usize, alpha: f64) -> Result<SettingResult, SimulationError> {
    let (truth, records) = run_replications(spec, n, alpha)?;
    Ok(SettingResult {
        study: spec.study,
        n,
        alpha,
        truth,
        methods: aggregate(&spec.methods, &records),
    })
}

/// Runs every `(α, n)` combination of the grids.
pub fn run_study(spec: &StudySpec) -> Result<Vec<SettingResult>, SimulationError> {
    let mut out = Vec::new();
    for &alpha in &spec.alphas {
        for &n in &spec.sizes {
            log::info!("{} alpha={alpha} n={n}", spec.study.label());
            out.push(run_setting(spec, n, alpha)?);
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.2}"))
}

/// One row per `(study, α, n, method)`. Coverage cells are empty for
/// methods without intervals.
pub fn write_metrics_csv<W: Write>(results: &[SettingResult], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "study",
        "alpha",
        "n",
        "method",
        "me_x100",
        "mae_x100",
        "pw_cov",
        "unif_cov",
        "rel_runtime",
    ])?;
    for s in results {
        for m in &s.methods {
            w.write_record([
                s.study.label().to_string(),
                s.alpha.to_string(),
                s.n.to_string(),
                m.method.label().to_string(),
                format!("{:.2}", m.me_x100),
                format!("{:.2}", m.mae_x100),
                fmt_opt(m.pointwise_coverage),
                fmt_opt(m.uniform_coverage),
                format!("{:.2}", m.relative_runtime),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per `(study, α, n, method)` with pointwise and uniform coverage.
pub fn write_coverage_csv<W: Write>(results: &[SettingResult], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["study", "alpha", "n", "method", "pointwise_coverage", "uniform_coverage"])?;
    for s in results {
        for m in &s.methods {
            w.write_record([
                s.study.label().to_string(),
                s.alpha.to_string(),
                s.n.to_string(),
                m.method.label().to_string(),
                fmt_opt(m.pointwise_coverage),
                fmt_opt(m.uniform_coverage),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(rep: usize, method: Method, errors: Vec<f64>, time: f64) -> Replication {
        Replication {
            replication: rep,
            method,
            errors,
            pointwise_hits: Some(vec![true, false]),
            uniform_hit: Some(rep % 2 == 0),
            wall_time_secs: time,
            fit_counts: FitCounts::default(),
            failure: None,
        }
    }

    #[test]
    fn metrics_by_hand() {
        let recs = vec![
            record(0, Method::Sdr, vec![0.01, -0.02], 1.0),
            record(1, Method::Sdr, vec![0.03, 0.04], 1.0),
            record(2, Method::Sdr, vec![-0.05, 0.00], 1.0),
            record(0, Method::Benchmark, vec![0.0, 0.0], 2.0),
            record(1, Method::Benchmark, vec![0.0, 0.0], 2.0),
            record(2, Method::Benchmark, vec![0.0, 0.0], 2.0),
        ];
        let m = aggregate(&[Method::Sdr, Method::Benchmark], &recs);
        // Medians per time: 0.01 and 0.00; absolute: 0.03 and 0.02.
        assert!((m[0].me_x100 - 0.5).abs() < 1e-12);
        assert!((m[0].mae_x100 - 2.5).abs() < 1e-12);
        assert!((m[0].relative_runtime - 0.5).abs() < 1e-12);
        assert_eq!(m[0].pointwise_coverage, Some(50.0));
        assert!((m[0].uniform_coverage.unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(m[1].relative_runtime, 1.0);
    }

    #[test]
    fn failures_are_counted_and_excluded() {
        let mut bad = record(1, Method::Sdr, vec![], 0.0);
        bad.failure = Some("boom".into());
        let recs = vec![record(0, Method::Sdr, vec![0.1, 0.1], 1.0), bad];
        let m = aggregate(&[Method::Sdr], &recs);
        assert_eq!((m[0].replications, m[0].failures), (1, 1));
        assert!((m[0].me_x100 - 10.0).abs() < 1e-12);
    }

    #[test]
    fn small_oracle_study_runs() {
        let spec = StudySpec {
            study: Study::Study2,
            sizes: vec![200],
            alphas: vec![0.5],
            replications: 3,
            methods: vec![Method::Sdr],
            nuisances: NuisanceMode::Oracle,
            inference: InferenceOptions {
                draws: 200,
                ..InferenceOptions::default()
            },
            ..StudySpec::default()
        };
        let res = run_study(&spec).unwrap();
        assert_eq!(res.len(), 1);
        assert_eq!(res[0].methods[0].replications, 3);
        assert_eq!(res[0].methods[0].fit_counts, FitCounts::default());
        let mut buf = Vec::new();
        write_metrics_csv(&res, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "study,alpha,n,method,me_x100,mae_x100,pw_cov,unif_cov,rel_runtime"
        );
        assert!(text.lines().nth(1).unwrap().starts_with("study2,0.5,200,sdr,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn aggregation_ignores_record_order(
            errs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.1f64..5.0), 1..12),
            perm_seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            let mut recs = Vec::new();
            for (i, (a, b, time)) in errs.iter().enumerate() {
                recs.push(record(i, Method::Sdr, vec![*a, *b], *time));
                recs.push(record(i, Method::Benchmark, vec![*b, *a], time * 2.0));
            }
            let methods = [Method::Sdr, Method::Benchmark];
            let before = aggregate(&methods, &recs);
            recs.shuffle(&mut crate::rng::stream(perm_seed, 0));
            prop_assert_eq!(before, aggregate(&methods, &recs));
        }
    }
}
