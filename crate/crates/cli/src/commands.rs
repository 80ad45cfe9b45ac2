//! Subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use effect_curve::data::{apply_policy, to_long, validate_wide};
use effect_curve::inference::{contrast as difference, infer};
use effect_curve::simulation::{run_study, write_coverage_csv, write_metrics_csv, SettingResult};
use effect_curve::{estimate as fit_curve, CurveEstimate, EstimatorKind, InferenceOptions, InferenceResult, RawTable};
use serde::{Deserialize, Serialize};

use crate::config::{prepare_output, EstimateConfig, Overrides, SimulateConfig};

pub const INTERVENTION: &str = "intervention";
pub const REFERENCE: &str = "reference";
pub const CONTRAST: &str = "contrast";

/// One estimated curve with its intervals.
#[derive(Debug, Serialize, Deserialize)]
pub struct CurveRecord {
    /// `intervention`, `reference` or `contrast`.
    pub policy: String,
    pub estimator: EstimatorKind,
    pub estimate: CurveEstimate,
    pub inference: Option<InferenceResult>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_units: usize,
    pub horizon: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TimingEntry {
    pub policy: String,
    pub estimator: EstimatorKind,
    pub wall_time_secs: f64,
}

/// Results of `estimate`. Everything outside `timing` is a deterministic
/// function of the configuration and the data.
#[derive(Debug, Serialize, Deserialize)]
pub struct EstimateResults {
    pub version: String,
    pub config: EstimateConfig,
    pub dataset: DatasetSummary,
    pub curves: Vec<CurveRecord>,
    pub contrasts: Vec<CurveRecord>,
    pub timing: Vec<TimingEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub a: PathBuf,
    pub b: PathBuf,
    pub estimator: EstimatorKind,
    pub inference: InferenceOptions,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ContrastResults {
    pub version: String,
    pub config: ContrastConfig,
    pub contrast: CurveRecord,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulateResults {
    pub version: String,
    pub config: SimulateConfig,
    pub settings: Vec<SettingResult>,
}

fn set_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // Fails only if a pool already exists, which keeps its size.
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::warn!("thread pool already initialised; --threads ignored");
        }
    }
}

fn output_dir(output: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = output.clone().unwrap_or_else(|| PathBuf::from("."));
    prepare_output(&dir)?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Opens a CSV whose first lines are `#` comments carrying the configuration.
fn csv_with_header<T: Serialize>(path: &Path, config: &T, seed: u64) -> Result<BufWriter<File>> {
    let mut w = create(path)?;
    writeln!(w, "# effect-curve {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "# seed: {seed}")?;
    writeln!(w, "# config: {}", serde_json::to_string(config)?)?;
    Ok(w)
}

fn label(kind: EstimatorKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| format!("{kind:?}"))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn write_plot<T: Serialize>(path: &Path, record: &CurveRecord, config: &T, seed: u64) -> Result<()> {
    let mut w = csv::Writer::from_writer(csv_with_header(path, config, seed)?);
    w.write_record(["t", "estimate", "pw_lo", "pw_hi", "band_lo", "band_hi"])?;
    let est = &record.estimate;
    let inf = record.inference.as_ref();
    for (k, t) in est.outcome_times.iter().enumerate() {
        w.write_record([
            t.to_string(),
            est.estimates[k].to_string(),
            cell(inf.map(|i| i.pointwise_lo[k])),
            cell(inf.map(|i| i.pointwise_hi[k])),
            cell(inf.map(|i| i.band_lo[k])),
            cell(inf.map(|i| i.band_hi[k])),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_weights<T: Serialize>(path: &Path, est: &CurveEstimate, config: &T, seed: u64) -> Result<()> {
    let mut w = csv::Writer::from_writer(csv_with_header(path, config, seed)?);
    w.write_record(["outcome_time", "time", "mean", "max", "truncated_fraction"])?;
    for s in &est.weights {
        w.write_record([
            s.outcome_time.to_string(),
            s.time.to_string(),
            s.mean.to_string(),
            s.max.to_string(),
            s.truncated_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn load_dataset(cfg: &EstimateConfig) -> Result<effect_curve::WideDataset> {
    let file = File::open(&cfg.input).with_context(|| format!("opening {}", cfg.input.display()))?;
    let table = RawTable::read_csv(file).with_context(|| format!("parsing {}", cfg.input.display()))?;
    let ds = validate_wide(&table, &cfg.nodes).with_context(|| format!("validating {}", cfg.input.display()))?;
    for w in ds.warnings() {
        log::warn!("{w}");
    }
    Ok(ds)
}

/// Estimates with intervals when the estimator yields influence values.
fn with_inference(policy: &str, kind: EstimatorKind, estimate: CurveEstimate, opts: &InferenceOptions) -> Result<CurveRecord> {
    let inference = match estimate.influence {
        Some(_) => Some(infer(&estimate, opts).with_context(|| format!("inference for {policy} {}", label(kind)))?),
        None => None,
    };
    Ok(CurveRecord {
        policy: policy.to_string(),
        estimator: kind,
        estimate,
        inference,
    })
}

pub fn estimate(config: &Path, overrides: &Overrides) -> Result<()> {
    let cfg = EstimateConfig::load(config, overrides)?;
    set_threads(cfg.threads);
    let out = output_dir(&cfg.output)?;
    let ds = load_dataset(&cfg)?;
    let seed = cfg.estimator.seed;

    let mut policies = vec![(INTERVENTION, &cfg.policy)];
    if let Some(p) = &cfg.reference_policy {
        policies.push((REFERENCE, p));
    }
    let mut curves = Vec::new();
    let mut timing = Vec::new();
    for &(name, policy) in &policies {
        for &kind in &cfg.estimators {
            let mut est = fit_curve(&ds, policy, kind, &cfg.estimator)
                .with_context(|| format!("estimating {name} curve with {}", label(kind)))?;
            for w in &est.warnings {
                log::warn!("{name} {}: {w}", label(kind));
            }
            timing.push(TimingEntry {
                policy: name.to_string(),
                estimator: kind,
                wall_time_secs: est.wall_time_secs,
            });
            est.wall_time_secs = 0.0;
            curves.push(with_inference(name, kind, est, &cfg.inference)?);
        }
    }

    let mut contrasts = Vec::new();
    if cfg.reference_policy.is_some() {
        for &kind in cfg.estimators.iter().filter(|k| k.is_doubly_robust()) {
            let find = |p: &str| curves.iter().find(|c| c.policy == p && c.estimator == kind).unwrap();
            let diff = difference(&find(INTERVENTION).estimate, &find(REFERENCE).estimate)?;
            contrasts.push(with_inference(CONTRAST, kind, diff, &cfg.inference)?);
        }
    }

    for record in curves.iter().chain(&contrasts) {
        let stem = format!("{}_{}", record.policy, label(record.estimator));
        write_plot(&out.join(format!("plot_{stem}.csv")), record, &cfg, seed)?;
        if !record.estimate.weights.is_empty() {
            write_weights(&out.join(format!("weights_{stem}.csv")), &record.estimate, &cfg, seed)?;
        }
    }
    if !cfg.include_influence {
        for record in curves.iter_mut().chain(contrasts.iter_mut()) {
            record.estimate.influence = None;
        }
    }
    let results = EstimateResults {
        version: env!("CARGO_PKG_VERSION").to_string(),
        dataset: DatasetSummary {
            n_units: ds.n_units(),
            horizon: ds.horizon(),
            warnings: ds.warnings().to_vec(),
        },
        config: cfg,
        curves,
        contrasts,
        timing,
    };
    write_json(&out.join("results.json"), &results)?;
    for record in &results.curves {
        println!(
            "{} {}: {}",
            record.policy,
            label(record.estimator),
            record
                .estimate
                .estimates
                .iter()
                .map(|v| format!("{v:.4}"))
                .collect::<Vec<_>>()
                .join(" ")
        );
    }
    Ok(())
}

fn read_results(path: &Path) -> Result<EstimateResults> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn pick(results: &EstimateResults, kind: EstimatorKind, path: &Path) -> Result<CurveEstimate> {
    let record = results
        .curves
        .iter()
        .find(|c| c.policy == INTERVENTION && c.estimator == kind)
        .with_context(|| format!("{} has no {} curve", path.display(), label(kind)))?;
    if record.estimate.influence.is_none() {
        bail!(
            "{} has no influence values; rerun estimate with include_influence = true",
            path.display()
        );
    }
    Ok(record.estimate.clone())
}

pub fn contrast(a: &Path, b: &Path, estimator: &str, alpha: f64, draws: usize, overrides: &Overrides) -> Result<()> {
    set_threads(overrides.threads);
    let kind: EstimatorKind = serde_json::from_value(serde_json::Value::String(estimator.to_string()))
        .with_context(|| format!("unknown estimator {estimator}"))?;
    let (ra, rb) = (read_results(a)?, read_results(b)?);
    if ra.dataset.n_units != rb.dataset.n_units {
        bail!(
            "mismatched units: {} has {} units, {} has {}",
            a.display(),
            ra.dataset.n_units,
            b.display(),
            rb.dataset.n_units
        );
    }
    if ra.config.input != rb.config.input {
        log::warn!("results were computed from different input files");
    }
    let inference = InferenceOptions {
        alpha,
        draws,
        seed: overrides.seed.unwrap_or(ra.config.inference.seed),
        ..ra.config.inference.clone()
    };
    let diff = difference(&pick(&ra, kind, a)?, &pick(&rb, kind, b)?).context("contrasting curves")?;
    let record = with_inference(CONTRAST, kind, diff, &inference)?;
    if let Some(inf) = &record.inference {
        for w in &inf.warnings {
            eprintln!("warning: {w}");
        }
    }
    let out = output_dir(&overrides.output)?;
    let results = ContrastResults {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: ContrastConfig {
            a: a.to_path_buf(),
            b: b.to_path_buf(),
            estimator: kind,
            inference: inference.clone(),
        },
        contrast: record,
    };
    write_plot(&out.join("plot_contrast.csv"), &results.contrast, &results.config, inference.seed)?;
    write_json(&out.join("contrast.json"), &results)?;
    Ok(())
}

pub fn simulate(config: Option<&Path>, overrides: &Overrides, replications: Option<usize>) -> Result<()> {
    let mut cfg = SimulateConfig::load(config, overrides)?;
    if let Some(r) = replications {
        if r == 0 {
            bail!("replications must be positive");
        }
        cfg.study.replications = r;
    }
    set_threads(cfg.threads);
    let out = output_dir(&cfg.output)?;
    let settings = run_study(&cfg.study)?;
    let seed = cfg.study.seed;
    let mut w = csv_with_header(&out.join("metrics.csv"), &cfg, seed)?;
    write_metrics_csv(&settings, &mut w)?;
    w.flush()?;
    let mut w = csv_with_header(&out.join("coverage.csv"), &cfg, seed)?;
    write_coverage_csv(&settings, &mut w)?;
    w.flush()?;
    write_json(
        &out.join("simulation.json"),
        &SimulateResults {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg,
            settings,
        },
    )?;
    Ok(())
}

pub fn convert(config: &Path, overrides: &Overrides) -> Result<()> {
    let cfg = EstimateConfig::load(config, overrides)?;
    let out = output_dir(&cfg.output)?;
    let ds = load_dataset(&cfg)?;
    let shifted = apply_policy(&ds, &cfg.policy)?;
    let long = to_long(&shifted, cfg.estimator.markov_order)?;
    let mut w = csv::Writer::from_writer(csv_with_header(&out.join("long.csv"), &cfg, cfg.estimator.seed)?);
    let mut header: Vec<String> = [
        "unit",
        "time",
        "treatment",
        "shifted",
        "censoring",
        "measurement",
        "at_risk",
        "next_at_risk",
        "outcome",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(long.history_names.iter().cloned());
    w.write_record(&header)?;
    let num = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
    for r in 0..long.unit.len() {
        let mut row = vec![
            long.unit[r].to_string(),
            long.time[r].to_string(),
            num(long.treatment[r]),
            num(long.shifted[r]),
            num(long.censoring[r]),
            num(long.measurement[r]),
            num(long.at_risk[r]),
            num(long.next_at_risk[r]),
            num(long.outcome[r]),
        ];
        row.extend(long.history.iter().map(|c| num(c[r])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
