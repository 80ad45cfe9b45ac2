//! Wide and long longitudinal data.
//!
//! Times are 1-based throughout the public API. At time `t` a unit has
//! covariates `L_t`, treatment `Z_t`, the indicator `C_t` of remaining in
//! the study at `t + 1`, the indicator `R_t` that `Y_{t+1}` is measured,
//! and the outcome `Y_{t+1}`. `N_t` marks units still at risk.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learners::Design;
use crate::policy::{History, Policy, PolicyError};
use crate::rng;

/// Storage sentinel for an unobserved cell.
pub const MISSING: f64 = f64::NAN;

pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("column `{0}` not found in input table")]
    MissingColumn(String),
    #[error("column `{0}` is assigned to more than one role")]
    DuplicateColumn(String),
    #[error("node specification has no time points")]
    EmptyHorizon,
    #[error("markov order {order} exceeds horizon {horizon}")]
    MarkovOrderTooLarge { order: usize, horizon: usize },
    #[error("time {time} lists {found} covariates, time 1 lists {expected}")]
    CovariateCountMismatch {
        time: usize,
        expected: usize,
        found: usize,
    },
    #[error("treatment support is empty or malformed")]
    InvalidSupport,
    #[error("unit {unit}: `{column}` must be 0 or 1, found {value}")]
    NonBinary {
        unit: usize,
        column: String,
        value: f64,
    },
    #[error("unit {unit}: `{column}` returns to 1 after censoring")]
    NonMonotoneCensoring { unit: usize, column: String },
    #[error("unit {unit}: required value in `{column}` is missing")]
    MissingValue { unit: usize, column: String },
    #[error("unit {unit}: treatment {value} in `{column}` is outside the declared support")]
    TreatmentOutsideSupport {
        unit: usize,
        column: String,
        value: f64,
    },
    #[error("unit {unit}: survival outcome `{column}` is 1 after an event")]
    SurvivalReversal { unit: usize, column: String },
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        line: usize,
        column: String,
        value: String,
    },
    #[error("fold count {folds} must lie in [2, {units}]")]
    InvalidFolds { folds: usize, units: usize },
    #[error("dataset has no policy applied")]
    NoPolicy,
    #[error("unit {unit}, time {time}: {source}")]
    Policy {
        unit: usize,
        time: usize,
        source: PolicyError,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Columnar numeric table with named columns; missing cells hold [`MISSING`].
#[derive(Debug, Clone, Default)]
pub struct RawTable {
    names: Vec<String>,
    index: HashMap<String, usize>,
    columns: Vec<Vec<f64>>,
}

impl RawTable {
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>) -> Result<Self, DataError> {
        let mut table = RawTable::default();
        let expected = columns.first().map_or(0, |c| c.1.len());
        for (name, values) in columns {
            if values.len() != expected {
                return Err(DataError::RaggedRow {
                    row: table.names.len(),
                    expected,
                    found: values.len(),
                });
            }
            if table.index.insert(name.clone(), table.names.len()).is_some() {
                return Err(DataError::DuplicateColumn(name));
            }
            table.names.push(name);
            table.columns.push(values);
        }
        Ok(table)
    }

    /// Reads a headed CSV. Empty cells and `NA`, `NaN`, `.` are missing.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); names.len()];
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != names.len() {
                return Err(DataError::RaggedRow {
                    row,
                    expected: names.len(),
                    found: record.len(),
                });
            }
            for (j, cell) in record.iter().enumerate() {
                let v = match cell {
                    "" | "NA" | "NaN" | "nan" | "." => MISSING,
                    s => s.parse::<f64>().map_err(|_| DataError::Parse {
                        line: row + 2,
                        column: names[j].clone(),
                        value: s.to_string(),
                    })?,
                };
                columns[j].push(v);
            }
        }
        RawTable::from_columns(names.into_iter().zip(columns).collect())
    }

    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&j| self.columns[j].as_slice())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    /// Outcome measured at each time; `N_t ≡ 1`.
    Numeric,
    /// `Y_t = 1` while the event has not occurred; absorbing at 0.
    Survival,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreatmentSupport {
    Categorical { levels: Vec<f64> },
    Continuous { min: f64, max: f64 },
}

impl TreatmentSupport {
    pub fn contains(&self, z: f64) -> bool {
        match self {
            TreatmentSupport::Categorical { levels } => {
                levels.iter().any(|&l| (l - z).abs() <= 1e-9)
            }
            TreatmentSupport::Continuous { min, max } => z >= *min && z <= *max,
        }
    }

    pub fn levels(&self) -> Option<&[f64]> {
        match self {
            TreatmentSupport::Categorical { levels } => Some(levels),
            TreatmentSupport::Continuous { .. } => None,
        }
    }
}

/// Column names for one time point.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TimeNodes {
    #[serde(default)]
    pub covariates: Vec<String>,
    pub treatment: String,
    /// Absent means no censoring at this time.
    #[serde(default)]
    pub censoring: Option<String>,
    /// Absent means the next outcome is always measured.
    #[serde(default)]
    pub measurement: Option<String>,
    /// The outcome at the following time, `Y_{t+1}`.
    pub outcome: String,
}

/// Assignment of table columns to roles.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodeSpec {
    /// Time-invariant covariates included in every history.
    #[serde(default)]
    pub baseline: Vec<String>,
    pub times: Vec<TimeNodes>,
    pub outcome_kind: OutcomeKind,
    pub treatment_support: TreatmentSupport,
    /// Whether `Y_t` enters the history at time `t`.
    #[serde(default = "default_true")]
    pub outcome_in_history: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Baseline(usize),
    Covariate(usize, usize),
    Treatment(usize),
    Censoring(usize),
    Measurement(usize),
    Outcome(usize),
}

impl NodeSpec {
    pub fn horizon(&self) -> usize {
        self.times.len()
    }

    fn roles(&self) -> Result<HashMap<String, Role>, DataError> {
        let mut roles = HashMap::new();
        let mut add = |name: &String, role: Role| {
            if roles.insert(name.clone(), role).is_some() {
                Err(DataError::DuplicateColumn(name.clone()))
            } else {
                Ok(())
            }
        };
        for (j, name) in self.baseline.iter().enumerate() {
            add(name, Role::Baseline(j))?;
        }
        for (t, nodes) in self.times.iter().enumerate() {
            for (j, name) in nodes.covariates.iter().enumerate() {
                add(name, Role::Covariate(t, j))?;
            }
            add(&nodes.treatment, Role::Treatment(t))?;
            if let Some(c) = &nodes.censoring {
                add(c, Role::Censoring(t))?;
            }
            if let Some(r) = &nodes.measurement {
                add(r, Role::Measurement(t))?;
            }
            add(&nodes.outcome, Role::Outcome(t))?;
        }
        Ok(roles)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.times.is_empty() {
            return Err(DataError::EmptyHorizon);
        }
        let expected = self.times[0].covariates.len();
        for (t, nodes) in self.times.iter().enumerate() {
            if nodes.covariates.len() != expected {
                return Err(DataError::CovariateCountMismatch {
                    time: t + 1,
                    expected,
                    found: nodes.covariates.len(),
                });
            }
        }
        match &self.treatment_support {
            TreatmentSupport::Categorical { levels } if levels.is_empty() => {
                return Err(DataError::InvalidSupport)
            }
            TreatmentSupport::Continuous { min, max } if !(min <= max) => {
                return Err(DataError::InvalidSupport)
            }
            _ => {}
        }
        self.roles().map(|_| ())
    }
}

/// Validated wide data, one row per unit.
#[derive(Debug, Clone)]
pub struct WideDataset {
    spec: NodeSpec,
    roles: HashMap<String, Role>,
    n: usize,
    baseline: Vec<Vec<f64>>,
    covariates: Vec<Vec<Vec<f64>>>,
    treatment: Vec<Vec<f64>>,
    censoring: Vec<Vec<f64>>,
    measurement: Vec<Vec<f64>>,
    outcome: Vec<Vec<f64>>,
    at_risk: Vec<Vec<f64>>,
    last_seen: Vec<usize>,
    shifted: Option<Vec<Vec<f64>>>,
    warnings: Vec<String>,
}

fn binary(v: f64, unit: usize, column: &str) -> Result<f64, DataError> {
    if v == 0.0 || v == 1.0 {
        Ok(v)
    } else if is_missing(v) {
        Err(DataError::MissingValue {
            unit,
            column: column.to_string(),
        })
    } else {
        Err(DataError::NonBinary {
            unit,
            column: column.to_string(),
            value: v,
        })
    }
}

/// Checks a table against a node specification and builds the wide dataset.
///
/// Post-censoring cells are overwritten with [`MISSING`]. Outcomes recorded
/// where `R_t = 0` are dropped with a warning.
pub fn validate_wide(table: &RawTable, spec: &NodeSpec) -> Result<WideDataset, DataError> {
    spec.validate()?;
    let roles = spec.roles()?;
    let tau = spec.horizon();
    let n = table.nrows();
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let optional = |name: &Option<String>| -> Result<Option<&[f64]>, DataError> {
        name.as_deref().map(col).transpose()
    };

    let mut baseline = Vec::with_capacity(spec.baseline.len());
    for name in &spec.baseline {
        let values = col(name)?;
        if let Some(unit) = values.iter().position(|v| is_missing(*v)) {
            return Err(DataError::MissingValue {
                unit,
                column: name.clone(),
            });
        }
        baseline.push(values.to_vec());
    }

    let p = spec.times[0].covariates.len();
    let mut covariates = vec![vec![vec![MISSING; n]; p]; tau];
    let mut treatment = vec![vec![MISSING; n]; tau];
    let mut censoring = vec![vec![MISSING; n]; tau];
    let mut measurement = vec![vec![MISSING; n]; tau];
    let mut outcome = vec![vec![MISSING; n]; tau];
    let mut at_risk = vec![vec![MISSING; n]; tau + 1];
    let mut last_seen = vec![tau; n];
    let mut dropped_outcomes = vec![0usize; tau];

    let survival = spec.outcome_kind == OutcomeKind::Survival;
    let mut sources = Vec::with_capacity(tau);
    for nodes in &spec.times {
        let covs = nodes
            .covariates
            .iter()
            .map(|c| col(c))
            .collect::<Result<Vec<_>, _>>()?;
        sources.push((
            covs,
            col(&nodes.treatment)?,
            optional(&nodes.censoring)?,
            optional(&nodes.measurement)?,
            col(&nodes.outcome)?,
        ));
    }

    for i in 0..n {
        let mut censored = false;
        let mut risk = 1.0;
        at_risk[0][i] = 1.0;
        for (t, nodes) in spec.times.iter().enumerate() {
            let (covs, z, c, r, y) = &sources[t];
            if censored {
                if let Some(c) = c {
                    if c[i] == 1.0 {
                        return Err(DataError::NonMonotoneCensoring {
                            unit: i,
                            column: nodes.censoring.clone().unwrap_or_default(),
                        });
                    }
                }
                continue;
            }
            for (j, values) in covs.iter().enumerate() {
                let v = values[i];
                covariates[t][j][i] = if is_missing(v) {
                    if risk == 1.0 {
                        return Err(DataError::MissingValue {
                            unit: i,
                            column: nodes.covariates[j].clone(),
                        });
                    }
                    0.0
                } else {
                    v
                };
            }
            let zi = z[i];
            if is_missing(zi) {
                if risk == 1.0 {
                    return Err(DataError::MissingValue {
                        unit: i,
                        column: nodes.treatment.clone(),
                    });
                }
                treatment[t][i] = spec
                    .treatment_support
                    .levels()
                    .map_or(0.0, |l| l[0]);
            } else if !spec.treatment_support.contains(zi) {
                return Err(DataError::TreatmentOutsideSupport {
                    unit: i,
                    column: nodes.treatment.clone(),
                    value: zi,
                });
            } else {
                treatment[t][i] = zi;
            }
            let ci = match c {
                Some(c) => binary(c[i], i, nodes.censoring.as_deref().unwrap_or_default())?,
                None => 1.0,
            };
            censoring[t][i] = ci;
            if ci == 0.0 {
                censored = true;
                last_seen[i] = t + 1;
                continue;
            }
            let ri = match r {
                Some(r) => binary(r[i], i, nodes.measurement.as_deref().unwrap_or_default())?,
                None => 1.0,
            };
            measurement[t][i] = ri;
            let yi = y[i];
            let yv = if survival && risk == 0.0 {
                if yi == 1.0 {
                    return Err(DataError::SurvivalReversal {
                        unit: i,
                        column: nodes.outcome.clone(),
                    });
                }
                0.0
            } else if ri == 0.0 {
                if !is_missing(yi) {
                    dropped_outcomes[t] += 1;
                }
                if survival {
                    return Err(DataError::MissingValue {
                        unit: i,
                        column: nodes.outcome.clone(),
                    });
                }
                MISSING
            } else if is_missing(yi) {
                return Err(DataError::MissingValue {
                    unit: i,
                    column: nodes.outcome.clone(),
                });
            } else if survival {
                binary(yi, i, &nodes.outcome)?
            } else {
                yi
            };
            outcome[t][i] = yv;
            if survival {
                risk *= yv;
            }
            at_risk[t + 1][i] = risk;
        }
    }

    let mut warnings = Vec::new();
    for (t, &count) in dropped_outcomes.iter().enumerate() {
        if count > 0 {
            let msg = format!(
                "ignored {count} values of `{}` recorded while unmeasured",
                spec.times[t].outcome
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    Ok(WideDataset {
        spec: spec.clone(),
        roles,
        n,
        baseline,
        covariates,
        treatment,
        censoring,
        measurement,
        outcome,
        at_risk,
        last_seen,
        shifted: None,
        warnings,
    })
}

impl WideDataset {
    pub fn spec(&self) -> &NodeSpec {
        &self.spec
    }

    pub fn n_units(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn baseline(&self, j: usize) -> &[f64] {
        &self.baseline[j]
    }

    pub fn covariate(&self, t: usize, j: usize) -> &[f64] {
        &self.covariates[t - 1][j]
    }

    pub fn treatment(&self, t: usize) -> &[f64] {
        &self.treatment[t - 1]
    }

    pub fn censoring(&self, t: usize) -> &[f64] {
        &self.censoring[t - 1]
    }

    pub fn measurement(&self, t: usize) -> &[f64] {
        &self.measurement[t - 1]
    }

    /// `Y_{t+1}`, the outcome recorded after treatment at `t`.
    pub fn outcome_after(&self, t: usize) -> &[f64] {
        &self.outcome[t - 1]
    }

    /// `N_t` for `t` in `1..=τ+1`.
    pub fn at_risk(&self, t: usize) -> &[f64] {
        &self.at_risk[t - 1]
    }

    /// `T_i`, the first time with `C_t = 0`, else `τ`.
    pub fn last_seen(&self) -> &[usize] {
        &self.last_seen
    }

    /// `Z^d_t`, available after [`apply_policy`].
    pub fn shifted(&self, t: usize) -> Option<&[f64]> {
        self.shifted.as_ref().map(|s| s[t - 1].as_slice())
    }

    /// History of `unit` as observed at time `t`.
    pub fn history(&self, unit: usize, t: usize) -> UnitHistory<'_> {
        UnitHistory { ds: self, unit, t }
    }

    /// Mean of the observed `Y_{t+1}` among units with it measured.
    pub fn observed_outcome_mean(&self, t: usize) -> f64 {
        let vals: Vec<f64> = self.outcome[t - 1]
            .iter()
            .copied()
            .filter(|v| !is_missing(*v))
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

pub struct UnitHistory<'a> {
    ds: &'a WideDataset,
    unit: usize,
    t: usize,
}

impl History for UnitHistory<'_> {
    fn lookup(&self, column: &str) -> Option<f64> {
        let ds = self.ds;
        let i = self.unit;
        let v = match *ds.roles.get(column)? {
            Role::Baseline(j) => ds.baseline[j][i],
            Role::Covariate(s, j) if s < self.t => ds.covariates[s][j][i],
            Role::Treatment(s) if s + 1 < self.t => ds.treatment[s][i],
            Role::Censoring(s) if s + 1 < self.t => ds.censoring[s][i],
            Role::Measurement(s) if s + 1 < self.t => ds.measurement[s][i],
            Role::Outcome(s) if s + 1 < self.t => ds.outcome[s][i],
            _ => return None,
        };
        (!is_missing(v)).then_some(v)
    }
}

/// Computes `Z^d_t` for every observed unit-time and checks it lies in the support.
pub fn apply_policy(ds: &WideDataset, policy: &Policy) -> Result<WideDataset, DataError> {
    policy.validate().map_err(|source| DataError::Policy {
        unit: 0,
        time: 0,
        source,
    })?;
    let tau = ds.horizon();
    let mut shifted = vec![vec![MISSING; ds.n]; tau];
    let noise = policy_noise(policy, ds.n, tau);
    for i in 0..ds.n {
        for t in 1..=ds.last_seen[i] {
            let z = ds.treatment[t - 1][i];
            let eps = noise.as_ref().map_or(0.0, |e| e[i][t - 1]);
            let zd = policy
                .apply(z, t, &ds.history(i, t), eps)
                .map_err(|source| DataError::Policy { unit: i, time: t, source })?;
            if !ds.spec.treatment_support.contains(zd) {
                return Err(DataError::Policy {
                    unit: i,
                    time: t,
                    source: PolicyError::OutsideSupport { from: z, to: zd },
                });
            }
            shifted[t - 1][i] = zd;
        }
    }
    let mut out = ds.clone();
    out.shifted = Some(shifted);
    Ok(out)
}

/// One uniform draw per unit and time for stochastic policies.
pub fn policy_noise(policy: &Policy, n: usize, tau: usize) -> Option<Vec<Vec<f64>>> {
    use rand::Rng;
    let s = policy.stochastic.as_ref()?;
    Some(
        (0..n)
            .map(|i| {
                let mut r = rng::stream(s.seed, i as u64);
                (0..tau).map(|_| r.random::<f64>()).collect()
            })
            .collect(),
    )
}

/// Long data: one row per unit and time `t ≤ T_i`, ordered by unit then time.
#[derive(Debug, Clone)]
pub struct LongDataset {
    pub horizon: usize,
    pub markov_order: usize,
    pub n_units: usize,
    pub unit: Vec<usize>,
    pub time: Vec<usize>,
    pub treatment: Vec<f64>,
    pub shifted: Vec<f64>,
    pub censoring: Vec<f64>,
    pub measurement: Vec<f64>,
    /// `N_t`.
    pub at_risk: Vec<f64>,
    /// `N_{t+1}`; missing after censoring.
    pub next_at_risk: Vec<f64>,
    /// `Y_{t+1}`; missing when unmeasured or censored.
    pub outcome: Vec<f64>,
    /// Running target slot used by the recursions.
    pub target: Vec<f64>,
    pub history_names: Vec<String>,
    /// History features, column-major.
    pub history: Vec<Vec<f64>>,
    offsets: Vec<usize>,
    last_seen: Vec<usize>,
}

/// Which treatment value enters a design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreatmentColumn {
    Observed,
    Shifted,
    Omitted,
}

/// Reshapes wide data with `k` lags. Lags reaching before time 1 are zero.
pub fn to_long(ds: &WideDataset, k: usize) -> Result<LongDataset, DataError> {
    let tau = ds.horizon();
    if k > tau {
        return Err(DataError::MarkovOrderTooLarge {
            order: k,
            horizon: tau,
        });
    }
    let shifted_wide = ds.shifted.as_ref().ok_or(DataError::NoPolicy)?;
    let p = ds.spec.times[0].covariates.len();
    let with_y = ds.spec.outcome_in_history;

    let mut names: Vec<String> = ds.spec.baseline.clone();
    for l in 0..=k {
        let lag = if l == 0 {
            "t".to_string()
        } else {
            format!("t-{l}")
        };
        if l > 0 {
            names.push(format!("Z[{lag}]"));
        }
        for j in 0..p {
            names.push(format!("L{}[{lag}]", j + 1));
        }
        if with_y {
            names.push(format!("Y[{lag}]"));
        }
        if l > 0 {
            names.push(format!("C[{lag}]"));
            names.push(format!("R[{lag}]"));
        }
    }

    let rows: usize = ds.last_seen.iter().sum();
    let mut long = LongDataset {
        horizon: tau,
        markov_order: k,
        n_units: ds.n,
        unit: Vec::with_capacity(rows),
        time: Vec::with_capacity(rows),
        treatment: Vec::with_capacity(rows),
        shifted: Vec::with_capacity(rows),
        censoring: Vec::with_capacity(rows),
        measurement: Vec::with_capacity(rows),
        at_risk: Vec::with_capacity(rows),
        next_at_risk: Vec::with_capacity(rows),
        outcome: Vec::with_capacity(rows),
        target: vec![MISSING; rows],
        history: vec![Vec::with_capacity(rows); names.len()],
        history_names: names,
        offsets: Vec::with_capacity(ds.n),
        last_seen: ds.last_seen.clone(),
    };

    let zero_if_missing = |v: f64| if is_missing(v) { 0.0 } else { v };
    let past_outcome = |i: usize, s: usize| -> f64 {
        if s >= 2 {
            zero_if_missing(ds.outcome[s - 2][i])
        } else {
            0.0
        }
    };
    for i in 0..ds.n {
        long.offsets.push(long.unit.len());
        for t in 1..=ds.last_seen[i] {
            long.unit.push(i);
            long.time.push(t);
            long.treatment.push(ds.treatment[t - 1][i]);
            long.shifted.push(shifted_wide[t - 1][i]);
            long.censoring.push(ds.censoring[t - 1][i]);
            long.measurement.push(ds.measurement[t - 1][i]);
            long.at_risk.push(ds.at_risk[t - 1][i]);
            long.next_at_risk.push(ds.at_risk[t][i]);
            long.outcome.push(ds.outcome[t - 1][i]);
            let mut c = 0;
            let mut push = |v: f64| {
                long.history[c].push(v);
                c += 1;
            };
            for b in &ds.baseline {
                push(b[i]);
            }
            for l in 0..=k {
                let present = t > l;
                let s = t.saturating_sub(l);
                if l > 0 {
                    push(if present { ds.treatment[s - 1][i] } else { 0.0 });
                }
                for j in 0..p {
                    push(if present {
                        ds.covariates[s - 1][j][i]
                    } else {
                        0.0
                    });
                }
                if with_y {
                    push(if present { past_outcome(i, s) } else { 0.0 });
                }
                if l > 0 {
                    push(if present { ds.censoring[s - 1][i] } else { 0.0 });
                    push(if present {
                        zero_if_missing(ds.measurement[s - 1][i])
                    } else {
                        0.0
                    });
                }
            }
        }
    }
    Ok(long)
}

impl LongDataset {
    pub fn len(&self) -> usize {
        self.unit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit.is_empty()
    }

    /// Row of `(unit, t)` if the unit is observed at `t`.
    pub fn row(&self, unit: usize, t: usize) -> Option<usize> {
        (t >= 1 && t <= self.last_seen[unit]).then(|| self.offsets[unit] + t - 1)
    }

    pub fn rows_at(&self, t: usize) -> Vec<usize> {
        (0..self.n_units).filter_map(|i| self.row(i, t)).collect()
    }

    /// Design with columns `t`, the chosen treatment, then the history.
    pub fn design(&self, rows: &[usize], treatment: TreatmentColumn) -> Design {
        let mut names = vec!["t".to_string()];
        let mut columns = vec![rows.iter().map(|&r| self.time[r] as f64).collect()];
        let z = match treatment {
            TreatmentColumn::Observed => Some(&self.treatment),
            TreatmentColumn::Shifted => Some(&self.shifted),
            TreatmentColumn::Omitted => None,
        };
        if let Some(z) = z {
            names.push("Z[t]".to_string());
            columns.push(rows.iter().map(|&r| z[r]).collect());
        }
        for (name, col) in self.history_names.iter().zip(&self.history) {
            names.push(name.clone());
            columns.push(rows.iter().map(|&r| col[r]).collect());
        }
        Design::new(names, columns)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["unit", "t", "Z", "Zd", "C", "R", "N", "N_next", "Y_next"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(self.history_names.iter().cloned());
        w.write_record(&header)?;
        let fmt = |v: f64| {
            if is_missing(v) {
                String::new()
            } else {
                v.to_string()
            }
        };
        for r in 0..self.len() {
            let mut rec = vec![
                self.unit[r].to_string(),
                self.time[r].to_string(),
                fmt(self.treatment[r]),
                fmt(self.shifted[r]),
                fmt(self.censoring[r]),
                fmt(self.measurement[r]),
                fmt(self.at_risk[r]),
                fmt(self.next_at_risk[r]),
                fmt(self.outcome[r]),
            ];
            rec.extend(self.history.iter().map(|c| fmt(c[r])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Unit-level assignment to `J` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPartition {
    pub folds: usize,
    pub seed: u64,
    labels: Vec<usize>,
}

impl FoldPartition {
    /// Partition with given labels, each in `0..folds`.
    pub fn from_labels(folds: usize, seed: u64, labels: Vec<usize>) -> Self {
        assert!(labels.iter().all(|&l| l < folds), "label out of range");
        FoldPartition {
            folds,
            seed,
            labels,
        }
    }

    pub fn fold_of(&self, unit: usize) -> usize {
        self.labels[unit]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Random balanced split of `n` units into `folds` groups.
pub fn fold_split(n: usize, folds: usize, seed: u64) -> Result<FoldPartition, DataError> {
    if folds < 2 || folds > n {
        return Err(DataError::InvalidFolds { folds, units: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0xF01D));
    let mut labels = vec![0; n];
    for (pos, &unit) in order.iter().enumerate() {
        labels[unit] = pos % folds;
    }
    Ok(FoldPartition {
        folds,
        seed,
        labels,
    })
}
