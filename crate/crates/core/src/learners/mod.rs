//! Regression learners, stacking, and cross-fitting.

mod cellmeans;
pub mod crossfit;
pub mod ensemble;
pub mod gbt;
pub mod glm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cellmeans::CellMeansModel;
pub use crossfit::{crossfit, CrossFitModel};
pub use ensemble::EnsembleModel;
pub use gbt::{GbtModel, GbtParams};
pub use glm::GlmModel;

/// Bounds applied to every probability a log-loss learner emits.
pub const PROB_CLIP: f64 = 1e-6;

pub fn clip_probability(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

pub(crate) fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LearnerError {
    #[error("training subset is empty")]
    EmptyTraining,
    #[error("non-finite {what} at row {row}")]
    NonFinite { what: &'static str, row: usize },
    #[error("log-loss outcome {value} at row {row} is outside [0, 1]")]
    OutcomeOutOfRange { row: usize, value: f64 },
    #[error("invalid learner parameter: {0}")]
    InvalidParameter(String),
    #[error("every ensemble member failed: {0}")]
    AllMembersFailed(String),
    #[error("fold {fold} leaves no training rows")]
    EmptyFold { fold: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Squared,
    Log,
}

impl Loss {
    pub fn evaluate(self, y: f64, pred: f64) -> f64 {
        match self {
            Loss::Squared => (y - pred).powi(2),
            Loss::Log => {
                let p = clip_probability(pred);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            }
        }
    }
}

/// Numeric design matrix stored by column.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    nrows: usize,
}

impl Design {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Self {
        assert_eq!(names.len(), columns.len(), "one name per column");
        let nrows = columns.first().map_or(0, Vec::len);
        assert!(columns.iter().all(|c| c.len() == nrows), "ragged design");
        Design {
            names,
            columns,
            nrows,
        }
    }

    /// Unnamed design from row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let p = rows.first().map_or(0, Vec::len);
        let columns = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Design::new((0..p).map(|j| format!("x{j}")).collect(), columns)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.columns[j]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    /// Stacks `other` below `self`; column names must agree.
    pub fn vstack(&self, other: &Design) -> Design {
        assert_eq!(self.names, other.names);
        let columns = self
            .columns
            .iter()
            .zip(&other.columns)
            .map(|(a, b)| a.iter().chain(b).copied().collect())
            .collect();
        Design::new(self.names.clone(), columns)
    }
}

/// Outcome `y` regressed on `x`, restricted to `rows`.
#[derive(Debug, Clone, Copy)]
pub struct RegressionTask<'a> {
    pub x: &'a Design,
    pub y: &'a [f64],
    pub rows: &'a [usize],
    /// Group label per design row; stacking keeps groups within one fold.
    pub groups: Option<&'a [usize]>,
    pub loss: Loss,
}

impl<'a> RegressionTask<'a> {
    pub fn new(x: &'a Design, y: &'a [f64], rows: &'a [usize], loss: Loss) -> Self {
        RegressionTask {
            x,
            y,
            rows,
            groups: None,
            loss,
        }
    }

    pub fn with_groups(mut self, groups: &'a [usize]) -> Self {
        self.groups = Some(groups);
        self
    }

    /// Same task on a different row subset.
    pub fn restrict(&self, rows: &'a [usize]) -> Self {
        RegressionTask { rows, ..*self }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if self.rows.is_empty() {
            return Err(LearnerError::EmptyTraining);
        }
        for &r in self.rows {
            let y = self.y[r];
            if !y.is_finite() {
                return Err(LearnerError::NonFinite {
                    what: "outcome",
                    row: r,
                });
            }
            if self.loss == Loss::Log && !(0.0..=1.0).contains(&y) {
                return Err(LearnerError::OutcomeOutOfRange { row: r, value: y });
            }
            for j in 0..self.x.ncols() {
                if !self.x.get(r, j).is_finite() {
                    return Err(LearnerError::NonFinite {
                        what: "predictor",
                        row: r,
                    });
                }
            }
        }
        Ok(())
    }

    fn weighted_mean(&self) -> f64 {
        self.rows.iter().map(|&r| self.y[r]).sum::<f64>() / self.rows.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerConfig {
    /// Training mean.
    Mean,
    /// Linear or logistic regression, chosen by the loss.
    Glm,
    Gbt(GbtParams),
    /// Mean within each distinct predictor vector.
    CellMeans,
    /// Convex stack of members chosen by cross-validated loss.
    Ensemble {
        members: Vec<LearnerConfig>,
        #[serde(default = "default_stack_folds")]
        folds: usize,
        #[serde(default = "default_grid_step")]
        grid_step: f64,
    },
}

fn default_stack_folds() -> usize {
    3
}

fn default_grid_step() -> f64 {
    0.05
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig::default_ensemble()
    }
}

impl LearnerConfig {
    pub fn gbt(rounds: usize) -> Self {
        LearnerConfig::Gbt(GbtParams {
            rounds,
            ..GbtParams::default()
        })
    }

    /// Boosted trees with 25, 50 and 100 rounds.
    pub fn default_ensemble() -> Self {
        LearnerConfig::Ensemble {
            members: vec![
                LearnerConfig::gbt(25),
                LearnerConfig::gbt(50),
                LearnerConfig::gbt(100),
            ],
            folds: default_stack_folds(),
            grid_step: default_grid_step(),
        }
    }

    /// The default ensemble plus a GLM.
    pub fn application_ensemble() -> Self {
        match LearnerConfig::default_ensemble() {
            LearnerConfig::Ensemble {
                mut members,
                folds,
                grid_step,
            } => {
                members.push(LearnerConfig::Glm);
                LearnerConfig::Ensemble {
                    members,
                    folds,
                    grid_step,
                }
            }
            _ => unreachable!(),
        }
    }

    pub fn fit(&self, task: &RegressionTask, seed: u64) -> Result<FittedModel, LearnerError> {
        task.validate()?;
        let first = task.y[task.rows[0]];
        if task.rows.iter().all(|&r| task.y[r] == first) {
            return Ok(FittedModel::constant(first, task.loss));
        }
        self.fit_unchecked(task, seed)
    }

    fn fit_unchecked(&self, task: &RegressionTask, seed: u64) -> Result<FittedModel, LearnerError> {
        match self {
            LearnerConfig::Mean => Ok(FittedModel::constant(task.weighted_mean(), task.loss)),
            LearnerConfig::Glm => glm::fit(task).map(FittedModel::Glm),
            LearnerConfig::Gbt(params) => gbt::fit(task, params).map(FittedModel::Gbt),
            LearnerConfig::CellMeans => Ok(FittedModel::CellMeans(cellmeans::fit(task))),
            LearnerConfig::Ensemble {
                members,
                folds,
                grid_step,
            } => ensemble::fit(task, members, *folds, *grid_step, seed).map(FittedModel::Ensemble),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Constant { value: f64 },
    Glm(GlmModel),
    Gbt(GbtModel),
    CellMeans(CellMeansModel),
    Ensemble(EnsembleModel),
}

impl FittedModel {
    pub fn constant(value: f64, loss: Loss) -> Self {
        let value = match loss {
            Loss::Squared => value,
            Loss::Log => clip_probability(value),
        };
        FittedModel::Constant { value }
    }

    pub fn predict(&self, x: &Design) -> Vec<f64> {
        let rows: Vec<usize> = (0..x.nrows()).collect();
        self.predict_rows(x, &rows)
    }

    pub fn predict_rows(&self, x: &Design, rows: &[usize]) -> Vec<f64> {
        match self {
            FittedModel::Constant { value } => vec![*value; rows.len()],
            FittedModel::Glm(m) => m.predict_rows(x, rows),
            FittedModel::Gbt(m) => m.predict_rows(x, rows),
            FittedModel::CellMeans(m) => m.predict_rows(x, rows),
            FittedModel::Ensemble(m) => m.predict_rows(x, rows),
        }
    }
}
