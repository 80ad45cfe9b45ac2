//! Out-of-fold fitting over a unit-level fold partition.

use super::{Design, FittedModel, LearnerConfig, LearnerError, RegressionTask};
use crate::data::FoldPartition;
use crate::rng;
use rayon::prelude::*;

/// One model per fold, each trained without that fold's units.
#[derive(Debug, Clone)]
pub struct CrossFitModel {
    models: Vec<FittedModel>,
    labels: Vec<usize>,
}

impl CrossFitModel {
    pub fn model(&self, fold: usize) -> &FittedModel {
        &self.models[fold]
    }

    pub fn folds(&self) -> usize {
        self.models.len()
    }

    /// Predicts each design row with the model of its unit's fold.
    pub fn predict(&self, x: &Design, units: &[usize]) -> Vec<f64> {
        assert_eq!(x.nrows(), units.len());
        let mut by_fold = vec![Vec::new(); self.models.len()];
        for (r, &u) in units.iter().enumerate() {
            by_fold[self.labels[u]].push(r);
        }
        let mut out = vec![0.0; units.len()];
        for (fold, rows) in by_fold.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            for (&r, p) in rows.iter().zip(self.models[fold].predict_rows(x, rows)) {
                out[r] = p;
            }
        }
        out
    }
}

/// Cross-fits `learner` on `task` and returns out-of-fold predictions for
/// every design row, not only the training subset.
pub fn crossfit(
    task: &RegressionTask,
    units: &[usize],
    partition: &FoldPartition,
    learner: &LearnerConfig,
    seed: u64,
) -> Result<(CrossFitModel, Vec<f64>), LearnerError> {
    assert_eq!(task.x.nrows(), units.len());
    let task = task.with_groups(units);
    let models = (0..partition.folds)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<usize> = task
                .rows
                .iter()
                .copied()
                .filter(|&r| partition.fold_of(units[r]) != fold)
                .collect();
            if train.is_empty() {
                return Err(LearnerError::EmptyFold { fold });
            }
            learner.fit(&task.restrict(&train), rng::derive_seed(seed, fold as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let model = CrossFitModel {
        models,
        labels: partition.labels().to_vec(),
    };
    let oof = model.predict(task.x, units);
    Ok((model, oof))
}
