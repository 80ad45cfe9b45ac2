//! Saturated learner for discrete predictors.

use std::collections::HashMap;

use super::{clip_probability, Design, Loss, RegressionTask};

#[derive(Debug, Clone, PartialEq)]
pub struct CellMeansModel {
    cells: HashMap<Vec<u64>, f64>,
    fallback: f64,
    loss: Loss,
}

fn key(x: &Design, row: usize) -> Vec<u64> {
    (0..x.ncols()).map(|j| x.get(row, j).to_bits()).collect()
}

pub(super) fn fit(task: &RegressionTask) -> CellMeansModel {
    let mut sums: HashMap<Vec<u64>, (f64, f64)> = HashMap::new();
    for &r in task.rows {
        let e = sums.entry(key(task.x, r)).or_insert((0.0, 0.0));
        e.0 += task.y[r];
        e.1 += 1.0;
    }
    let fallback = task.weighted_mean();
    CellMeansModel {
        cells: sums.into_iter().map(|(k, (s, c))| (k, s / c)).collect(),
        fallback,
        loss: task.loss,
    }
}

impl CellMeansModel {
    pub fn predict_rows(&self, x: &Design, rows: &[usize]) -> Vec<f64> {
        rows.iter()
            .map(|&r| {
                let v = *self.cells.get(&key(x, r)).unwrap_or(&self.fallback);
                match self.loss {
                    Loss::Squared => v,
                    Loss::Log => clip_probability(v),
                }
            })
            .collect()
    }
}
