//! Convex stacking of learners by cross-validated loss.

use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::{Design, FittedModel, GbtParams, LearnerConfig, LearnerError, Loss, RegressionTask};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<FittedModel>,
    /// Convex weights, one per surviving member.
    pub weights: Vec<f64>,
    /// Cross-validated loss of each surviving member.
    pub member_loss: Vec<f64>,
    /// Indices (into the configured member list) that failed and were dropped.
    pub dropped: Vec<usize>,
}

impl EnsembleModel {
    pub fn predict_rows(&self, x: &Design, rows: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; rows.len()];
        for (m, &w) in self.members.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(m.predict_rows(x, rows)) {
                *o += w * p;
            }
        }
        out
    }
}

/// Fits every member; boosted members differing only in rounds share one fit.
pub(super) fn fit_members(
    members: &[LearnerConfig],
    task: &RegressionTask,
    seed: u64,
) -> Vec<Result<FittedModel, LearnerError>> {
    let mut out: Vec<Option<Result<FittedModel, LearnerError>>> = vec![None; members.len()];
    for i in 0..members.len() {
        if out[i].is_some() {
            continue;
        }
        let LearnerConfig::Gbt(p) = &members[i] else {
            out[i] = Some(members[i].fit(task, seed));
            continue;
        };
        let group: Vec<(usize, usize)> = (i..members.len())
            .filter_map(|k| match &members[k] {
                LearnerConfig::Gbt(q) if out[k].is_none() && p.same_except_rounds(q) => {
                    Some((k, q.rounds))
                }
                _ => None,
            })
            .collect();
        let rounds = group.iter().map(|g| g.1).max().unwrap_or(0);
        let full = LearnerConfig::Gbt(GbtParams { rounds, ..p.clone() }).fit(task, seed);
        for (k, r) in group {
            out[k] = Some(full.clone().map(|m| match m {
                FittedModel::Gbt(g) => FittedModel::Gbt(g.truncated(r)),
                other => other,
            }));
        }
    }
    out.into_iter().map(|r| r.expect("every member fitted")).collect()
}

/// All weight vectors on the simplex with entries in multiples of `1/k`.
fn simplex_grid(m: usize, k: usize) -> Vec<Vec<usize>> {
    if m == 1 {
        return vec![vec![k]];
    }
    let mut out = Vec::new();
    for first in (0..=k).rev() {
        for mut rest in simplex_grid(m - 1, k - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn stacked_loss(weights: &[f64], preds: &[Vec<f64>], y: &[f64], loss: Loss) -> f64 {
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let p: f64 = weights.iter().zip(preds).map(|(w, col)| w * col[i]).sum();
        total += loss.evaluate(yi, p);
    }
    total / y.len() as f64
}

/// Best grid weights; single members win ties.
pub(crate) fn stack_weights(preds: &[Vec<f64>], y: &[f64], loss: Loss, step: f64) -> Vec<f64> {
    let m = preds.len();
    let k = (1.0 / step).round() as usize;
    let mut best_w = vec![0.0; m];
    best_w[0] = 1.0;
    let mut best = f64::INFINITY;
    for j in 0..m {
        let mut w = vec![0.0; m];
        w[j] = 1.0;
        let l = stacked_loss(&w, preds, y, loss);
        if l < best {
            best = l;
            best_w = w;
        }
    }
    for point in simplex_grid(m, k) {
        if point.iter().filter(|&&c| c > 0).count() < 2 {
            continue;
        }
        let w: Vec<f64> = point.iter().map(|&c| c as f64 / k as f64).collect();
        let l = stacked_loss(&w, preds, y, loss);
        if l < best - 1e-12 * (1.0 + best.abs()) {
            best = l;
            best_w = w;
        }
    }
    best_w
}

pub(super) fn fit(
    task: &RegressionTask,
    members: &[LearnerConfig],
    folds: usize,
    step: f64,
    seed: u64,
) -> Result<EnsembleModel, LearnerError> {
    if members.is_empty() {
        return Err(LearnerError::InvalidParameter("ensemble has no members".into()));
    }
    if folds < 2 {
        return Err(LearnerError::InvalidParameter("stacking needs at least 2 folds".into()));
    }
    let k = (1.0 / step).round();
    if !(step > 0.0 && step <= 1.0) || ((1.0 / step) - k).abs() > 1e-9 {
        return Err(LearnerError::InvalidParameter(format!(
            "grid step {step} must divide 1"
        )));
    }

    // Assign groups (units) to stacking folds.
    let group_of = |r: usize| task.groups.map_or(r, |g| g[r]);
    let mut groups: Vec<usize> = task.rows.iter().map(|&r| group_of(r)).collect();
    groups.sort_unstable();
    groups.dedup();
    groups.shuffle(&mut rng::stream(seed, 0x57AC));
    let v = folds.min(groups.len());
    let fold_of: HashMap<usize, usize> =
        groups.iter().enumerate().map(|(p, &g)| (g, p % v)).collect();

    let n = task.rows.len();
    let mut cv = vec![vec![0.0; n]; members.len()];
    let mut failed: Vec<Option<LearnerError>> = vec![None; members.len()];
    if v >= 2 {
        for fold in 0..v {
            let (test_pos, train): (Vec<usize>, Vec<usize>) = {
                let mut test_pos = Vec::new();
                let mut train = Vec::new();
                for (pos, &r) in task.rows.iter().enumerate() {
                    if fold_of[&group_of(r)] == fold {
                        test_pos.push(pos);
                    } else {
                        train.push(r);
                    }
                }
                (test_pos, train)
            };
            let test_rows: Vec<usize> = test_pos.iter().map(|&p| task.rows[p]).collect();
            let sub = task.restrict(&train);
            for (j, fitted) in fit_members(members, &sub, seed).into_iter().enumerate() {
                match fitted {
                    Ok(model) => {
                        for (&p, pred) in test_pos.iter().zip(model.predict_rows(task.x, &test_rows)) {
                            cv[j][p] = pred;
                        }
                    }
                    Err(e) => failed[j] = Some(e),
                }
            }
        }
    }

    let full = fit_members(members, task, seed);
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut errors = Vec::new();
    for (j, fitted) in full.into_iter().enumerate() {
        match (fitted, failed[j].take()) {
            (Ok(model), None) => kept.push((j, model)),
            (Err(e), _) | (Ok(_), Some(e)) => {
                log::warn!("ensemble member {j} failed and was dropped: {e}");
                errors.push(format!("member {j}: {e}"));
                dropped.push(j);
            }
        }
    }
    if kept.is_empty() {
        return Err(LearnerError::AllMembersFailed(errors.join("; ")));
    }

    let y: Vec<f64> = task.rows.iter().map(|&r| task.y[r]).collect();
    let preds: Vec<Vec<f64>> = kept.iter().map(|(j, _)| cv[*j].clone()).collect();
    let member_loss: Vec<f64> = preds
        .iter()
        .map(|p| p.iter().zip(&y).map(|(p, y)| task.loss.evaluate(*y, *p)).sum::<f64>() / n as f64)
        .collect();
    let weights = if v >= 2 {
        stack_weights(&preds, &y, task.loss, step)
    } else {
        let mut w = vec![0.0; kept.len()];
        w[0] = 1.0;
        w
    };
    Ok(EnsembleModel {
        members: kept.into_iter().map(|(_, m)| m).collect(),
        weights,
        member_loss,
        dropped,
    })
}
