//! Linear and logistic regression.

use nalgebra::{DMatrix, DVector};

use super::{clip_probability, expit, logit, Design, LearnerError, Loss, RegressionTask};

const RIDGE: f64 = 1e-6;
const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct GlmModel {
    pub intercept: f64,
    /// One coefficient per design column; zero for constant columns.
    pub coefficients: Vec<f64>,
    pub loss: Loss,
    /// Set when the design was rank deficient and a ridge penalty was added.
    pub ridge: bool,
    pub iterations: usize,
}

struct Standardized {
    z: DMatrix<f64>,
    kept: Vec<usize>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

fn standardize(task: &RegressionTask) -> Standardized {
    let m = task.rows.len() as f64;
    let mut kept = Vec::new();
    let mut means = Vec::new();
    let mut scales = Vec::new();
    for j in 0..task.x.ncols() {
        let col = task.x.column(j);
        let mean = task.rows.iter().map(|&r| col[r]).sum::<f64>() / m;
        let var = task.rows.iter().map(|&r| (col[r] - mean).powi(2)).sum::<f64>() / m;
        if var > 1e-24 * (1.0 + mean * mean) {
            kept.push(j);
            means.push(mean);
            scales.push(var.sqrt());
        }
    }
    let z = DMatrix::from_fn(task.rows.len(), kept.len() + 1, |i, c| {
        if c == 0 {
            1.0
        } else {
            let j = kept[c - 1];
            (task.x.get(task.rows[i], j) - means[c - 1]) / scales[c - 1]
        }
    });
    Standardized {
        z,
        kept,
        means,
        scales,
    }
}

/// Solves `(A + λ D) b = rhs`, `D` the identity without the intercept entry.
fn solve(a: &DMatrix<f64>, rhs: &DVector<f64>, ridge: bool) -> Option<DVector<f64>> {
    let mut a = a.clone();
    if ridge {
        for k in 1..a.nrows() {
            a[(k, k)] += RIDGE;
        }
    }
    a.cholesky().map(|c| c.solve(rhs))
}

fn rank_deficient(gram: &DMatrix<f64>) -> bool {
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    min <= 1e-10 * max.max(1.0)
}

pub(super) fn fit(task: &RegressionTask) -> Result<GlmModel, LearnerError> {
    let s = standardize(task);
    let m = task.rows.len() as f64;
    let y = DVector::from_iterator(task.rows.len(), task.rows.iter().map(|&r| task.y[r]));
    let gram = s.z.transpose() * &s.z / m;
    let mut ridge = rank_deficient(&gram);
    let mut iterations = 0;

    let beta = match task.loss {
        Loss::Squared => {
            let rhs = s.z.transpose() * &y / m;
            match solve(&gram, &rhs, ridge) {
                Some(b) => b,
                None => {
                    ridge = true;
                    solve(&gram, &rhs, true).ok_or_else(|| {
                        LearnerError::InvalidParameter("singular design".into())
                    })?
                }
            }
        }
        Loss::Log => {
            let mut beta = DVector::zeros(s.z.ncols());
            beta[0] = logit(clip_probability(y.mean()));
            while iterations < IRLS_MAX_ITER {
                let eta = &s.z * &beta;
                let p = eta.map(|e| expit(e.clamp(-30.0, 30.0)));
                let grad = s.z.transpose() * (&y - &p) / m;
                if grad.amax() < IRLS_TOL {
                    break;
                }
                let w = p.map(|p| (p * (1.0 - p)).max(1e-12));
                let mut zw = s.z.clone();
                for (i, mut row) in zw.row_iter_mut().enumerate() {
                    row *= w[i];
                }
                let hess = s.z.transpose() * zw / m;
                let step = match solve(&hess, &grad, ridge) {
                    Some(d) => d,
                    None => {
                        ridge = true;
                        solve(&hess, &grad, true).ok_or_else(|| {
                            LearnerError::InvalidParameter("singular information matrix".into())
                        })?
                    }
                };
                beta += step;
                iterations += 1;
            }
            beta
        }
    };

    let mut coefficients = vec![0.0; task.x.ncols()];
    let mut intercept = beta[0];
    for (c, &j) in s.kept.iter().enumerate() {
        coefficients[j] = beta[c + 1] / s.scales[c];
        intercept -= coefficients[j] * s.means[c];
    }
    Ok(GlmModel {
        intercept,
        coefficients,
        loss: task.loss,
        ridge,
        iterations,
    })
}

impl GlmModel {
    pub fn predict_rows(&self, x: &Design, rows: &[usize]) -> Vec<f64> {
        rows.iter()
            .map(|&r| {
                let eta = self.intercept
                    + self
                        .coefficients
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| **c != 0.0)
                        .map(|(j, c)| c * x.get(r, j))
                        .sum::<f64>();
                match self.loss {
                    Loss::Squared => eta,
                    Loss::Log => clip_probability(expit(eta.clamp(-30.0, 30.0))),
                }
            })
            .collect()
    }
}
