//! True curves and true nuisance functions of the simulation studies.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{
    binomial_pmf, s1_covariate_p, s1_measurement_p, s1_outcome_p, s1_treatment_p, s2_outcome_p,
    s2_treatment_p, sample_unit, unit_stream, Intervention, S1_BASELINE_LEVELS, TRIALS,
};
use super::{Study, HORIZON};
use crate::data::WideDataset;
use crate::estimators::NuisanceOracle;
use crate::policy::{NoHistory, Policy, PolicyError};
use crate::rng;

const LEVELS: usize = TRIALS as usize + 1;

/// Distribution of `d(A)` given the distribution of the natural value `A`
/// over `0..probs.len()`.
fn push_forward(policy: &Policy, t: usize, probs: &[f64]) -> Result<Vec<f64>, PolicyError> {
    let mut out = vec![0.0; probs.len()];
    for (from, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (to, o) in out.iter_mut().enumerate() {
            let q = policy.transition_probability(from as f64, to as f64, t, &NoHistory)?;
            *o += p * q;
        }
    }
    Ok(out)
}

fn s1_treatment_pmf(t: usize, l: f64, a_prev: f64) -> Vec<f64> {
    let p = s1_treatment_p(t, l, a_prev);
    (0..LEVELS as u64).map(|k| binomial_pmf(k, TRIALS, p)).collect()
}

fn s2_treatment_pmf(alpha: f64, w: f64, x: f64) -> Vec<f64> {
    let p = s2_treatment_p(alpha, w, x);
    vec![1.0 - p, p]
}

/// Exact regressions `m_{t+1,s}(z, l)` of study 1, which depend on the
/// history only through `L_s`.
#[derive(Debug, Clone)]
pub struct Study1Truth {
    /// `[t-1][s-1][z][l]`, `l ∈ 0..=3`.
    m: Vec<Vec<Vec<[f64; 4]>>>,
    curve: Vec<f64>,
}

impl Study1Truth {
    pub fn new(policy: &Policy) -> Result<Self, PolicyError> {
        let mut m = vec![vec![vec![[0.0; 4]; LEVELS]; HORIZON]; HORIZON];
        for t in 1..=HORIZON {
            for z in 0..LEVELS {
                for l in 0..4 {
                    m[t - 1][t - 1][z][l] = s1_outcome_p(z as f64, l as f64);
                }
            }
            for s in (1..t).rev() {
                for z in 0..LEVELS {
                    for l in 0..4 {
                        let p1 = s1_covariate_p(l as f64, z as f64);
                        let mut v = 0.0;
                        for (l_next, pl) in [(0usize, 1.0 - p1), (1usize, p1)] {
                            let q = push_forward(policy, s + 1, &s1_treatment_pmf(s + 1, l_next as f64, z as f64))?;
                            v += pl * q.iter().enumerate().map(|(a, qa)| qa * m[t - 1][s][a][l_next]).sum::<f64>();
                        }
                        m[t - 1][s - 1][z][l] = v;
                    }
                }
            }
        }
        let mut curve = vec![0.0; HORIZON];
        for (t, c) in curve.iter_mut().enumerate() {
            for (l1, pl) in S1_BASELINE_LEVELS {
                let q = push_forward(policy, 1, &s1_treatment_pmf(1, l1, 0.0))?;
                *c += pl * q.iter().enumerate().map(|(a, qa)| qa * m[t][0][a][l1 as usize]).sum::<f64>();
            }
        }
        Ok(Study1Truth { m, curve })
    }

    /// `θ(t+1)` for `t = 1..=τ`.
    pub fn curve(&self) -> &[f64] {
        &self.curve
    }

    pub fn regression(&self, outcome_time: usize, time: usize, z: f64, l: f64) -> f64 {
        self.m[outcome_time - 2][time - 1][z.round() as usize][l.round() as usize]
    }
}

/// Nodes and weights of `n`-point Gauss–Hermite quadrature for `E[f(N(0,1))]`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Study 2 curve by tensor Gauss–Hermite quadrature over `(W, X)`.
pub fn study2_curve(alpha: f64, policy: &Policy) -> Result<Vec<f64>, PolicyError> {
    let (nodes, weights) = gauss_hermite(64);
    let mut curve = vec![0.0; HORIZON];
    for (t, c) in curve.iter_mut().enumerate() {
        for (w, ww) in nodes.iter().zip(&weights) {
            for (x, wx) in nodes.iter().zip(&weights) {
                let q = push_forward(policy, t + 1, &s2_treatment_pmf(alpha, *w, *x))?;
                let v: f64 = q.iter().enumerate().map(|(a, qa)| qa * s2_outcome_p(*w, *x, a as f64)).sum();
                *c += ww * wx * v;
            }
        }
    }
    Ok(curve)
}

/// Exact curve for either study.
pub fn exact_curve(study: Study, alpha: f64, policy: &Policy) -> Result<Vec<f64>, PolicyError> {
    match study {
        Study::Study1 => Ok(Study1Truth::new(policy)?.curve().to_vec()),
        Study::Study2 => study2_curve(alpha, policy),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloTruth {
    pub curve: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub replications: usize,
}

/// Mean outcome over `replications` counterfactual trajectories simulated
/// with the policy applied to each treatment as it is drawn.
pub fn oracle_truth(
    study: Study,
    alpha: f64,
    policy: &Policy,
    replications: usize,
    seed: u64,
) -> Result<MonteCarloTruth, PolicyError> {
    const CHUNK: usize = 10_000;
    let chunks: Vec<(usize, usize)> = (0..replications)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(replications)))
        .collect();
    let partial = chunks
        .par_iter()
        .map(|&(lo, hi)| -> Result<([f64; HORIZON], [f64; HORIZON]), PolicyError> {
            let mut sum = [0.0; HORIZON];
            let mut sq = [0.0; HORIZON];
            for i in lo..hi {
                let mut r = unit_stream(seed, i);
                let mut iv = Intervention {
                    policy,
                    noise: rng::stream(rng::derive_seed(seed, 0x501CE), i as u64),
                };
                let tr = sample_unit(study, alpha, &mut r, Some(&mut iv))?;
                for t in 0..HORIZON {
                    sum[t] += tr.outcome[t];
                    sq[t] += tr.outcome[t] * tr.outcome[t];
                }
            }
            Ok((sum, sq))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let m = replications as f64;
    let mut curve = vec![0.0; HORIZON];
    let mut se = vec![0.0; HORIZON];
    for t in 0..HORIZON {
        let s: f64 = partial.iter().map(|p| p.0[t]).sum();
        let q: f64 = partial.iter().map(|p| p.1[t]).sum();
        let mean = s / m;
        curve[t] = mean;
        se[t] = ((q / m - mean * mean).max(0.0) * m / (m - 1.0) / m).sqrt();
    }
    Ok(MonteCarloTruth {
        curve,
        standard_error: se,
        replications,
    })
}

/// True nuisance functions for a simulated study-1 dataset.
pub struct Study1Oracle {
    truth: Study1Truth,
    policy: Policy,
    alpha: f64,
    /// `[t-1][unit]`.
    covariate: Vec<Vec<f64>>,
    treatment: Vec<Vec<f64>>,
}

impl Study1Oracle {
    pub fn new(ds: &WideDataset, alpha: f64, policy: &Policy) -> Result<Self, PolicyError> {
        Ok(Study1Oracle {
            truth: Study1Truth::new(policy)?,
            policy: policy.clone(),
            alpha,
            covariate: (1..=HORIZON).map(|t| ds.covariate(t, 0).to_vec()).collect(),
            treatment: (1..=HORIZON).map(|t| ds.treatment(t).to_vec()).collect(),
        })
    }
}

impl NuisanceOracle for Study1Oracle {
    fn outcome_regression(&self, unit: usize, outcome_time: usize, time: usize, z: f64) -> Option<f64> {
        Some(self.truth.regression(outcome_time, time, z, self.covariate[time - 1][unit]))
    }

    fn censoring(&self, _unit: usize, _time: usize) -> Option<f64> {
        Some(1.0)
    }

    fn missingness(&self, unit: usize, time: usize) -> Option<f64> {
        Some(s1_measurement_p(self.alpha, self.covariate[time - 1][unit]))
    }

    fn density_ratio(&self, unit: usize, time: usize) -> Option<f64> {
        let a_prev = if time > 1 { self.treatment[time - 2][unit] } else { 0.0 };
        let g = s1_treatment_pmf(time, self.covariate[time - 1][unit], a_prev);
        let gd = push_forward(&self.policy, time, &g).ok()?;
        let z = self.treatment[time - 1][unit].round() as usize;
        Some(if g[z] > 0.0 { gd[z] / g[z] } else { 0.0 })
    }
}

/// True nuisance functions for a simulated study-2 dataset.
pub struct Study2Oracle {
    policy: Policy,
    alpha: f64,
    w: Vec<f64>,
    x: Vec<f64>,
    treatment: Vec<Vec<f64>>,
}

impl Study2Oracle {
    pub fn new(ds: &WideDataset, alpha: f64, policy: &Policy) -> Self {
        Study2Oracle {
            policy: policy.clone(),
            alpha,
            w: ds.baseline(0).to_vec(),
            x: ds.baseline(1).to_vec(),
            treatment: (1..=HORIZON).map(|t| ds.treatment(t).to_vec()).collect(),
        }
    }
}

impl NuisanceOracle for Study2Oracle {
    fn outcome_regression(&self, unit: usize, outcome_time: usize, time: usize, z: f64) -> Option<f64> {
        let (w, x) = (self.w[unit], self.x[unit]);
        let t = outcome_time - 1;
        if time == t {
            return Some(s2_outcome_p(w, x, z));
        }
        // The outcome depends on the past only through (W, X) and A_t.
        let q = push_forward(&self.policy, t, &s2_treatment_pmf(self.alpha, w, x)).ok()?;
        Some(q[0] * s2_outcome_p(w, x, 0.0) + q[1] * s2_outcome_p(w, x, 1.0))
    }

    fn censoring(&self, _unit: usize, _time: usize) -> Option<f64> {
        Some(1.0)
    }

    fn missingness(&self, _unit: usize, _time: usize) -> Option<f64> {
        Some(1.0)
    }

    fn density_ratio(&self, unit: usize, time: usize) -> Option<f64> {
        let g = s2_treatment_pmf(self.alpha, self.w[unit], self.x[unit]);
        let gd = push_forward(&self.policy, time, &g).ok()?;
        let z = self.treatment[time - 1][unit].round() as usize;
        Some(if g[z] > 0.0 { gd[z] / g[z] } else { 0.0 })
    }
}

/// Oracle with the outcome regressions and/or the density ratio replaced
/// by constants.
pub struct Corrupted<O> {
    pub inner: O,
    pub outcome: Option<f64>,
    pub ratio: Option<f64>,
}

impl<O: NuisanceOracle> NuisanceOracle for Corrupted<O> {
    fn outcome_regression(&self, unit: usize, outcome_time: usize, time: usize, z: f64) -> Option<f64> {
        self.outcome
            .or_else(|| self.inner.outcome_regression(unit, outcome_time, time, z))
    }

    fn censoring(&self, unit: usize, time: usize) -> Option<f64> {
        self.inner.censoring(unit, time)
    }

    fn missingness(&self, unit: usize, time: usize) -> Option<f64> {
        self.inner.missingness(unit, time)
    }

    fn density_ratio(&self, unit: usize, time: usize) -> Option<f64> {
        self.ratio.or_else(|| self.inner.density_ratio(unit, time))
    }
}

/// The true nuisances of `study` for dataset `ds`.
pub fn study_oracle(
    study: Study,
    ds: &WideDataset,
    alpha: f64,
    policy: &Policy,
) -> Result<Box<dyn NuisanceOracle>, PolicyError> {
    Ok(match study {
        Study::Study1 => Box::new(Study1Oracle::new(ds, alpha, policy)?),
        Study::Study2 => Box::new(Study2Oracle::new(ds, alpha, policy)),
    })
}
